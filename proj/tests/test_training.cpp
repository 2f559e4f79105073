#include <doctest.h>

#include <cmath>
#include <cstring>

#include "passorder/baselines.hpp"
#include "passorder/errors.hpp"
#include "passorder/search.hpp"
#include "passorder/simulator.hpp"
#include "passorder/training.hpp"
#include "support.hpp"

using namespace passorder;
using testsupport::default_geometry;
using testsupport::make_vehicle;
using testsupport::random_scenario;

namespace {

NetDims toy_dims(int d = 8) {
    NetDims n;
    n.d_emb = d;
    n.d = d;
    n.fc1 = 12;
    n.fc2 = 6;
    return n;
}

std::string digest(const std::vector<ParamView>& views) {
    const Eigen::VectorXd f = flatten(views);
    return hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(f.data()), static_cast<std::size_t>(f.size()) * 8)));
}

std::vector<const Scenario*> pointers(const std::vector<Scenario>& v) {
    std::vector<const Scenario*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
}

}  // namespace

TEST_CASE("adam matches the hand-computed recurrence") {
    Eigen::VectorXd w(2);
    w << 1.0, -2.0;
    Eigen::VectorXd g(2);
    std::vector<ParamView> pv{{"w", w.data(), 2, 1}};
    std::vector<ParamView> gv{{"w", g.data(), 2, 1}};
    AdamState st;
    const double expect[3][2] = {{0.9900000002, -1.9900000001},
                                 {0.9819695906384652, -1.9857215142429225},
                                 {0.9785260531835489, -1.982723904346466}};
    const double grads[3][2] = {{0.5, -1.0}, {0.1, 0.3}, {-0.2, 0.05}};
    for (int t = 0; t < 3; ++t) {
        g << grads[t][0], grads[t][1];
        adam_step(pv, gv, st, 0.01);
        CHECK(std::abs(w[0] - expect[t][0]) <= 1e-12);
        CHECK(std::abs(w[1] - expect[t][1]) <= 1e-12);
    }
    CHECK(st.t == 3);
}

TEST_CASE("learning-rate schedule") {
    LrSchedule s;
    CHECK(learning_rate(1, s) == 1e-3);
    CHECK(learning_rate(10000, s) == 1e-3);
    CHECK(learning_rate(10999, s) == 1e-3);
    CHECK(std::abs(learning_rate(11000, s) - 1e-3 * 0.98) <= 1e-18);
    CHECK(std::abs(learning_rate(12000, s) - 1e-3 * 0.98 * 0.98) <= 1e-18);
    CHECK(std::abs(learning_rate(12999, s) - 1e-3 * 0.98 * 0.98) <= 1e-18);
}

TEST_CASE("global norm clipping") {
    Eigen::VectorXd a(2), b(1);
    a << 3.0, 0.0;
    b << 4.0;
    std::vector<ParamView> v{{"a", a.data(), 2, 1}, {"b", b.data(), 1, 1}};
    CHECK(clip_global_norm(v, 2.0) == 5.0);
    CHECK(std::abs(std::sqrt(a.squaredNorm() + b.squaredNorm()) - 2.0) < 1e-15);
    CHECK(clip_global_norm(v, 10.0) == doctest::Approx(2.0));
}

TEST_CASE("non-finite gradients are reported by group") {
    Eigen::VectorXd a(2);
    a << 1.0, std::nan("");
    std::vector<ParamView> v{{"policy.att_v", a.data(), 2, 1}};
    try {
        require_finite(v, "step 3");
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("policy.att_v") != std::string::npos);
    }

    Rng rng(1);
    TrainState st;
    st.nets = init_params(toy_dims(), rng);
    st.nets.critic.fc3_b[0] = std::nan("");
    std::vector<Scenario> batch{random_scenario(default_geometry(), 4, rng)};
    CHECK_THROWS_AS(train_step(st, pointers(batch), TrainConfig{}), NumericError);
}

TEST_CASE("zero advantage leaves the policy untouched") {
    const auto& g = default_geometry();
    // two vehicles that never interact: every order costs 0
    Scenario s(g, {make_vehicle(*g, 1, g->lane_id(0, 2), Steering::right, 30.0),
                   make_vehicle(*g, 2, g->lane_id(2, 2), Steering::right, 40.0)});
    Rng rng(2);
    TrainState st;
    st.nets = init_params(toy_dims(), rng);
    st.nets.critic.fc3_W.setZero();
    st.nets.critic.fc3_b.setZero();
    const auto before = flatten(st.nets.policy.views());
    std::vector<Scenario> batch{s, s, s};
    const auto stats = train_step(st, pointers(batch), TrainConfig{});
    CHECK(stats.mean_abs_advantage == 0.0);
    CHECK(flatten(st.nets.policy.views()) == before);
}

TEST_CASE("one training step reproduces the recorded transcript") {
    Rng rng(2024);
    std::vector<Scenario> batch;
    for (int k = 0; k < 4; ++k) batch.push_back(random_scenario(default_geometry(), 5, rng, 0, 80.0));
    Rng init(7);
    TrainState st;
    st.nets = init_params(toy_dims(), init);
    TrainConfig cfg;
    cfg.seed = 42;
    const auto p = pointers(batch);
    const auto s1 = train_step(st, p, cfg);
    CHECK(s1.mean_J == 0x1.fbdcec146d58ep+8);
    CHECK(s1.mean_abs_advantage == 0x1.fbb8b4f5452dcp+8);
    CHECK(s1.enforceable_frac == 0.5);
    CHECK(s1.critic_mse == 0x1.ec92f7b498f7ap+18);
    CHECK(s1.lr == 1e-3);
    CHECK(digest(st.nets.policy.views()) == "b5b24d0422ba5d44");
    CHECK(digest(st.nets.critic.views()) == "47aea6fb97f187fc");
    const auto s2 = train_step(st, p, cfg);
    CHECK(s2.mean_J == 0x1.7afda550cde63p+9);
    CHECK(digest(st.nets.policy.views()) == "a44b5428038b7014");
    CHECK(digest(st.nets.critic.views()) == "a100e3619cd98573");
}

TEST_CASE("worker count changes only the reduction grouping") {
    Rng rng(3);
    std::vector<Scenario> batch;
    for (int k = 0; k < 8; ++k) batch.push_back(random_scenario(default_geometry(), 6, rng));
    Rng init(4);
    const auto nets = init_params(toy_dims(), init);
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.jobs = 3;
    TrainState a{nets, {}, {}, 0, 0}, b{nets, {}, {}, 0, 0}, c{nets, {}, {}, 0, 0};
    const auto sa = train_step(a, pointers(batch), cfg);
    const auto sb = train_step(b, pointers(batch), cfg);
    CHECK(digest(a.nets.policy.views()) == digest(b.nets.policy.views()));
    CHECK(sa.mean_J == sb.mean_J);
    cfg.jobs = 1;
    const auto sc = train_step(c, pointers(batch), cfg);
    // same samples, so the same objective values
    CHECK(sc.mean_J == sa.mean_J);
    CHECK((flatten(c.nets.policy.views()) - flatten(a.nets.policy.views())).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("critic regression error falls monotonically over the first steps") {
    Rng rng(5);
    std::vector<Scenario> data;
    std::vector<double> target;
    for (int k = 0; k < 16; ++k) {
        data.push_back(random_scenario(default_geometry(), 6, rng, 0, 60.0));
        target.push_back(evaluate_objective(fifo_order(data.back()), data.back()));
    }
    Rng init(6);
    auto nets = init_params(toy_dims(), init);
    AdamState opt;
    auto mse = [&] {
        double e = 0.0;
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double d = critic_value(nets.critic, data[k]) - target[k];
            e += d * d;
        }
        return e / static_cast<double>(data.size());
    };
    double last = mse();
    for (int step = 0; step < 10; ++step) {
        CriticParams grad = CriticParams::zeros(nets.dims);
        for (std::size_t k = 0; k < data.size(); ++k) {
            const auto gk = grad_critic(nets.critic, data[k], target[k]);
            auto dst = grad.views();
            const auto src = gk.views();
            for (std::size_t v = 0; v < dst.size(); ++v) {
                Eigen::Map<Eigen::VectorXd>(dst[v].data, dst[v].size()) +=
                    Eigen::Map<const Eigen::VectorXd>(src[v].data, src[v].size()) / 16.0;
            }
        }
        adam_step(nets.critic.views(), grad.views(), opt, 1e-4);
        const double now = mse();
        CHECK(now < last);
        last = now;
    }
}

TEST_CASE("dataset json round trip") {
    DatasetSpec spec;
    spec.demand = DemandConfig::homogeneous(0);
    spec.n_vehicles = 4;
    spec.count = 10;
    spec.seed = 9;
    const auto geo = default_geometry();
    const Dataset d = sample_dataset(geo, spec);
    REQUIRE(d.instances.size() == 10);
    for (const auto& s : d.instances) CHECK(s.size() == 4);
    const Dataset back = dataset_from_json(json::parse(dataset_to_json(d).dump()));
    CHECK(back.n_vehicles == 4);
    REQUIRE(back.instances.size() == d.instances.size());
    for (std::size_t k = 0; k < d.instances.size(); ++k) CHECK(back.instances[k] == d.instances[k]);
    CHECK(back.provenance == d.provenance);
    CHECK(dataset_to_json(sample_dataset(geo, spec)) == dataset_to_json(d));

    auto j = dataset_to_json(d);
    j["n_vehicles"] = 5;
    CHECK_THROWS_AS(dataset_from_json(j), ConfigError);
}

TEST_CASE("checkpoint round trip is bit exact and corruption is caught") {
    Rng rng(10);
    Checkpoint c;
    c.state.nets = init_params(toy_dims(), rng);
    c.state.nets.dims.value_scale = 25.0;
    c.state.iteration = 17;
    c.state.epoch = 2;
    c.meta = {{"geometry", "default"}, {"n_vehicles", 8}};
    std::vector<Scenario> batch{random_scenario(default_geometry(), 5, rng)};
    train_step(c.state, pointers(batch), TrainConfig{});
    const std::string bytes = encode_checkpoint(c);
    CHECK(bytes.substr(0, 8) == "PORDCKPT");
    const Checkpoint d = decode_checkpoint(bytes);
    CHECK(d.state.nets.dims == c.state.nets.dims);
    CHECK(flatten(d.state.nets.policy.views()) == flatten(c.state.nets.policy.views()));
    CHECK(flatten(d.state.nets.critic.views()) == flatten(c.state.nets.critic.views()));
    CHECK(d.state.policy_opt == c.state.policy_opt);
    CHECK(d.state.critic_opt == c.state.critic_opt);
    CHECK(d.state.iteration == 18);
    CHECK(d.state.epoch == 2);
    CHECK(d.meta == c.meta);
    CHECK(encode_checkpoint(d) == bytes);

    std::string bad = bytes;
    bad[bad.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(magic), IoError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 40)), IoError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
    DatasetSpec spec;
    spec.demand = DemandConfig::homogeneous(0);
    spec.n_vehicles = 5;
    spec.count = 96;
    spec.seed = 11;
    const Dataset data = sample_dataset(default_geometry(), spec);
    Rng rng(12);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 3;
    cfg.seed = 13;
    cfg.eval_instances = 20;
    TrainState whole;
    whole.nets = init_params(toy_dims(), rng);
    TrainState half = whole;
    train(data, whole, cfg);

    TrainConfig first = cfg;
    first.epochs = 1;
    std::vector<EpochStats> hist = train(data, half, first);
    TrainState resumed = decode_checkpoint(encode_checkpoint({half, {}})).state;
    train(data, resumed, cfg, {}, hist);
    CHECK(resumed.iteration == whole.iteration);
    CHECK(resumed.epoch == 3);
    CHECK(flatten(resumed.nets.policy.views()) == flatten(whole.nets.policy.views()));
    CHECK(flatten(resumed.nets.critic.views()) == flatten(whole.nets.critic.views()));
    CHECK(resumed.policy_opt == whole.policy_opt);
}

TEST_CASE("plateau rule") {
    std::vector<EpochStats> h;
    for (int k = 0; k < 5; ++k) h.push_back({k + 1, 0, 10.0 - k, 1.0, 1e-3});
    CHECK_FALSE(plateaued(h, 5, 1e-3));  // not enough history
    h.push_back({6, 0, 5.0, 1.0, 1e-3});
    CHECK_FALSE(plateaued(h, 5, 1e-3));
    std::vector<EpochStats> flat(7, EpochStats{0, 0, 3.0, 1.0, 1e-3});
    CHECK(plateaued(flat, 5, 1e-3));
}

TEST_CASE("training stops early once the curve is flat") {
    const auto& g = default_geometry();
    Dataset d;
    d.n_vehicles = 2;
    Scenario s(g, {make_vehicle(*g, 1, g->lane_id(0, 2), Steering::right, 30.0),
                   make_vehicle(*g, 2, g->lane_id(2, 2), Steering::right, 40.0)});
    d.instances.assign(8, s);
    Rng rng(14);
    TrainState st;
    st.nets = init_params(toy_dims(), rng);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 50;
    const auto ran = train(d, st, cfg);
    CHECK(ran.size() == 6);  // J is always 0: flat from the start
}

TEST_CASE("transfer surgery") {
    Rng rng(15);
    NetDims dims = toy_dims();
    const auto nets = init_params(dims, rng);
    const auto same = transfer_init(nets, *default_geometry(), rng);
    CHECK(flatten(same.policy.views()) == flatten(nets.policy.views()));
    CHECK(flatten(same.critic.views()) == flatten(nets.critic.views()));

    const auto asym = build_geometry(GeometryConfig::asymmetric_desk());
    const auto moved = transfer_init(nets, *asym, rng);
    CHECK(moved.dims.critic_in == 69);
    CHECK(moved.critic.embed_W.rows() == dims.d_emb);
    CHECK(moved.critic.embed_W.cols() == 69);
    CHECK(flatten(moved.policy.views()) == flatten(nets.policy.views()));
    const auto a = moved.critic.views();
    const auto b = nets.critic.views();
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].name == "critic.embed.W") continue;
        REQUIRE(a[k].size() == b[k].size());
        CHECK(std::memcmp(a[k].data, b[k].data, static_cast<std::size_t>(a[k].size()) * sizeof(double)) == 0);
    }
    // and the moved critic runs on the new geometry
    Rng r2(16);
    auto s = random_scenario(asym, 5, r2);
    CHECK(std::isfinite(critic_value(moved.critic, s)));

    Networks wide = nets;
    wide.dims.pointer_in = 30;
    CHECK_THROWS_AS(transfer_init(wide, *asym, rng), RefusalError);
    GeometryConfig big = GeometryConfig::symmetric(4);
    CHECK_THROWS_AS(transfer_init(nets, *build_geometry(big), rng), RefusalError);
}

TEST_CASE("fine-tuning toward searched orders") {
    Rng rng(17);
    auto nets = init_params(toy_dims(16), rng);
    std::vector<FineTunePair> pairs;
    MctsConfig mcfg;
    mcfg.iterations = 100;
    for (int k = 0; k < 32; ++k) {
        auto s = random_scenario(default_geometry(), 6, rng, 0, 60.0);
        const auto r = mcts_search(s, fifo_order(s), mcfg, static_cast<std::uint64_t>(k));
        pairs.push_back({s, r.order});
    }
    auto greedy_mean = [&](const PolicyParams& p) {
        double sum = 0.0;
        for (const auto& pr : pairs) sum += evaluate_objective(decode_order(p, pr.scenario, DecodeMode::greedy).order, pr.scenario);
        return sum / static_cast<double>(pairs.size());
    };
    const double before = greedy_mean(nets.policy);
    FineTuneConfig cfg;
    cfg.lr = 1e-3;
    const auto losses = fine_tune_from_search(nets.policy, pairs, cfg);
    REQUIRE(losses.size() == 20);
    for (std::size_t k = 1; k < losses.size(); ++k) CHECK(losses[k] < losses[k - 1]);
    CHECK(greedy_mean(nets.policy) <= before);
}

TEST_CASE("fine-tuning on confident greedy orders barely moves") {
    Rng rng(18);
    auto nets = init_params(toy_dims(), rng);
    nets.policy.att_v *= 1e5;  // near-deterministic policy
    std::vector<FineTunePair> pairs;
    for (int k = 0; k < 8; ++k) {
        auto s = random_scenario(default_geometry(), 4, rng);
        pairs.push_back({s, decode_order(nets.policy, s, DecodeMode::greedy).order});
    }
    CHECK(imitation_loss(nets.policy, pairs) < 1e-3);
    PolicyParams before = nets.policy;
    FineTuneConfig cfg;
    cfg.steps = 1;
    cfg.batch_size = 8;
    fine_tune_from_search(nets.policy, pairs, cfg);
    // Adam normalizes step size, so check the loss rather than the weights
    CHECK(imitation_loss(nets.policy, pairs) < 1e-3);
    CHECK((flatten(nets.policy.views()) - flatten(before.views())).cwiseAbs().maxCoeff() <= 1.1e-4);
}
