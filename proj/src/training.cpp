#include "passorder/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "passorder/errors.hpp"
#include "passorder/json_util.hpp"

namespace passorder {

using Eigen::Index;
using Eigen::VectorXd;

void adam_step(std::vector<ParamView> params, const std::vector<ParamView>& grads, AdamState& st, double lr,
               const AdamConfig& cfg) {
    if (params.size() != grads.size()) throw ContractViolation("adam_step: group count mismatch");
    Index total = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].size() != grads[k].size()) throw ContractViolation("adam_step: shape mismatch in " + params[k].name);
        total += params[k].size();
    }
    if (st.m.size() == 0) {
        st.m = VectorXd::Zero(total);
        st.v = VectorXd::Zero(total);
    }
    if (st.m.size() != total) throw ContractViolation("adam_step: optimizer state does not match the parameters");
    ++st.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    Index off = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        double* w = params[k].data;
        const double* g = grads[k].data;
        for (Index i = 0; i < params[k].size(); ++i, ++off) {
            double& m = st.m[off];
            double& v = st.v[off];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i] * g[i];
            w[i] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
        }
    }
}

double learning_rate(std::int64_t iteration, const LrSchedule& s) {
    if (iteration <= s.hold) return s.lr0;
    return s.lr0 * std::pow(s.factor, static_cast<double>((iteration - s.hold) / s.every));
}

double clip_global_norm(std::vector<ParamView> grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) sq += Eigen::Map<const VectorXd>(g.data, g.size()).squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& g : grads) Eigen::Map<VectorXd>(g.data, g.size()) *= f;
    }
    return norm;
}

void require_finite(const std::vector<ParamView>& grads, const std::string& context) {
    for (const auto& g : grads) {
        if (!Eigen::Map<const VectorXd>(g.data, g.size()).allFinite()) {
            throw NumericError(context + ": non-finite gradient in weight group '" + g.name + "'");
        }
    }
}

// ---------------------------------------------------------------- data

json dataset_to_json(const Dataset& d) {
    json j;
    j["format"] = "passorder-dataset";
    j["version"] = 1;
    j["n_vehicles"] = d.n_vehicles;
    j["provenance"] = d.provenance;
    if (!d.instances.empty()) j["geometry"] = geometry_to_json(d.instances.front().geometry());
    json arr = json::array();
    for (const auto& s : d.instances) arr.push_back(scenario_to_json(s, false));
    j["instances"] = std::move(arr);
    return j;
}

Dataset dataset_from_json(const json& j) {
    constexpr std::string_view ctx = "dataset";
    require_known_keys(j, {"format", "version", "n_vehicles", "provenance", "geometry", "instances"}, ctx);
    if (get_required<std::string>(j, "format", ctx) != "passorder-dataset") throw ConfigError("dataset: wrong format tag");
    if (get_required<int>(j, "version", ctx) != 1) throw ConfigError("dataset: unsupported version");
    Dataset d;
    d.n_vehicles = get_required<int>(j, "n_vehicles", ctx);
    d.provenance = get_or<json>(j, "provenance", json::object(), ctx);
    const json instances = get_required<json>(j, "instances", ctx);
    if (!instances.empty()) {
        GeometryPtr geo = geometry_from_json(get_required<json>(j, "geometry", ctx));
        d.instances.reserve(instances.size());
        for (const auto& s : instances) {
            d.instances.push_back(scenario_from_json(s, geo));
            if (d.instances.back().size() != d.n_vehicles) {
                throw ConfigError("dataset: instance " + std::to_string(d.instances.size() - 1) + " has " +
                                  std::to_string(d.instances.back().size()) + " vehicles, expected " +
                                  std::to_string(d.n_vehicles));
            }
        }
    }
    return d;
}

void save_dataset(const Dataset& d, const std::string& path) { write_text_file(path, dataset_to_json(d).dump() + "\n"); }

Dataset load_dataset(const std::string& path) {
    try {
        return dataset_from_json(read_json_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError("'" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------- training

namespace {

struct BatchAccum {
    PolicyParams gp;
    CriticParams gc;
    double sum_J = 0.0;
    double sum_abs_adv = 0.0;
    double sum_sq_err = 0.0;
    int enforceable = 0;
};

void accumulate(BatchAccum& acc, const Networks& nets, const Scenario& s, double penalty, std::uint64_t seed,
                double inv_batch) {
    Rng rng(seed);
    const PolicyTrace tr = policy_forward(nets.policy, encode_pointer_input(s), DecodeMode::sample, &rng);
    const double J = evaluate_indices(tr.order, s, penalty);
    const CriticTrace ct = critic_forward(nets.critic, encode_critic_input(s), nets.dims.value_scale);
    const double adv = J - ct.value;
    // Descent direction of E[(J - b) ln p] and of (b - J)^2 / 2, averaged over the batch.
    policy_backward(nets.policy, tr, adv * inv_batch, acc.gp);
    critic_backward(nets.critic, ct, -adv * inv_batch, acc.gc, nets.dims.value_scale);
    acc.sum_J += J;
    acc.sum_abs_adv += std::abs(adv);
    acc.sum_sq_err += adv * adv;
    acc.enforceable += is_enforceable_indices(tr.order, s) ? 1 : 0;
}

void add_into(std::vector<ParamView> dst, const std::vector<ParamView>& src) {
    for (std::size_t k = 0; k < dst.size(); ++k) {
        Eigen::Map<VectorXd>(dst[k].data, dst[k].size()) += Eigen::Map<const VectorXd>(src[k].data, src[k].size());
    }
}

}  // namespace

StepStats train_step(TrainState& state, std::span<const Scenario* const> batch, const TrainConfig& cfg) {
    if (batch.empty()) throw ContractViolation("train_step: empty batch");
    const std::int64_t it = state.iteration + 1;
    const double inv = 1.0 / static_cast<double>(batch.size());
    const int jobs = std::clamp(cfg.jobs, 1, static_cast<int>(batch.size()));

    std::vector<BatchAccum> parts;
    parts.reserve(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
        parts.push_back({PolicyParams::zeros(state.nets.dims), CriticParams::zeros(state.nets.dims)});
    }
    auto work = [&](int w) {
        const std::size_t lo = batch.size() * static_cast<std::size_t>(w) / static_cast<std::size_t>(jobs);
        const std::size_t hi = batch.size() * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(jobs);
        for (std::size_t k = lo; k < hi; ++k) {
            accumulate(parts[static_cast<std::size_t>(w)], state.nets, *batch[k], cfg.penalty,
                       derive_seed(cfg.seed, static_cast<std::uint64_t>(it), k), inv);
        }
    };
    if (jobs == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < jobs; ++w) pool.emplace_back(work, w);
    }
    // Reduce in worker order so the result depends only on (seed, jobs).
    BatchAccum& acc = parts.front();
    for (std::size_t w = 1; w < parts.size(); ++w) {
        add_into(acc.gp.views(), parts[w].gp.views());
        add_into(acc.gc.views(), parts[w].gc.views());
        acc.sum_J += parts[w].sum_J;
        acc.sum_abs_adv += parts[w].sum_abs_adv;
        acc.sum_sq_err += parts[w].sum_sq_err;
        acc.enforceable += parts[w].enforceable;
    }

    require_finite(acc.gp.views(), "policy update at iteration " + std::to_string(it));
    require_finite(acc.gc.views(), "critic update at iteration " + std::to_string(it));
    clip_global_norm(acc.gp.views(), cfg.clip_norm);
    clip_global_norm(acc.gc.views(), cfg.clip_norm);
    const double lr = learning_rate(it, cfg.lr);
    adam_step(state.nets.policy.views(), acc.gp.views(), state.policy_opt, lr, cfg.adam);
    adam_step(state.nets.critic.views(), acc.gc.views(), state.critic_opt, lr, cfg.adam);
    state.iteration = it;

    StepStats st;
    st.mean_J = acc.sum_J * inv;
    st.mean_abs_advantage = acc.sum_abs_adv * inv;
    st.critic_mse = acc.sum_sq_err * inv;
    st.enforceable_frac = acc.enforceable * inv;
    st.lr = lr;
    return st;
}

GreedyEval evaluate_greedy(const PolicyParams& p, std::span<const Scenario> instances, double penalty) {
    GreedyEval r;
    if (instances.empty()) return r;
    int ok = 0;
    for (const auto& s : instances) {
        const PolicyTrace tr = policy_forward(p, encode_pointer_input(s), DecodeMode::greedy);
        r.mean_J += evaluate_indices(tr.order, s, penalty);
        ok += is_enforceable_indices(tr.order, s) ? 1 : 0;
    }
    r.mean_J /= static_cast<double>(instances.size());
    r.enforceable_frac = ok / static_cast<double>(instances.size());
    return r;
}

bool plateaued(const std::vector<EpochStats>& history, int window, double tol) {
    if (window < 1 || static_cast<int>(history.size()) < window + 1) return false;
    auto mean_of = [&](std::size_t end) {
        double sum = 0.0;
        for (std::size_t k = end - static_cast<std::size_t>(window); k < end; ++k) sum += history[k].mean_J;
        return sum / window;
    };
    const double now = mean_of(history.size());
    const double before = mean_of(history.size() - 1);
    if (before == 0.0) return now == 0.0;
    return std::abs(now - before) / std::abs(before) < tol;
}

std::vector<EpochStats> train(const Dataset& data, TrainState& state, const TrainConfig& cfg, const EpochHook& hook,
                              std::vector<EpochStats> history) {
    if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(cfg.lr.lr0 > 0.0)) throw ConfigError("learning rate must be > 0");
    if (data.instances.empty()) throw ConfigError("training dataset is empty");
    const auto eval_count = std::min<std::size_t>(data.instances.size(), static_cast<std::size_t>(std::max(cfg.eval_instances, 1)));
    const std::span<const Scenario> eval_set(data.instances.data(), eval_count);

    std::vector<EpochStats> ran;
    std::vector<std::size_t> perm(data.instances.size());
    std::vector<const Scenario*> batch;
    bool capped = false;
    while (state.epoch < cfg.epochs && !capped) {
        const int epoch = state.epoch + 1;
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5EEDF00DULL, static_cast<std::uint64_t>(epoch)));
        shuffle(perm, shuffle_rng);
        for (std::size_t lo = 0; lo < perm.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
            if (cfg.max_iterations >= 0 && state.iteration >= cfg.max_iterations) {
                capped = true;
                break;
            }
            const std::size_t hi = std::min(perm.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t k = lo; k < hi; ++k) batch.push_back(&data.instances[perm[k]]);
            train_step(state, batch, cfg);
        }
        if (cfg.max_iterations >= 0 && state.iteration >= cfg.max_iterations) capped = true;
        state.epoch = epoch;
        const GreedyEval ev = evaluate_greedy(state.nets.policy, eval_set, cfg.penalty);
        EpochStats es{epoch, state.iteration, ev.mean_J, ev.enforceable_frac,
                      learning_rate(std::max<std::int64_t>(state.iteration, 1), cfg.lr)};
        history.push_back(es);
        ran.push_back(es);
        if (hook) hook(state, es);
        if (plateaued(history, cfg.plateau_window, cfg.plateau_tol)) break;
    }
    return ran;
}

Networks transfer_init(const Networks& pretrained, const IntersectionGeometry& geometry, Rng& rng) {
    if (pretrained.dims.pointer_in != kPointerFeatures) {
        throw RefusalError("transfer: pointer input width " + std::to_string(pretrained.dims.pointer_in) +
                           " differs from the fixed encoding width " + std::to_string(kPointerFeatures));
    }
    if (geometry.entry_lane_count() > kLaneSlots || geometry.exit_lane_count() > kLaneSlots) {
        throw RefusalError("transfer: geometry has more lanes than the pointer encoding's " +
                           std::to_string(kLaneSlots) + " one-hot slots");
    }
    Networks out = pretrained;
    const int width = critic_feature_width(geometry);
    if (width == pretrained.dims.critic_in) return out;
    out.dims.critic_in = width;
    out.critic.embed_W = Eigen::MatrixXd::Zero(pretrained.dims.d_emb, width);
    std::vector<ParamView> v{{"critic.embed.W", out.critic.embed_W.data(), out.critic.embed_W.rows(),
                              out.critic.embed_W.cols()}};
    init_uniform(v, 1.0 / std::sqrt(static_cast<double>(out.dims.d)), rng);
    return out;
}

double imitation_loss(const PolicyParams& p, std::span<const FineTunePair> pairs) {
    if (pairs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& pr : pairs) {
        const std::vector<int> idx = order_indices(pr.order, pr.scenario);
        sum -= policy_forward(p, encode_pointer_input(pr.scenario), DecodeMode::forced, nullptr, &idx).log_prob;
    }
    return sum / static_cast<double>(pairs.size());
}

std::vector<double> fine_tune_from_search(PolicyParams& p, std::span<const FineTunePair> pairs,
                                          const FineTuneConfig& cfg) {
    if (pairs.empty() || cfg.steps < 1) return {};
    for (const auto& pr : pairs) {
        if (!is_enforceable(pr.order, pr.scenario)) throw ContractViolation("fine_tune: improved order is not enforceable");
    }
    NetDims dims;
    dims.d_emb = static_cast<int>(p.embed_W.rows());
    dims.d = static_cast<int>(p.att_v.size());
    dims.pointer_in = static_cast<int>(p.embed_W.cols());

    std::vector<std::size_t> perm(pairs.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(cfg.seed);
    shuffle(perm, rng);
    const std::size_t bsz = std::min<std::size_t>(pairs.size(), static_cast<std::size_t>(std::max(cfg.batch_size, 1)));

    AdamState opt;
    std::vector<double> losses;
    std::size_t cursor = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        PolicyParams grad = PolicyParams::zeros(dims);
        double loss = 0.0;
        for (std::size_t k = 0; k < bsz; ++k) {
            const FineTunePair& pr = pairs[perm[(cursor + k) % perm.size()]];
            const std::vector<int> idx = order_indices(pr.order, pr.scenario);
            const PolicyTrace tr =
                policy_forward(p, encode_pointer_input(pr.scenario), DecodeMode::forced, nullptr, &idx);
            loss -= tr.log_prob;
            policy_backward(p, tr, -1.0 / static_cast<double>(bsz), grad);
        }
        cursor = (cursor + bsz) % perm.size();
        losses.push_back(loss / static_cast<double>(bsz));
        require_finite(grad.views(), "fine-tune step " + std::to_string(step + 1));
        clip_global_norm(grad.views(), cfg.clip_norm);
        adam_step(p.views(), grad.views(), opt, cfg.lr);
    }
    return losses;
}

}  // namespace passorder
