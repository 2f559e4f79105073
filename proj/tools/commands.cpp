#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "passorder/baselines.hpp"
#include "passorder/errors.hpp"
#include "passorder/json_util.hpp"
#include "passorder/search.hpp"
#include "passorder/simulator.hpp"
#include "passorder/training.hpp"

namespace passorder::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string file_digest(const std::string& path) { return hex64(fnv1a64(read_text_file(path))); }

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

fs::path parent_or_cwd(const std::string& file) {
    fs::path p = fs::path(file).parent_path();
    return p.empty() ? fs::path(".") : p;
}

/// One manifest per output directory, rewritten by every command that writes there.
void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& artifacts) {
    json m;
    m["tool"] = "passorder";
    m["tool_version"] = PASSORDER_VERSION;
    m["command"] = command;
    m["config"] = config;
    m["config_digest"] = hex64(fnv1a64(config.dump()));
    json in = json::object();
    for (const auto& p : inputs) in[p] = file_digest(p);
    m["inputs"] = in;
    json out = json::object();
    for (const auto& p : artifacts) out[fs::path(p).filename().string()] = file_digest(p);
    m["artifacts"] = out;
    write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
}

MctsConfig search_config(double lambda, double gamma, int group_max, std::int64_t iters, double budget_ms) {
    MctsConfig c;
    c.lambda = lambda;
    c.gamma = gamma;
    c.group_max = group_max;
    if (iters >= 0) {
        c.iterations = iters;
    } else {
        c.iterations = -1;
        c.time_budget_s = budget_ms / 1000.0;
    }
    return c;
}

json search_config_json(const MctsConfig& c) {
    return {{"lambda", c.lambda},
            {"gamma", c.gamma},
            {"group_max", c.group_max},
            {"iterations", c.iterations},
            {"time_budget_s", c.time_budget_s}};
}

struct SearchFlags {
    double lambda = 0.85;
    double gamma = 0.15;
    int group_max = kDefaultGroupMax;
    std::int64_t iters = 200;
    double budget_ms = -1.0;

    void add(CLI::App* sub) {
        sub->add_option("--lambda", lambda, "UCB1 exploration weight")->capture_default_str();
        sub->add_option("--gamma", gamma, "weight of the partial-order term in node values")->capture_default_str();
        sub->add_option("--group-max", group_max, "largest group")->capture_default_str()->check(CLI::PositiveNumber);
        auto* it = sub->add_option("--budget-iters", iters, "search iterations per plan")->capture_default_str();
        auto* ms = sub->add_option("--budget-ms", budget_ms, "wall-clock search budget (not reproducible)");
        it->excludes(ms);
        ms->excludes(it);
    }
    MctsConfig config() const { return search_config(lambda, gamma, group_max, budget_ms >= 0.0 ? -1 : iters, budget_ms); }
};

std::string order_to_string(const PassingOrder& o) {
    std::string out;
    for (std::size_t k = 0; k < o.sequence.size(); ++k) out += (k ? " " : "") + std::to_string(o.sequence[k]);
    return out;
}

// ---------------------------------------------------------------- gen-data

void add_gen_data(CLI::App& app) {
    struct Opts {
        std::string geometry = "default";
        std::string demand = "homogeneous";
        std::string rate = "auto";
        int n = 8;
        int count = 1000;
        std::uint64_t seed = 0;
        double min_gap = 20.0;
        std::string out;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("gen-data", "sample a training dataset from simulated traffic");
    sub->add_option("--geometry", o->geometry, "default, asymmetric or a geometry file")->capture_default_str();
    sub->add_option("--demand", o->demand, "demand preset or file")->capture_default_str();
    sub->add_option("--rate", o->rate, "arrival rate veh/(lane h), or 'auto' to match N")->capture_default_str();
    sub->add_option("--n-vehicles", o->n, "vehicles per instance")->required()->check(CLI::PositiveNumber);
    sub->add_option("--count", o->count, "instances")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--seed", o->seed, "random seed")->required();
    sub->add_option("--min-gap-s", o->min_gap, "simulated seconds between two snapshots")->capture_default_str();
    sub->add_option("--out", o->out, "output directory")->required();
    sub->callback([o] {
        GeometryPtr geo = resolve_geometry(o->geometry);
        DatasetSpec spec;
        spec.demand = resolve_demand(o->demand);
        if (o->rate == "auto") {
            spec.demand.arrival_rate = 0.0;
        } else {
            try {
                spec.demand.arrival_rate = std::stod(o->rate);
            } catch (const std::exception&) {
                throw ConfigError("--rate must be a number or 'auto'");
            }
        }
        spec.n_vehicles = o->n;
        spec.count = o->count;
        spec.seed = o->seed;
        spec.min_gap_s = o->min_gap;
        const Dataset d = sample_dataset(geo, spec);
        ensure_dir(o->out);
        const std::string path = (fs::path(o->out) / "dataset.json").string();
        save_dataset(d, path);
        write_manifest(o->out, "gen-data", d.provenance, {}, {path});
        std::cout << "wrote " << d.instances.size() << " instances with " << d.n_vehicles << " vehicles to " << path
                  << "\n";
    });
}

// ---------------------------------------------------------------- train

void add_train(CLI::App& app) {
    struct Opts {
        std::string dataset;
        int n = 0;
        int batch = 64;
        int epochs = 1;
        double lr = 1e-3;
        double penalty = kDefaultPenalty;
        std::uint64_t seed = 0;
        std::string out;
        std::int64_t max_iters = -1;
        int d = 256;
        int fc1 = 1024;
        int fc2 = 256;
        double value_scale = 1.0;
        std::string resume;
        std::string init;
        int jobs = 1;
        int eval_instances = 1000;
        int plateau_window = 5;
        double plateau_tol = 1e-3;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("train", "train the pointer and critic networks");
    sub->add_option("--dataset", o->dataset, "dataset file from gen-data")->required();
    sub->add_option("--n-vehicles", o->n, "expected vehicles per instance (checked)");
    sub->add_option("--batch", o->batch, "batch size")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--epochs", o->epochs, "total epochs")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--lr", o->lr, "initial learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--penalty", o->penalty, "penalty for unenforceable orders, s")->capture_default_str();
    sub->add_option("--seed", o->seed, "random seed")->required();
    sub->add_option("--out", o->out, "output directory")->required();
    sub->add_option("--max-iters", o->max_iters, "stop after this many iterations in total");
    sub->add_option("--hidden", o->d, "embedding and LSTM width")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--fc1", o->fc1, "critic hidden layer 1")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--fc2", o->fc2, "critic hidden layer 2")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--value-scale", o->value_scale, "critic output scale")->capture_default_str();
    auto* resume = sub->add_option("--resume", o->resume, "continue from a checkpoint (weights and optimizer)");
    auto* init = sub->add_option("--init", o->init, "start from checkpoint weights with a fresh optimizer");
    resume->excludes(init);
    init->excludes(resume);
    sub->add_option("--jobs", o->jobs, "worker threads per batch")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--eval-instances", o->eval_instances, "instances in the per-epoch greedy evaluation")
        ->capture_default_str();
    sub->add_option("--plateau-window", o->plateau_window, "epochs in the plateau moving average")
        ->capture_default_str();
    sub->add_option("--plateau-tol", o->plateau_tol, "relative change counted as a plateau")->capture_default_str();
    sub->callback([o] {
        const Dataset data = load_dataset(o->dataset);
        if (o->n > 0 && o->n != data.n_vehicles) {
            throw ConfigError("dataset holds " + std::to_string(data.n_vehicles) + "-vehicle instances, not " +
                              std::to_string(o->n));
        }
        if (data.instances.empty()) throw ConfigError("dataset is empty");
        TrainConfig cfg;
        cfg.batch_size = o->batch;
        cfg.epochs = o->epochs;
        cfg.lr.lr0 = o->lr;
        cfg.penalty = o->penalty;
        cfg.seed = o->seed;
        cfg.max_iterations = o->max_iters;
        cfg.jobs = o->jobs;
        cfg.eval_instances = o->eval_instances;
        cfg.plateau_window = o->plateau_window;
        cfg.plateau_tol = o->plateau_tol;

        const IntersectionGeometry& geo = data.instances.front().geometry();
        TrainState state;
        std::vector<std::string> inputs{o->dataset};
        if (!o->resume.empty()) {
            state = load_checkpoint(o->resume).state;
            inputs.push_back(o->resume);
        } else if (!o->init.empty()) {
            state.nets = load_checkpoint(o->init).state.nets;
            inputs.push_back(o->init);
        } else {
            NetDims dims;
            dims.d_emb = dims.d = o->d;
            dims.fc1 = o->fc1;
            dims.fc2 = o->fc2;
            dims.critic_in = critic_feature_width(geo);
            dims.value_scale = o->value_scale;
            Rng rng(derive_seed(o->seed, 0x1417));
            state.nets = init_params(dims, rng);
        }
        if (state.nets.dims.critic_in != critic_feature_width(geo)) {
            throw ConfigError("checkpoint critic expects " + std::to_string(state.nets.dims.critic_in) +
                              " features but the dataset geometry gives " +
                              std::to_string(critic_feature_width(geo)) + "; run transfer first");
        }

        ensure_dir(o->out);
        const fs::path dir(o->out);
        const std::string curve = (dir / "learning_curve.csv").string();
        std::vector<EpochStats> history;
        // The earlier curve lives in the output directory, or next to the checkpoint when resuming elsewhere.
        std::string prior = curve;
        if (!o->resume.empty() && !fs::exists(prior)) prior = (parent_or_cwd(o->resume) / "learning_curve.csv").string();
        if (!o->resume.empty() && fs::exists(prior)) {
            // Keep the rows up to the resumed epoch so the plateau rule sees the same history.
            std::istringstream in(read_text_file(prior));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                EpochStats es;
                char c1, c2, c3;
                std::istringstream row(line);
                row >> es.epoch >> c1 >> es.mean_J >> c2 >> es.enforceable_frac >> c3 >> es.lr;
                if (row && es.epoch <= state.epoch) history.push_back(es);
            }
        }
        std::string curve_text = "epoch,mean_J,enforceable_frac,lr\n";
        auto row_of = [](const EpochStats& es) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%d,%s,%s,%.9g\n", es.epoch, fixed6(es.mean_J).c_str(),
                          fixed6(es.enforceable_frac).c_str(), es.lr);
            return std::string(buf);
        };
        for (const auto& es : history) curve_text += row_of(es);

        const json meta = {{"geometry", geo.name()}, {"n_vehicles", data.n_vehicles}, {"seed", o->seed}};
        std::vector<std::string> artifacts;
        auto hook = [&](const TrainState& st, const EpochStats& es) {
            char name[64];
            std::snprintf(name, sizeof name, "epoch_%04d.ckpt", es.epoch);
            const std::string path = (dir / name).string();
            save_checkpoint({st, meta}, path);
            save_checkpoint({st, meta}, (dir / "latest.ckpt").string());
            curve_text += row_of(es);
            write_text_file(curve, curve_text);
            artifacts.push_back(path);
            std::cout << "epoch " << es.epoch << " iteration " << es.iteration << " mean_J " << fixed6(es.mean_J)
                      << " enforceable " << fixed6(es.enforceable_frac) << "\n";
        };
        const auto ran = train(data, state, cfg, hook, history);
        if (ran.empty()) {
            save_checkpoint({state, meta}, (dir / "latest.ckpt").string());
            write_text_file(curve, curve_text);
        }
        artifacts.push_back((dir / "latest.ckpt").string());
        artifacts.push_back(curve);
        const json config = {{"dataset", o->dataset},   {"batch", o->batch},         {"epochs", o->epochs},
                             {"lr", o->lr},             {"penalty", o->penalty},     {"seed", o->seed},
                             {"max_iters", o->max_iters}, {"hidden", state.nets.dims.d}, {"fc1", state.nets.dims.fc1},
                             {"fc2", state.nets.dims.fc2}, {"value_scale", state.nets.dims.value_scale},
                             {"jobs", o->jobs},         {"resume", o->resume},       {"init", o->init}};
        write_manifest(dir, "train", config, inputs, artifacts);
    });
}

// ---------------------------------------------------------------- search

void add_search(CLI::App& app) {
    struct Opts {
        std::string scenario;
        std::string candidate = "fifo";
        std::uint64_t seed = 0;
        std::string out;
        SearchFlags search;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("search", "improve a candidate passing order with tree search");
    sub->add_option("--scenario", o->scenario, "scenario file")->required();
    sub->add_option("--candidate", o->candidate, "fifo, pointer:CKPT, or an order file")->capture_default_str();
    sub->add_option("--seed", o->seed, "random seed")->required();
    sub->add_option("--out", o->out, "result file (default: stdout)");
    o->search.add(sub);
    sub->callback([o] {
        const Scenario s = load_scenario(o->scenario);
        std::vector<std::string> inputs{o->scenario};
        PassingOrder candidate;
        if (o->candidate == "fifo") {
            candidate = fifo_order(s);
        } else if (o->candidate.rfind("pointer:", 0) == 0) {
            const std::string path = o->candidate.substr(8);
            candidate = pointer_candidate(s, load_checkpoint(path).state.nets.policy);
            inputs.push_back(path);
        } else {
            const json j = read_json_file(o->candidate);
            require_known_keys(j, {"order"}, "order file");
            candidate.sequence = get_required<std::vector<VehicleId>>(j, "order", "order file");
            if (!is_enforceable(candidate, s)) throw ConfigError("candidate order breaks lane order");
            inputs.push_back(o->candidate);
        }
        const MctsConfig cfg = o->search.config();
        const SearchResult r = mcts_search(s, candidate, cfg, o->seed);
        json out = {{"order", r.order.sequence},
                    {"J_seconds", r.J},
                    {"candidate_J_seconds", r.candidate_J},
                    {"mu", r.mu},
                    {"iterations", r.iterations},
                    {"groups", r.group_count},
                    {"tree_nodes", r.tree_nodes},
                    {"exhausted", r.exhausted}};
        const std::string text = out.dump(2) + "\n";
        if (o->out.empty()) {
            std::cout << text;
        } else {
            write_text_file(o->out, text);
            const json config = {{"scenario", o->scenario}, {"candidate", o->candidate}, {"seed", o->seed},
                                 {"search", search_config_json(cfg)}};
            write_manifest(parent_or_cwd(o->out), "search", config, inputs, {o->out});
        }
    });
}

// ---------------------------------------------------------------- enumerate

void add_enumerate(CLI::App& app) {
    struct Opts {
        std::string scenario;
        std::uint64_t limit = 0;
        std::string sampler = "exhaustive";
        int count = 10000;
        std::uint64_t seed = 0;
        std::string out;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("enumerate", "enumerate enforceable orders and export their objective values");
    sub->add_option("--scenario", o->scenario, "scenario file")->required();
    sub->add_option("--limit", o->limit, "orders to evaluate, 0 for all (at most 10 vehicles)")->capture_default_str();
    sub->add_option("--sampler", o->sampler, "exhaustive or grouped (random grouping)")
        ->capture_default_str()
        ->check(CLI::IsMember({"exhaustive", "grouped"}));
    sub->add_option("--count", o->count, "orders drawn by the grouped sampler")->capture_default_str();
    sub->add_option("--seed", o->seed, "random seed (grouped sampler)");
    sub->add_option("--out", o->out, "CSV of objective values, one per line");
    sub->callback([o] {
        const Scenario s = load_scenario(o->scenario);
        std::vector<double> samples;
        std::string summary;
        if (o->sampler == "grouped") {
            if (o->count < 1) throw ConfigError("--count must be >= 1");
            Rng rng(o->seed);
            samples = sample_orders_grouped(s, o->count, rng);
            summary = "sampled " + std::to_string(samples.size()) + " orders, best J " +
                      fixed6(*std::min_element(samples.begin(), samples.end()));
        } else {
            const EnumerationResult r = enumerate_optimal(s, o->limit, !o->out.empty());
            if (r.J_samples) samples = *r.J_samples;
            summary = "evaluated " + std::to_string(r.orders_evaluated) + " orders, best J " + fixed6(r.best_J) +
                      ", order " + order_to_string(r.best_order);
        }
        std::cout << summary << "\n";
        if (!o->out.empty()) {
            std::string text = "J_seconds\n";
            for (double J : samples) text += fixed6(J) + "\n";
            write_text_file(o->out, text);
            const json config = {{"scenario", o->scenario}, {"limit", o->limit}, {"sampler", o->sampler},
                                 {"count", o->count},       {"seed", o->seed}};
            write_manifest(parent_or_cwd(o->out), "enumerate", config, {o->scenario}, {o->out});
        }
    });
}

// ---------------------------------------------------------------- simulate

void add_simulate(CLI::App& app) {
    struct Opts {
        std::string geometry = "default";
        std::string demand = "homogeneous";
        double rate = -1.0;
        std::string algo = "fifo";
        std::string ckpt;
        double duration = 600.0;
        double warmup = 120.0;
        std::uint64_t seed = 0;
        std::string out;
        std::string rounds;
        SearchFlags search;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("simulate", "run the rolling-horizon intersection simulation");
    sub->add_option("--geometry", o->geometry, "default, asymmetric or a geometry file")->capture_default_str();
    sub->add_option("--demand", o->demand, "demand preset or file")->capture_default_str();
    sub->add_option("--rate", o->rate, "override the arrival rate, veh/(lane h)");
    sub->add_option("--algo", o->algo, "fifo, mcts_baseline, alphaorder or pointer")
        ->capture_default_str()
        ->check(CLI::IsMember({"fifo", "mcts_baseline", "alphaorder", "pointer"}));
    sub->add_option("--ckpt", o->ckpt, "checkpoint for alphaorder / pointer");
    sub->add_option("--duration-s", o->duration, "simulated arrival window, s")->capture_default_str();
    sub->add_option("--warmup-s", o->warmup, "arrivals before this are not measured, s")->capture_default_str();
    sub->add_option("--seed", o->seed, "random seed")->required();
    sub->add_option("--out", o->out, "metrics CSV")->required();
    sub->add_option("--rounds-csv", o->rounds, "per-round objective and improvement ratio");
    o->search.add(sub);
    sub->callback([o] {
        GeometryPtr geo = resolve_geometry(o->geometry);
        DemandConfig demand = resolve_demand(o->demand);
        if (o->rate >= 0.0) demand.arrival_rate = o->rate;
        std::string spec = o->algo;
        std::vector<std::string> inputs;
        if (o->algo == "alphaorder" || o->algo == "pointer") {
            if (o->ckpt.empty()) throw ConfigError("--algo " + o->algo + " needs --ckpt");
            spec += ":" + o->ckpt;
            inputs.push_back(o->ckpt);
        }
        const MctsConfig mcfg = o->search.config();
        auto planner = make_planner(spec, mcfg);
        SimConfig sc;
        sc.duration_s = o->duration;
        sc.warmup_s = o->warmup;
        sc.seed = o->seed;
        const SimMetrics m = run_simulation(geo, demand, *planner, sc);

        // Lane-weighted average turning split, for the report.
        TurningWeights avg{0.0, 0.0, 0.0};
        const auto rates = approach_rates(demand, *geo);
        double total = 0.0;
        for (int a = 0; a < kApproachCount; ++a) {
            const auto w = normalize_turning(demand.turning[static_cast<std::size_t>(a)]);
            for (int k = 0; k < 3; ++k) avg[static_cast<std::size_t>(k)] += rates[static_cast<std::size_t>(a)] * w[static_cast<std::size_t>(k)];
            total += rates[static_cast<std::size_t>(a)];
        }
        for (double& x : avg) x = total > 0.0 ? x / total : 0.0;

        std::string text = "algo,seed,arrival_rate,p_left,p_straight,p_right,vehicles_served,mean_delay_s\n";
        text += o->algo + "," + std::to_string(o->seed) + "," + fixed6(demand.arrival_rate) + "," + fixed6(avg[0]) +
                "," + fixed6(avg[1]) + "," + fixed6(avg[2]) + "," + std::to_string(m.vehicles_served) + "," +
                fixed6(m.mean_delay) + "\n";
        write_text_file(o->out, text);
        std::vector<std::string> artifacts{o->out};
        if (!o->rounds.empty()) {
            std::string r = "time_s,vehicles,candidate_J,J,mu\n";
            for (const auto& rr : m.rounds) {
                r += fixed6(rr.time) + "," + std::to_string(rr.vehicles) + "," + fixed6(rr.candidate_J) + "," +
                     fixed6(rr.J) + "," + fixed6(rr.mu) + "\n";
            }
            write_text_file(o->rounds, r);
            artifacts.push_back(o->rounds);
        }
        const json config = {{"geometry", o->geometry}, {"demand", demand_to_json(demand)}, {"algo", o->algo},
                             {"ckpt", o->ckpt},         {"duration_s", o->duration},      {"warmup_s", o->warmup},
                             {"seed", o->seed},         {"search", search_config_json(mcfg)}};
        write_manifest(parent_or_cwd(o->out), "simulate", config, inputs, artifacts);
        std::cout << o->algo << ": " << m.vehicles_served << " vehicles measured (warm-up " << fixed6(o->warmup)
                  << " s excluded), mean delay " << fixed6(m.mean_delay) << " s\n";
    });
}

// ---------------------------------------------------------------- compare

void add_compare(CLI::App& app) {
    struct Opts {
        int n = 7;
        int count = 100;
        std::uint64_t seed = 0;
        std::string geometry = "default";
        std::string dataset;
        std::string algos = "fifo,mcts_baseline,optimal";
        std::string ckpt;
        std::string out;
        SearchFlags search;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("compare", "objective values of several algorithms on a shared scenario set");
    sub->add_option("--n", o->n, "vehicles per scenario")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--count", o->count, "scenarios")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--seed", o->seed, "random seed")->required();
    sub->add_option("--geometry", o->geometry, "geometry for generated scenarios")->capture_default_str();
    sub->add_option("--dataset", o->dataset, "use these scenarios instead of generating them");
    sub->add_option("--algos", o->algos, "comma list of fifo, mcts_baseline, pointer, alphaorder, optimal")
        ->capture_default_str();
    sub->add_option("--ckpt", o->ckpt, "checkpoint for pointer / alphaorder");
    sub->add_option("--out", o->out, "CSV path (default: stdout)");
    o->search.add(sub);
    sub->callback([o] {
        std::vector<std::string> algos;
        {
            std::stringstream ss(o->algos);
            std::string a;
            while (std::getline(ss, a, ',')) {
                if (a.empty()) continue;
                if (a != "fifo" && a != "mcts_baseline" && a != "pointer" && a != "alphaorder" && a != "optimal") {
                    throw ConfigError("unknown algorithm '" + a + "'");
                }
                algos.push_back(a);
            }
        }
        if (algos.empty()) throw ConfigError("--algos is empty");
        std::vector<std::string> inputs;
        Dataset data;
        if (!o->dataset.empty()) {
            data = load_dataset(o->dataset);
            inputs.push_back(o->dataset);
            if (static_cast<int>(data.instances.size()) > o->count) data.instances.resize(static_cast<std::size_t>(o->count));
        } else {
            DatasetSpec spec;
            spec.demand = DemandConfig::homogeneous(0.0);
            spec.n_vehicles = o->n;
            spec.count = o->count;
            spec.seed = o->seed;
            data = sample_dataset(resolve_geometry(o->geometry), spec);
        }
        std::optional<PolicyParams> policy;
        for (const auto& a : algos) {
            if ((a == "pointer" || a == "alphaorder") && !policy) {
                if (o->ckpt.empty()) throw ConfigError("algorithm '" + a + "' needs --ckpt");
                policy = load_checkpoint(o->ckpt).state.nets.policy;
                inputs.push_back(o->ckpt);
            }
        }
        const MctsConfig mcfg = o->search.config();
        std::vector<double> sum_J(algos.size(), 0.0), sum_mu(algos.size(), 0.0);
        std::string text = "algo,scenario_id,J,mu\n";
        for (std::size_t k = 0; k < data.instances.size(); ++k) {
            const Scenario& s = data.instances[k];
            const std::uint64_t seed = derive_seed(o->seed, 0xC0, k);
            for (std::size_t a = 0; a < algos.size(); ++a) {
                double J = 0.0, mu = 0.0;
                if (algos[a] == "fifo") {
                    J = evaluate_objective(fifo_order(s), s);
                } else if (algos[a] == "mcts_baseline") {
                    const auto r = mcts_baseline(s, mcfg, seed);
                    J = r.J;
                    mu = r.mu;
                } else if (algos[a] == "pointer") {
                    J = evaluate_objective(pointer_candidate(s, *policy), s);
                } else if (algos[a] == "alphaorder") {
                    const auto r = alphaorder(s, *policy, mcfg, seed);
                    J = r.J;
                    mu = r.mu;
                } else {
                    J = enumerate_optimal(s).best_J;
                }
                sum_J[a] += J;
                sum_mu[a] += mu;
                text += algos[a] + "," + std::to_string(k) + "," + fixed6(J) + "," + fixed6(mu) + "\n";
            }
        }
        const double count = static_cast<double>(std::max<std::size_t>(data.instances.size(), 1));
        for (std::size_t a = 0; a < algos.size(); ++a) {
            text += algos[a] + ",mean," + fixed6(sum_J[a] / count) + "," + fixed6(sum_mu[a] / count) + "\n";
        }
        if (o->out.empty()) {
            std::cout << text;
        } else {
            write_text_file(o->out, text);
            const json config = {{"n", o->n},         {"count", o->count},   {"seed", o->seed},
                                 {"geometry", o->geometry}, {"dataset", o->dataset}, {"algos", o->algos},
                                 {"ckpt", o->ckpt},   {"search", search_config_json(mcfg)}};
            write_manifest(parent_or_cwd(o->out), "compare", config, inputs, {o->out});
        }
    });
}

// ---------------------------------------------------------------- transfer

void add_transfer(CLI::App& app) {
    struct Opts {
        std::string ckpt;
        std::string geometry;
        std::uint64_t seed = 0;
        std::string out;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("transfer", "adapt a trained model to another intersection geometry");
    sub->add_option("--ckpt", o->ckpt, "pretrained checkpoint")->required();
    sub->add_option("--geometry", o->geometry, "target geometry: default, asymmetric or a file")->required();
    sub->add_option("--seed", o->seed, "seed for the redrawn critic embedding")->required();
    sub->add_option("--out", o->out, "output directory")->required();
    sub->callback([o] {
        const Checkpoint src = load_checkpoint(o->ckpt);
        GeometryPtr geo = resolve_geometry(o->geometry);
        Rng rng(o->seed);
        Checkpoint dst;
        dst.state.nets = transfer_init(src.state.nets, *geo, rng);
        dst.meta = src.meta;
        dst.meta["geometry"] = geo->name();
        dst.meta["transferred_from"] = file_digest(o->ckpt);
        ensure_dir(o->out);
        const std::string path = (fs::path(o->out) / "transferred.ckpt").string();
        save_checkpoint(dst, path);
        const json config = {{"ckpt", o->ckpt}, {"geometry", o->geometry}, {"seed", o->seed}};
        write_manifest(o->out, "transfer", config, {o->ckpt}, {path});
        std::cout << "critic input width " << src.state.nets.dims.critic_in << " -> " << dst.state.nets.dims.critic_in
                  << ", wrote " << path << "\n";
    });
}

// ---------------------------------------------------------------- fine-tune

void add_fine_tune(CLI::App& app) {
    struct Opts {
        std::string ckpt;
        std::string dataset;
        int pairs = 32;
        int steps = 20;
        int batch = 32;
        double lr = 1e-4;
        std::uint64_t seed = 0;
        std::string out;
        SearchFlags search;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("fine-tune", "imitate search-improved orders (teacher-forced cross-entropy)");
    sub->add_option("--ckpt", o->ckpt, "checkpoint to refine")->required();
    sub->add_option("--dataset", o->dataset, "scenarios to search on")->required();
    sub->add_option("--pairs", o->pairs, "scenarios used")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--steps", o->steps, "optimizer steps")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--batch", o->batch, "pairs per step")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--lr", o->lr, "learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--seed", o->seed, "random seed")->required();
    sub->add_option("--out", o->out, "output directory")->required();
    o->search.add(sub);
    sub->callback([o] {
        Checkpoint c = load_checkpoint(o->ckpt);
        const Dataset data = load_dataset(o->dataset);
        const MctsConfig mcfg = o->search.config();
        std::vector<FineTunePair> pairs;
        const auto n = std::min<std::size_t>(data.instances.size(), static_cast<std::size_t>(o->pairs));
        for (std::size_t k = 0; k < n; ++k) {
            const Scenario& s = data.instances[k];
            const auto r = alphaorder(s, c.state.nets.policy, mcfg, derive_seed(o->seed, 0xF7, k));
            pairs.push_back({s, r.order});
        }
        FineTuneConfig fc;
        fc.steps = o->steps;
        fc.batch_size = o->batch;
        fc.lr = o->lr;
        fc.seed = o->seed;
        const auto losses = fine_tune_from_search(c.state.nets.policy, pairs, fc);
        ensure_dir(o->out);
        const fs::path dir(o->out);
        const std::string ckpt = (dir / "fine_tuned.ckpt").string();
        c.state.policy_opt = {};
        c.state.critic_opt = {};
        save_checkpoint(c, ckpt);
        std::string text = "step,loss\n";
        for (std::size_t k = 0; k < losses.size(); ++k) text += std::to_string(k + 1) + "," + fixed6(losses[k]) + "\n";
        const std::string csv = (dir / "fine_tune.csv").string();
        write_text_file(csv, text);
        const json config = {{"ckpt", o->ckpt}, {"dataset", o->dataset}, {"pairs", o->pairs}, {"steps", o->steps},
                             {"batch", o->batch}, {"lr", o->lr}, {"seed", o->seed}, {"search", search_config_json(mcfg)}};
        write_manifest(dir, "fine-tune", config, {o->ckpt, o->dataset}, {ckpt, csv});
        std::cout << "loss " << fixed6(losses.front()) << " -> " << fixed6(losses.back()) << ", wrote " << ckpt << "\n";
    });
}

}  // namespace

void register_commands(CLI::App& app) {
    add_gen_data(app);
    add_train(app);
    add_search(app);
    add_enumerate(app);
    add_simulate(app);
    add_compare(app);
    add_transfer(app);
    add_fine_tune(app);
}

}  // namespace passorder::cli
