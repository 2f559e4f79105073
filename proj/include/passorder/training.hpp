#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "passorder/core.hpp"
#include "passorder/json_util.hpp"
#include "passorder/neural.hpp"

namespace passorder {

// ---------------------------------------------------------------- optimizer

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::int64_t t = 0;

    bool operator==(const AdamState& o) const { return t == o.t && m == o.m && v == o.v; }
};

/// Bias-corrected Adam, descending along `grads`. State vectors are sized on first use.
void adam_step(std::vector<ParamView> params, const std::vector<ParamView>& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

struct LrSchedule {
    double lr0 = 1e-3;
    std::int64_t hold = 10000;
    std::int64_t every = 1000;
    double factor = 0.98;
};

/// lr0 up to and including `hold`, then one factor per completed `every` iterations.
double learning_rate(std::int64_t iteration, const LrSchedule& schedule);

/// Scales grads in place so their joint L2 norm is at most max_norm; returns the norm before scaling.
double clip_global_norm(std::vector<ParamView> grads, double max_norm);

/// Throws NumericError naming the first group holding a NaN or infinity.
void require_finite(const std::vector<ParamView>& grads, const std::string& context);

// ---------------------------------------------------------------- data

struct Dataset {
    int n_vehicles = 0;
    std::vector<Scenario> instances;
    json provenance = json::object();
};

json dataset_to_json(const Dataset& d);
Dataset dataset_from_json(const json& j);
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

// ---------------------------------------------------------------- training

struct TrainConfig {
    int batch_size = 64;
    LrSchedule lr;
    AdamConfig adam;
    double penalty = kDefaultPenalty;
    double clip_norm = 2.0;
    int epochs = 1;
    /// Stop after this many iterations in total (negative: no cap).
    std::int64_t max_iterations = -1;
    std::uint64_t seed = 0;
    /// Moving-average plateau stop: window in epochs and relative tolerance.
    int plateau_window = 5;
    double plateau_tol = 1e-3;
    /// Instances decoded greedily at the end of each epoch for the learning curve.
    int eval_instances = 1000;
    int jobs = 1;
};

struct TrainState {
    Networks nets;
    AdamState policy_opt;
    AdamState critic_opt;
    std::int64_t iteration = 0;
    int epoch = 0;
};

struct StepStats {
    double mean_J = 0.0;
    double mean_abs_advantage = 0.0;
    double enforceable_frac = 0.0;
    double critic_mse = 0.0;
    double lr = 0.0;
};

/// One REINFORCE step with the critic baseline on `batch`, then one Adam step on each network.
/// Sampling for instance k uses derive_seed(cfg.seed, iteration, k), so a run is fully
/// determined by its seed and state.
StepStats train_step(TrainState& state, std::span<const Scenario* const> batch, const TrainConfig& cfg);

struct EpochStats {
    int epoch = 0;
    std::int64_t iteration = 0;
    double mean_J = 0.0;            // greedy decode over the evaluation subset
    double enforceable_frac = 0.0;  // same subset
    double lr = 0.0;
};

struct GreedyEval {
    double mean_J = 0.0;
    double enforceable_frac = 0.0;
};
GreedyEval evaluate_greedy(const PolicyParams& p, std::span<const Scenario> instances, double penalty);

/// Called after every epoch; used to write checkpoints and the learning curve.
using EpochHook = std::function<void(const TrainState&, const EpochStats&)>;

/// Epoch loop from the current state. Stops at cfg.epochs, at cfg.max_iterations, or on a
/// plateau of the moving-average greedy J. Returns the stats of the epochs run.
std::vector<EpochStats> train(const Dataset& data, TrainState& state, const TrainConfig& cfg,
                              const EpochHook& hook = {}, std::vector<EpochStats> history = {});

bool plateaued(const std::vector<EpochStats>& history, int window, double tol);

/// Starts a model on another geometry: everything is copied, and only the critic
/// embedding matrix is redrawn if the right-of-way width changes. The pointer network
/// is geometry-independent; a change of its input width is refused.
Networks transfer_init(const Networks& pretrained, const IntersectionGeometry& geometry, Rng& rng);

struct FineTuneConfig {
    int steps = 20;
    int batch_size = 32;
    double lr = 1e-4;
    double clip_norm = 2.0;
    std::uint64_t seed = 0;
};

struct FineTunePair {
    Scenario scenario;
    PassingOrder order;
};

/// Mean teacher-forced cross-entropy -ln p(order | s) over the pairs.
double imitation_loss(const PolicyParams& p, std::span<const FineTunePair> pairs);

/// Adam steps on the imitation loss. Returns the loss measured before every step.
std::vector<double> fine_tune_from_search(PolicyParams& p, std::span<const FineTunePair> pairs,
                                          const FineTuneConfig& cfg);

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
    TrainState state;
    json meta = json::object();  // free-form: geometry name, N, seed, ...
};

/// Portable binary: "PORDCKPT", u32 version, dimension header, named row-major f64
/// groups (little-endian), optimizer state, FNV-1a 64 trailer over everything before it.
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);

}  // namespace passorder
