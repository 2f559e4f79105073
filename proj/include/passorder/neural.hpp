#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "passorder/core.hpp"
#include "passorder/rng.hpp"

namespace passorder {

struct NetDims {
    int d_emb = 256;
    int d = 256;
    int pointer_in = kPointerFeatures;
    int critic_in = kPointerFeatures + 36;
    int fc1 = 1024;
    int fc2 = 256;
    /// The critic head output is multiplied by this before use, so that a small-weight
    /// network can still reach objective values of tens or hundreds of seconds.
    double value_scale = 1.0;

    bool operator==(const NetDims&) const = default;
};

/// Weights of one LSTM cell; gate rows are stacked input, forget, candidate, output.
struct LstmParams {
    Eigen::MatrixXd Wx;
    Eigen::MatrixXd Wh;
    Eigen::VectorXd b;
};

/// A named weight tensor inside a parameter struct. Used by the optimizer, the
/// checkpoint writer and the gradient checks, which all treat weights as flat groups.
struct ParamView {
    std::string name;
    double* data;
    Eigen::Index rows;
    Eigen::Index cols;

    Eigen::Index size() const { return rows * cols; }
};

struct PolicyParams {
    Eigen::MatrixXd embed_W;  // d_emb x pointer_in
    Eigen::VectorXd embed_b;
    LstmParams encoder;
    LstmParams decoder;
    Eigen::VectorXd att_v;
    Eigen::MatrixXd att_W1;  // applied to encoder states
    Eigen::MatrixXd att_W2;  // applied to the decoder state
    Eigen::VectorXd g;       // first decoder input

    static PolicyParams zeros(const NetDims& dims);
    std::vector<ParamView> views();
    /// Read-only use only; the views alias the same storage.
    std::vector<ParamView> views() const { return const_cast<PolicyParams*>(this)->views(); }
    Eigen::Index parameter_count() const;
};

struct CriticParams {
    Eigen::MatrixXd embed_W;  // d_emb x critic_in
    Eigen::VectorXd embed_b;
    LstmParams encoder;
    Eigen::MatrixXd fc1_W;
    Eigen::VectorXd fc1_b;
    Eigen::MatrixXd fc2_W;
    Eigen::VectorXd fc2_b;
    Eigen::MatrixXd fc3_W;
    Eigen::VectorXd fc3_b;

    static CriticParams zeros(const NetDims& dims);
    std::vector<ParamView> views();
    /// Read-only use only; the views alias the same storage.
    std::vector<ParamView> views() const { return const_cast<CriticParams*>(this)->views(); }
    Eigen::Index parameter_count() const;
};

/// Flat copies of all groups, in views() order.
Eigen::VectorXd flatten(std::vector<ParamView> views);
void unflatten(const Eigen::VectorXd& flat, std::vector<ParamView> views);

struct Networks {
    NetDims dims;
    PolicyParams policy;
    CriticParams critic;
};

/// Uniform in [-1/sqrt(d), 1/sqrt(d)], drawn group by group in views() order.
Networks init_params(const NetDims& dims, Rng& rng);
void init_uniform(std::vector<ParamView> views, double bound, Rng& rng);

/// softmax over unselected entries of u_i = v . tanh(W1 e_i + W2 d); selected entries are exactly 0.
Eigen::VectorXd attention_scores(const PolicyParams& p, const Eigen::MatrixXd& encoder_states,
                                 const Eigen::VectorXd& decoder_state, const std::vector<char>& selected);

enum class DecodeMode { greedy, sample, forced };

/// Everything the backward pass needs from one pointer-network decode.
struct PolicyTrace {
    Eigen::MatrixXd input;       // pointer_in x N
    Eigen::MatrixXd emb;         // d_emb x N
    // encoder
    Eigen::MatrixXd enc_gates;   // 4d x N, post-activation
    Eigen::MatrixXd enc_c;       // d x N
    Eigen::MatrixXd enc_h;       // d x N (the e_i)
    // decoder, one column per step
    Eigen::MatrixXd dec_in;      // d_emb x N
    Eigen::MatrixXd dec_gates;
    Eigen::MatrixXd dec_c;
    Eigen::MatrixXd dec_h;       // the d_k
    Eigen::MatrixXd proj_e;      // W1 * enc_h
    std::vector<Eigen::MatrixXd> att_tanh;  // per step, d x N
    std::vector<Eigen::VectorXd> step_probs;
    std::vector<int> order;      // scenario indices
    double log_prob = 0.0;
};

PolicyTrace policy_forward(const PolicyParams& p, const Eigen::MatrixXd& input, DecodeMode mode, Rng* rng = nullptr,
                           const std::vector<int>* forced = nullptr);

/// grad += scale * d(log p(order)) / d(params)
void policy_backward(const PolicyParams& p, const PolicyTrace& trace, double scale, PolicyParams& grad);

struct DecodeResult {
    PassingOrder order;
    std::vector<int> indices;
    double log_prob = 0.0;
    std::vector<Eigen::VectorXd> step_probs;
};

DecodeResult decode_order(const PolicyParams& p, const Scenario& s, DecodeMode mode, Rng* rng = nullptr);

struct CriticTrace {
    Eigen::MatrixXd input;
    Eigen::MatrixXd emb;
    Eigen::MatrixXd enc_gates;
    Eigen::MatrixXd enc_c;
    Eigen::MatrixXd enc_h;
    Eigen::VectorXd a1;  // relu(fc1)
    Eigen::VectorXd a2;  // relu(fc2)
    double value = 0.0;
};

CriticTrace critic_forward(const CriticParams& p, const Eigen::MatrixXd& input, double value_scale = 1.0);
/// grad += dvalue * d(value) / d(params)
void critic_backward(const CriticParams& p, const CriticTrace& trace, double dvalue, CriticParams& grad,
                     double value_scale = 1.0);

double critic_value(const CriticParams& p, const Scenario& s, double value_scale = 1.0);

/// Gradient of ln p(order | s) for a given (teacher-forced) order.
PolicyParams grad_logprob(const PolicyParams& p, const Scenario& s, const PassingOrder& order);
/// Gradient of (b(s) - target)^2 / 2.
CriticParams grad_critic(const CriticParams& p, const Scenario& s, double target, double value_scale = 1.0);

}  // namespace passorder
