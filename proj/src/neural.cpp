#include "passorder/neural.hpp"

#include <cmath>
#include <limits>

#include "passorder/errors.hpp"

namespace passorder {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

LstmParams lstm_zeros(int in, int d) {
    return {MatrixXd::Zero(4 * d, in), MatrixXd::Zero(4 * d, d), VectorXd::Zero(4 * d)};
}

void push_view(std::vector<ParamView>& out, std::string name, MatrixXd& m) {
    out.push_back({std::move(name), m.data(), m.rows(), m.cols()});
}
void push_view(std::vector<ParamView>& out, std::string name, VectorXd& v) {
    out.push_back({std::move(name), v.data(), v.rows(), 1});
}
void push_lstm(std::vector<ParamView>& out, const std::string& prefix, LstmParams& p) {
    push_view(out, prefix + ".Wx", p.Wx);
    push_view(out, prefix + ".Wh", p.Wh);
    push_view(out, prefix + ".b", p.b);
}

Index count_of(const std::vector<ParamView>& views) {
    Index n = 0;
    for (const auto& v : views) n += v.size();
    return n;
}

VectorXd sigmoid(const VectorXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

struct LstmSeq {
    MatrixXd gates;  // 4d x T, post-activation
    MatrixXd c;      // d x T
    MatrixXd h;      // d x T
};

// One cell update; writes column t of the sequence cache.
void lstm_step(const LstmParams& p, const VectorXd& zx, const VectorXd& h_prev, const VectorXd& c_prev, LstmSeq& seq,
               Index t) {
    const Index d = p.Wh.cols();
    VectorXd z = zx + p.Wh * h_prev + p.b;
    VectorXd i = sigmoid(z.segment(0, d));
    VectorXd f = sigmoid(z.segment(d, d));
    VectorXd g = z.segment(2 * d, d).array().tanh().matrix();
    VectorXd o = sigmoid(z.segment(3 * d, d));
    VectorXd c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    seq.gates.col(t) << i, f, g, o;
    seq.c.col(t) = c;
    seq.h.col(t) = o.cwiseProduct(c.array().tanh().matrix());
}

LstmSeq lstm_forward(const LstmParams& p, const MatrixXd& x) {
    const Index d = p.Wh.cols();
    const Index T = x.cols();
    LstmSeq seq{MatrixXd(4 * d, T), MatrixXd(d, T), MatrixXd(d, T)};
    const MatrixXd zx = p.Wx * x;
    VectorXd h = VectorXd::Zero(d);
    VectorXd c = VectorXd::Zero(d);
    for (Index t = 0; t < T; ++t) {
        lstm_step(p, zx.col(t), h, c, seq, t);
        h = seq.h.col(t);
        c = seq.c.col(t);
    }
    return seq;
}

// Backpropagation through time. dH holds dL/dh_t from outside the recurrence; dh_last / dc_last
// are extra gradients on the final state. Returns dL/dx; dh0 / dc0 receive the initial-state gradients.
MatrixXd lstm_backward(const LstmParams& p, const MatrixXd& x, const VectorXd& h0, const VectorXd& c0,
                       const LstmSeq& seq, const MatrixXd& dH, const VectorXd& dh_last, const VectorXd& dc_last,
                       LstmParams& grad, VectorXd* dh0, VectorXd* dc0) {
    const Index d = p.Wh.cols();
    const Index T = x.cols();
    MatrixXd dZ(4 * d, T);
    MatrixXd h_prev_all(d, T);
    VectorXd dh_next = dh_last;
    VectorXd dc_next = dc_last;
    for (Index t = T - 1; t >= 0; --t) {
        const VectorXd c_prev = t > 0 ? VectorXd(seq.c.col(t - 1)) : c0;
        h_prev_all.col(t) = t > 0 ? VectorXd(seq.h.col(t - 1)) : h0;
        const auto i = seq.gates.col(t).segment(0, d).array();
        const auto f = seq.gates.col(t).segment(d, d).array();
        const auto g = seq.gates.col(t).segment(2 * d, d).array();
        const auto o = seq.gates.col(t).segment(3 * d, d).array();
        const Eigen::ArrayXd tc = seq.c.col(t).array().tanh();
        const Eigen::ArrayXd dh = (dH.col(t) + dh_next).array();
        const Eigen::ArrayXd dct = dc_next.array() + dh * o * (1.0 - tc * tc);
        dZ.col(t).segment(0, d) = (dct * g * i * (1.0 - i)).matrix();
        dZ.col(t).segment(d, d) = (dct * c_prev.array() * f * (1.0 - f)).matrix();
        dZ.col(t).segment(2 * d, d) = (dct * i * (1.0 - g * g)).matrix();
        dZ.col(t).segment(3 * d, d) = (dh * tc * o * (1.0 - o)).matrix();
        dc_next = (dct * f).matrix();
        dh_next = p.Wh.transpose() * dZ.col(t);
    }
    grad.Wx.noalias() += dZ * x.transpose();
    grad.Wh.noalias() += dZ * h_prev_all.transpose();
    grad.b += dZ.rowwise().sum();
    if (dh0) *dh0 = dh_next;
    if (dc0) *dc0 = dc_next;
    return p.Wx.transpose() * dZ;
}

}  // namespace

PolicyParams PolicyParams::zeros(const NetDims& dims) {
    PolicyParams p;
    p.embed_W = MatrixXd::Zero(dims.d_emb, dims.pointer_in);
    p.embed_b = VectorXd::Zero(dims.d_emb);
    p.encoder = lstm_zeros(dims.d_emb, dims.d);
    p.decoder = lstm_zeros(dims.d_emb, dims.d);
    p.att_v = VectorXd::Zero(dims.d);
    p.att_W1 = MatrixXd::Zero(dims.d, dims.d);
    p.att_W2 = MatrixXd::Zero(dims.d, dims.d);
    p.g = VectorXd::Zero(dims.d_emb);
    return p;
}

std::vector<ParamView> PolicyParams::views() {
    std::vector<ParamView> out;
    push_view(out, "pointer.embed.W", embed_W);
    push_view(out, "pointer.embed.b", embed_b);
    push_lstm(out, "pointer.encoder", encoder);
    push_lstm(out, "pointer.decoder", decoder);
    push_view(out, "pointer.attention.v", att_v);
    push_view(out, "pointer.attention.W1", att_W1);
    push_view(out, "pointer.attention.W2", att_W2);
    push_view(out, "pointer.g", g);
    return out;
}

Index PolicyParams::parameter_count() const { return count_of(views()); }

CriticParams CriticParams::zeros(const NetDims& dims) {
    CriticParams p;
    p.embed_W = MatrixXd::Zero(dims.d_emb, dims.critic_in);
    p.embed_b = VectorXd::Zero(dims.d_emb);
    p.encoder = lstm_zeros(dims.d_emb, dims.d);
    p.fc1_W = MatrixXd::Zero(dims.fc1, dims.d);
    p.fc1_b = VectorXd::Zero(dims.fc1);
    p.fc2_W = MatrixXd::Zero(dims.fc2, dims.fc1);
    p.fc2_b = VectorXd::Zero(dims.fc2);
    p.fc3_W = MatrixXd::Zero(1, dims.fc2);
    p.fc3_b = VectorXd::Zero(1);
    return p;
}

std::vector<ParamView> CriticParams::views() {
    std::vector<ParamView> out;
    push_view(out, "critic.embed.W", embed_W);
    push_view(out, "critic.embed.b", embed_b);
    push_lstm(out, "critic.encoder", encoder);
    push_view(out, "critic.fc1.W", fc1_W);
    push_view(out, "critic.fc1.b", fc1_b);
    push_view(out, "critic.fc2.W", fc2_W);
    push_view(out, "critic.fc2.b", fc2_b);
    push_view(out, "critic.fc3.W", fc3_W);
    push_view(out, "critic.fc3.b", fc3_b);
    return out;
}

Index CriticParams::parameter_count() const { return count_of(views()); }

VectorXd flatten(std::vector<ParamView> views) {
    VectorXd flat(count_of(views));
    Index off = 0;
    for (const auto& v : views) {
        flat.segment(off, v.size()) = Eigen::Map<const VectorXd>(v.data, v.size());
        off += v.size();
    }
    return flat;
}

void unflatten(const VectorXd& flat, std::vector<ParamView> views) {
    if (flat.size() != count_of(views)) throw ContractViolation("unflatten: size mismatch");
    Index off = 0;
    for (auto& v : views) {
        Eigen::Map<VectorXd>(v.data, v.size()) = flat.segment(off, v.size());
        off += v.size();
    }
}

void init_uniform(std::vector<ParamView> views, double bound, Rng& rng) {
    for (auto& v : views) {
        for (Index k = 0; k < v.size(); ++k) v.data[k] = rng.uniform(-bound, bound);
    }
}

Networks init_params(const NetDims& dims, Rng& rng) {
    if (dims.d_emb < 1 || dims.d < 1 || dims.fc1 < 1 || dims.fc2 < 1 || dims.pointer_in < 1 || dims.critic_in < 1) {
        throw ConfigError("network dimensions must be positive");
    }
    Networks n{dims, PolicyParams::zeros(dims), CriticParams::zeros(dims)};
    const double r = 1.0 / std::sqrt(static_cast<double>(dims.d));
    init_uniform(n.policy.views(), r, rng);
    init_uniform(n.critic.views(), r, rng);
    return n;
}

namespace {

// Masked softmax of the attention logits; also returns the tanh activations for backprop.
VectorXd attend(const PolicyParams& p, const MatrixXd& proj_e, const VectorXd& dec_h, const std::vector<char>& selected,
                MatrixXd& act) {
    const Index n = proj_e.cols();
    act = (proj_e.colwise() + p.att_W2 * dec_h).array().tanh().matrix();
    const VectorXd u = act.transpose() * p.att_v;
    double umax = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
        if (!selected[static_cast<std::size_t>(i)]) umax = std::max(umax, u(i));
    }
    if (!std::isfinite(umax)) throw ContractViolation("attention over a fully selected sequence");
    VectorXd prob = VectorXd::Zero(n);
    double z = 0.0;
    for (Index i = 0; i < n; ++i) {
        if (!selected[static_cast<std::size_t>(i)]) {
            prob(i) = std::exp(u(i) - umax);
            z += prob(i);
        }
    }
    return prob / z;
}

}  // namespace

VectorXd attention_scores(const PolicyParams& p, const MatrixXd& encoder_states, const VectorXd& decoder_state,
                          const std::vector<char>& selected) {
    if (static_cast<Index>(selected.size()) != encoder_states.cols()) {
        throw ContractViolation("attention_scores: mask length differs from sequence length");
    }
    MatrixXd act;
    return attend(p, p.att_W1 * encoder_states, decoder_state, selected, act);
}

PolicyTrace policy_forward(const PolicyParams& p, const MatrixXd& input, DecodeMode mode, Rng* rng,
                           const std::vector<int>* forced) {
    const Index n = input.cols();
    if (n < 1) throw ContractViolation("decode needs at least one vehicle");
    if (mode == DecodeMode::sample && !rng) throw ContractViolation("sample mode needs a random source");
    if (mode == DecodeMode::forced && (!forced || static_cast<Index>(forced->size()) != n)) {
        throw ContractViolation("forced decode needs a full order");
    }
    const Index d = p.att_v.size();
    PolicyTrace tr;
    tr.input = input;
    tr.emb = (p.embed_W * input).colwise() + p.embed_b;
    LstmSeq enc = lstm_forward(p.encoder, tr.emb);
    tr.enc_gates = std::move(enc.gates);
    tr.enc_c = std::move(enc.c);
    tr.enc_h = std::move(enc.h);
    tr.proj_e = p.att_W1 * tr.enc_h;

    LstmSeq dec{MatrixXd(4 * d, n), MatrixXd(d, n), MatrixXd(d, n)};
    tr.dec_in.resize(p.g.size(), n);
    tr.att_tanh.resize(static_cast<std::size_t>(n));
    std::vector<char> selected(static_cast<std::size_t>(n), 0);
    VectorXd h = tr.enc_h.col(n - 1);
    VectorXd c = tr.enc_c.col(n - 1);
    VectorXd x = p.g;
    for (Index k = 0; k < n; ++k) {
        tr.dec_in.col(k) = x;
        lstm_step(p.decoder, p.decoder.Wx * x, h, c, dec, k);
        h = dec.h.col(k);
        c = dec.c.col(k);
        VectorXd prob = attend(p, tr.proj_e, h, selected, tr.att_tanh[static_cast<std::size_t>(k)]);
        int pick = -1;
        if (mode == DecodeMode::forced) {
            pick = (*forced)[static_cast<std::size_t>(k)];
            if (pick < 0 || pick >= n || selected[static_cast<std::size_t>(pick)]) {
                throw ContractViolation("forced order is not a permutation");
            }
        } else if (mode == DecodeMode::greedy) {
            double best = -1.0;
            for (Index i = 0; i < n; ++i) {
                if (!selected[static_cast<std::size_t>(i)] && prob(i) > best) {
                    best = prob(i);
                    pick = static_cast<int>(i);
                }
            }
        } else {
            const double r = rng->uniform();
            double acc = 0.0;
            for (Index i = 0; i < n; ++i) {
                if (selected[static_cast<std::size_t>(i)]) continue;
                pick = static_cast<int>(i);  // last unselected absorbs rounding
                acc += prob(i);
                if (r < acc) break;
            }
        }
        tr.log_prob += std::log(prob(pick));
        selected[static_cast<std::size_t>(pick)] = 1;
        tr.order.push_back(pick);
        tr.step_probs.push_back(std::move(prob));
        x = tr.emb.col(pick);
    }
    tr.dec_gates = std::move(dec.gates);
    tr.dec_c = std::move(dec.c);
    tr.dec_h = std::move(dec.h);
    return tr;
}

void policy_backward(const PolicyParams& p, const PolicyTrace& tr, double scale, PolicyParams& grad) {
    const Index n = tr.input.cols();
    const Index d = p.att_v.size();
    MatrixXd d_proj = MatrixXd::Zero(d, n);
    MatrixXd d_dec_h = MatrixXd::Zero(d, n);
    for (Index k = 0; k < n; ++k) {
        const VectorXd& prob = tr.step_probs[static_cast<std::size_t>(k)];
        const MatrixXd& act = tr.att_tanh[static_cast<std::size_t>(k)];
        // d log softmax(u)_pick / du = onehot(pick) - prob; masked entries have prob 0 and get 0.
        VectorXd du = -prob * scale;
        du(tr.order[static_cast<std::size_t>(k)]) += scale;
        for (Index i = 0; i < k; ++i) du(tr.order[static_cast<std::size_t>(i)]) = 0.0;
        grad.att_v.noalias() += act * du;
        const MatrixXd d_pre = ((p.att_v * du.transpose()).array() * (1.0 - act.array().square())).matrix();
        d_proj += d_pre;
        const VectorXd dw = d_pre.rowwise().sum();
        grad.att_W2.noalias() += dw * tr.dec_h.col(k).transpose();
        d_dec_h.col(k) = p.att_W2.transpose() * dw;
    }
    grad.att_W1.noalias() += d_proj * tr.enc_h.transpose();
    MatrixXd d_enc_h = p.att_W1.transpose() * d_proj;

    const LstmSeq dec{tr.dec_gates, tr.dec_c, tr.dec_h};
    VectorXd dh0;
    VectorXd dc0;
    const MatrixXd d_dec_in = lstm_backward(p.decoder, tr.dec_in, tr.enc_h.col(n - 1), tr.enc_c.col(n - 1), dec, d_dec_h,
                                            VectorXd::Zero(d), VectorXd::Zero(d), grad.decoder, &dh0, &dc0);
    MatrixXd d_emb = MatrixXd::Zero(tr.emb.rows(), n);
    grad.g += d_dec_in.col(0);
    for (Index k = 1; k < n; ++k) d_emb.col(tr.order[static_cast<std::size_t>(k - 1)]) += d_dec_in.col(k);

    const LstmSeq enc{tr.enc_gates, tr.enc_c, tr.enc_h};
    d_emb += lstm_backward(p.encoder, tr.emb, VectorXd::Zero(d), VectorXd::Zero(d), enc, d_enc_h, dh0, dc0,
                           grad.encoder, nullptr, nullptr);
    grad.embed_W.noalias() += d_emb * tr.input.transpose();
    grad.embed_b += d_emb.rowwise().sum();
}

DecodeResult decode_order(const PolicyParams& p, const Scenario& s, DecodeMode mode, Rng* rng) {
    if (mode == DecodeMode::forced) throw ContractViolation("decode_order: use grad_logprob for forced decoding");
    PolicyTrace tr = policy_forward(p, encode_pointer_input(s), mode, rng);
    DecodeResult r;
    r.indices = tr.order;
    r.order = order_from_indices(tr.order, s);
    r.log_prob = tr.log_prob;
    r.step_probs = std::move(tr.step_probs);
    return r;
}

CriticTrace critic_forward(const CriticParams& p, const MatrixXd& input, double value_scale) {
    if (input.cols() < 1) throw ContractViolation("critic needs at least one vehicle");
    if (input.rows() != p.embed_W.cols()) throw ContractViolation("critic input width does not match the embedding");
    CriticTrace tr;
    tr.input = input;
    tr.emb = (p.embed_W * input).colwise() + p.embed_b;
    LstmSeq enc = lstm_forward(p.encoder, tr.emb);
    tr.enc_gates = std::move(enc.gates);
    tr.enc_c = std::move(enc.c);
    tr.enc_h = std::move(enc.h);
    const VectorXd last = tr.enc_h.col(input.cols() - 1);
    tr.a1 = (p.fc1_W * last + p.fc1_b).cwiseMax(0.0);
    tr.a2 = (p.fc2_W * tr.a1 + p.fc2_b).cwiseMax(0.0);
    tr.value = value_scale * ((p.fc3_W * tr.a2)(0) + p.fc3_b(0));
    return tr;
}

void critic_backward(const CriticParams& p, const CriticTrace& tr, double dvalue, CriticParams& grad,
                     double value_scale) {
    const Index n = tr.input.cols();
    dvalue *= value_scale;
    const Index d = p.encoder.Wh.cols();
    grad.fc3_W.noalias() += dvalue * tr.a2.transpose();
    grad.fc3_b(0) += dvalue;
    const VectorXd dz2 = ((p.fc3_W.transpose() * dvalue).array() * (tr.a2.array() > 0.0).cast<double>()).matrix();
    grad.fc2_W.noalias() += dz2 * tr.a1.transpose();
    grad.fc2_b += dz2;
    const VectorXd dz1 = ((p.fc2_W.transpose() * dz2).array() * (tr.a1.array() > 0.0).cast<double>()).matrix();
    grad.fc1_W.noalias() += dz1 * tr.enc_h.col(n - 1).transpose();
    grad.fc1_b += dz1;
    MatrixXd dH = MatrixXd::Zero(d, n);
    dH.col(n - 1) = p.fc1_W.transpose() * dz1;
    const LstmSeq enc{tr.enc_gates, tr.enc_c, tr.enc_h};
    const MatrixXd d_emb = lstm_backward(p.encoder, tr.emb, VectorXd::Zero(d), VectorXd::Zero(d), enc, dH,
                                         VectorXd::Zero(d), VectorXd::Zero(d), grad.encoder, nullptr, nullptr);
    grad.embed_W.noalias() += d_emb * tr.input.transpose();
    grad.embed_b += d_emb.rowwise().sum();
}

double critic_value(const CriticParams& p, const Scenario& s, double value_scale) {
    return critic_forward(p, encode_critic_input(s), value_scale).value;
}

PolicyParams grad_logprob(const PolicyParams& p, const Scenario& s, const PassingOrder& order) {
    const std::vector<int> idx = order_indices(order, s);
    const PolicyTrace tr = policy_forward(p, encode_pointer_input(s), DecodeMode::forced, nullptr, &idx);
    NetDims dims;
    dims.d_emb = static_cast<int>(p.embed_W.rows());
    dims.d = static_cast<int>(p.att_v.size());
    dims.pointer_in = static_cast<int>(p.embed_W.cols());
    PolicyParams grad = PolicyParams::zeros(dims);
    policy_backward(p, tr, 1.0, grad);
    return grad;
}

CriticParams grad_critic(const CriticParams& p, const Scenario& s, double target, double value_scale) {
    const CriticTrace tr = critic_forward(p, encode_critic_input(s), value_scale);
    NetDims dims;
    dims.d_emb = static_cast<int>(p.embed_W.rows());
    dims.d = static_cast<int>(p.encoder.Wh.cols());
    dims.critic_in = static_cast<int>(p.embed_W.cols());
    dims.fc1 = static_cast<int>(p.fc1_W.rows());
    dims.fc2 = static_cast<int>(p.fc2_W.rows());
    CriticParams grad = CriticParams::zeros(dims);
    critic_backward(p, tr, tr.value - target, grad, value_scale);
    return grad;
}

}  // namespace passorder
