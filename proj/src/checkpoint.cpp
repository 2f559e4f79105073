#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

#include "passorder/errors.hpp"
#include "passorder/training.hpp"

namespace passorder {

namespace {

constexpr char kMagic[8] = {'P', 'O', 'R', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    } else {
        return v;
    }
}

class Writer {
public:
    template <class T>
    void put(T v) {
        v = to_little(v);
        out_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void put_string(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        out_.append(s);
    }
    void put_matrix(std::string_view name, const double* data, Eigen::Index rows, Eigen::Index cols) {
        put_string(name);
        put(static_cast<std::uint64_t>(rows));
        put(static_cast<std::uint64_t>(cols));
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) put(data[c * rows + r]);  // storage is column-major
        }
    }
    std::string finish() {
        put(fnv1a64(out_));
        return std::move(out_);
    }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    template <class T>
    T get() {
        if (pos_ + sizeof(T) > in_.size()) throw IoError("checkpoint truncated");
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return to_little(v);
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        if (pos_ + n > in_.size()) throw IoError("checkpoint truncated");
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    void get_matrix(std::string_view name, double* data, Eigen::Index rows, Eigen::Index cols) {
        const std::string got = get_string();
        if (got != name) throw IoError("checkpoint: expected group '" + std::string(name) + "', found '" + got + "'");
        const auto r = get<std::uint64_t>();
        const auto c = get<std::uint64_t>();
        if (r != static_cast<std::uint64_t>(rows) || c != static_cast<std::uint64_t>(cols)) {
            throw IoError("checkpoint: group '" + got + "' has shape " + std::to_string(r) + "x" + std::to_string(c) +
                          ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
        }
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) data[j * rows + i] = get<double>();
        }
    }
    std::size_t pos() const { return pos_; }

private:
    std::string_view in_;
    std::size_t pos_ = 0;
};

void put_adam(Writer& w, const std::string& name, const AdamState& st, Eigen::Index size) {
    w.put(static_cast<std::uint64_t>(st.t));
    if (st.t == 0) return;
    if (st.m.size() != size) throw ContractViolation("checkpoint: optimizer state size mismatch");
    w.put_matrix(name + ".m", st.m.data(), size, 1);
    w.put_matrix(name + ".v", st.v.data(), size, 1);
}

AdamState get_adam(Reader& r, const std::string& name, Eigen::Index size) {
    AdamState st;
    st.t = static_cast<std::int64_t>(r.get<std::uint64_t>());
    if (st.t == 0) return st;
    st.m.resize(size);
    st.v.resize(size);
    r.get_matrix(name + ".m", st.m.data(), size, 1);
    r.get_matrix(name + ".v", st.v.data(), size, 1);
    return st;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
    const TrainState& s = c.state;
    const NetDims& d = s.nets.dims;
    Writer w;
    for (char ch : kMagic) w.put(ch);
    w.put(kVersion);
    for (int v : {d.d_emb, d.d, d.pointer_in, d.critic_in, d.fc1, d.fc2}) w.put(static_cast<std::uint32_t>(v));
    w.put(d.value_scale);
    w.put(static_cast<std::uint64_t>(s.iteration));
    w.put(static_cast<std::uint32_t>(s.epoch));
    w.put_string(c.meta.dump());
    const auto pv = s.nets.policy.views();
    const auto cv = s.nets.critic.views();
    w.put(static_cast<std::uint32_t>(pv.size() + cv.size()));
    for (const auto& v : pv) w.put_matrix(v.name, v.data, v.rows, v.cols);
    for (const auto& v : cv) w.put_matrix(v.name, v.data, v.rows, v.cols);
    put_adam(w, "adam.policy", s.policy_opt, s.nets.policy.parameter_count());
    put_adam(w, "adam.critic", s.critic_opt, s.nets.critic.parameter_count());
    return w.finish();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw IoError("not a passorder checkpoint (bad magic)");
    }
    const std::string_view body = bytes.substr(0, bytes.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), 8);
    if (to_little(stored) != fnv1a64(body)) throw IoError("checkpoint checksum mismatch");

    Reader r(body);
    for (std::size_t k = 0; k < sizeof kMagic; ++k) r.get<char>();
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    NetDims& d = c.state.nets.dims;
    for (int* f : {&d.d_emb, &d.d, &d.pointer_in, &d.critic_in, &d.fc1, &d.fc2}) {
        *f = static_cast<int>(r.get<std::uint32_t>());
    }
    d.value_scale = r.get<double>();
    c.state.iteration = static_cast<std::int64_t>(r.get<std::uint64_t>());
    c.state.epoch = static_cast<int>(r.get<std::uint32_t>());
    try {
        c.meta = json::parse(r.get_string());
    } catch (const json::parse_error&) {
        throw IoError("checkpoint metadata is not valid JSON");
    }
    c.state.nets.policy = PolicyParams::zeros(d);
    c.state.nets.critic = CriticParams::zeros(d);
    auto pv = c.state.nets.policy.views();
    auto cv = c.state.nets.critic.views();
    if (r.get<std::uint32_t>() != pv.size() + cv.size()) throw IoError("checkpoint: unexpected weight group count");
    for (auto& v : pv) r.get_matrix(v.name, v.data, v.rows, v.cols);
    for (auto& v : cv) r.get_matrix(v.name, v.data, v.rows, v.cols);
    c.state.policy_opt = get_adam(r, "adam.policy", c.state.nets.policy.parameter_count());
    c.state.critic_opt = get_adam(r, "adam.critic", c.state.nets.critic.parameter_count());
    if (r.pos() != body.size()) throw IoError("checkpoint has trailing bytes");
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) { write_text_file(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) {
    try {
        return decode_checkpoint(read_text_file(path));
    } catch (const IoError& e) {
        throw IoError("'" + path + "': " + e.what());
    }
}

}  // namespace passorder
