#pragma once

#include <cstring>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "impure/autograd.hpp"
#include "impure/rng.hpp"

namespace impure::nn {

using json = nlohmann::json;

// Named parameter tensors in registration order. Registration order defines
// the flat layout used by the optimizer and the checkpoint payload, so it
// must be a pure function of the model config.
template <typename T>
class ParamStore {
  public:
    Tensor<T>& add(const std::string& name, std::vector<int64_t> shape) {
        IMPURE_CHECK(!index_.count(name), "duplicate parameter " << name);
        index_[name] = entries_.size();
        entries_.push_back({name, Tensor<T>(std::move(shape))});
        return entries_.back().value;
    }

    // Registers an entry that shares storage with an existing tensor, so a
    // load through this store writes into the original (used by the training
    // state checkpoint to alias model parameters).
    void add_shared(const std::string& name, const Tensor<T>& t) {
        IMPURE_CHECK(!index_.count(name), "duplicate parameter " << name);
        index_[name] = entries_.size();
        entries_.push_back({name, t});
    }
    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        IMPURE_CHECK(it != index_.end(), "unknown parameter " << name);
        return entries_[it->second].value;
    }
    struct Entry {
        std::string name;
        Tensor<T> value;
    };
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    size_t count() const { return entries_.size(); }
    int64_t total_numel() const {
        int64_t n = 0;
        for (auto& e : entries_) n += e.value.numel();
        return n;
    }

    std::vector<T> flatten_values() const {
        std::vector<T> out;
        out.reserve(static_cast<size_t>(total_numel()));
        for (auto& e : entries_) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
        return out;
    }
    void unflatten_values(const std::vector<T>& flat) {
        size_t off = 0;
        for (auto& e : entries_) {
            std::copy(flat.begin() + off, flat.begin() + off + e.value.data().size(),
                      e.value.data().begin());
            off += e.value.data().size();
        }
        IMPURE_CHECK(off == flat.size(), "flat parameter size mismatch");
    }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// One computation graph. Caches a single leaf per parameter tensor so that
// every use of a shared weight accumulates into one gradient buffer.
template <typename T>
class Graph {
  public:
    explicit Graph(bool train) : train_(train) {}
    bool training() const { return train_; }

    ag::Var<T> param(const Tensor<T>& t, bool trainable = true) {
        const void* key = t.ptr();
        auto it = leaves_.find(key);
        if (it != leaves_.end()) return it->second;
        auto v = ag::leaf(t, train_ && trainable);
        leaves_.emplace(key, v);
        return v;
    }
    ag::Var<T> constant(Tensor<T> t) { return ag::constant(std::move(t)); }
    ag::Var<T> input(Tensor<T> t, bool requires_grad) {
        return ag::leaf(std::move(t), requires_grad);
    }

    // Flat parameter gradient in store entry order; zeros where unused.
    void harvest_grads(const ParamStore<T>& store, std::vector<T>& grad_flat) const {
        grad_flat.assign(static_cast<size_t>(store.total_numel()), T(0));
        size_t off = 0;
        for (auto& e : store.entries()) {
            auto it = leaves_.find(e.value.ptr());
            if (it != leaves_.end() && it->second->grad.defined()) {
                const auto& g = it->second->grad.data();
                std::copy(g.begin(), g.end(), grad_flat.begin() + off);
            }
            off += static_cast<size_t>(e.value.numel());
        }
    }

  private:
    bool train_;
    std::unordered_map<const void*, ag::Var<T>> leaves_;
};

// ---- initializers ----

template <typename T>
void trunc_normal_(Tensor<T>& t, double std, Rng& rng) {
    for (auto& v : t.data()) {
        double x;
        do {
            x = rng.normal();
        } while (std::abs(x) > 2.0);
        v = static_cast<T>(x * std);
    }
}

template <typename T>
void fill_(Tensor<T>& t, T v) {
    std::fill(t.data().begin(), t.data().end(), v);
}

// ---- modules ----

template <typename T>
struct Linear {
    Tensor<T> W, b;  // x [R,in] -> x*W + b, W [in,out]
    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& prefix, int64_t in, int64_t out)
        : W(ps.add(prefix + ".W", {in, out})), b(ps.add(prefix + ".b", {out})) {}
    void init(Rng& rng, double std = 0.02) { trunc_normal_(W, std, rng); }
    ag::Var<T> operator()(Graph<T>& g, const ag::Var<T>& x) const {
        return ag::add_rowvec(ag::matmul(x, g.param(W)), g.param(b));
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore<T>& ps, const std::string& prefix, int64_t dim)
        : gamma(ps.add(prefix + ".gamma", {dim})), beta(ps.add(prefix + ".beta", {dim})) {
        fill_(gamma, T(1));
    }
    ag::Var<T> operator()(Graph<T>& g, const ag::Var<T>& x) const {
        return ag::layer_norm(x, g.param(gamma), g.param(beta));
    }
};

template <typename T>
struct MultiHeadAttention {
    Linear<T> qkv, proj;
    int64_t dim = 0, heads = 0;
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<T>& ps, const std::string& prefix, int64_t dim_, int64_t heads_)
        : qkv(ps, prefix + ".qkv", dim_, 3 * dim_),
          proj(ps, prefix + ".proj", dim_, dim_),
          dim(dim_),
          heads(heads_) {
        IMPURE_CHECK(dim % heads == 0, "attention dim not divisible by heads");
    }
    void init(Rng& rng) {
        qkv.init(rng);
        proj.init(rng);
    }
    ag::Var<T> operator()(Graph<T>& g, const ag::Var<T>& x) const {
        const int64_t hd = dim / heads;
        const T att_scale = T(1) / std::sqrt(T(hd));
        auto qkv_out = qkv(g, x);
        std::vector<ag::Var<T>> ctx;
        ctx.reserve(static_cast<size_t>(heads));
        for (int64_t h = 0; h < heads; ++h) {
            auto q = ag::slice_cols(qkv_out, h * hd, hd);
            auto k = ag::slice_cols(qkv_out, dim + h * hd, hd);
            auto v = ag::slice_cols(qkv_out, 2 * dim + h * hd, hd);
            auto scores = ag::scale(ag::matmul(q, ag::transpose(k)), att_scale);
            ctx.push_back(ag::matmul(ag::softmax_rows(scores), v));
        }
        return proj(g, ag::concat_cols(ctx));
    }
};

// Pre-norm transformer block, MLP ratio 4, GELU.
template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    Linear<T> fc1, fc2;
    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& ps, const std::string& prefix, int64_t dim, int64_t heads)
        : ln1(ps, prefix + ".ln1", dim),
          ln2(ps, prefix + ".ln2", dim),
          attn(ps, prefix + ".attn", dim, heads),
          fc1(ps, prefix + ".mlp.fc1", dim, 4 * dim),
          fc2(ps, prefix + ".mlp.fc2", 4 * dim, dim) {}
    void init(Rng& rng) {
        attn.init(rng);
        fc1.init(rng);
        fc2.init(rng);
    }
    ag::Var<T> operator()(Graph<T>& g, const ag::Var<T>& x) const {
        auto h = ag::add(x, attn(g, ln1(g, x)));
        return ag::add(h, fc2(g, ag::gelu(fc1(g, ln2(g, h)))));
    }
};

// ---- fixed 2-D sine-cosine position table ----

// [gh*gw, dim] in row-major grid order; dim must be divisible by 4.
template <typename T>
Tensor<T> sincos_position_table(int64_t gh, int64_t gw, int64_t dim) {
    IMPURE_CHECK(dim % 4 == 0, "position encoding dim must be divisible by 4");
    const int64_t half = dim / 2, quarter = dim / 4;
    std::vector<double> omega(static_cast<size_t>(quarter));
    for (int64_t k = 0; k < quarter; ++k)
        omega[static_cast<size_t>(k)] = 1.0 / std::pow(10000.0, double(k) / double(quarter));
    Tensor<T> out({gh * gw, dim});
    for (int64_t r = 0; r < gh; ++r) {
        for (int64_t c = 0; c < gw; ++c) {
            T* row = out.ptr() + (r * gw + c) * dim;
            for (int64_t k = 0; k < quarter; ++k) {
                double ar = r * omega[static_cast<size_t>(k)];
                double ac = c * omega[static_cast<size_t>(k)];
                row[k] = static_cast<T>(std::sin(ar));
                row[quarter + k] = static_cast<T>(std::cos(ar));
                row[half + k] = static_cast<T>(std::sin(ac));
                row[half + quarter + k] = static_cast<T>(std::cos(ac));
            }
        }
    }
    return out;
}

// ---- optimizer ----

// Adam with decoupled weight decay. Weight decay is skipped for parameters
// whose names end in one of the registered no-decay suffixes (norms, biases,
// mask token), matching the usual transformer recipe.
template <typename T>
class AdamW {
  public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.95;
        double eps = 1e-8;
        double weight_decay = 0.05;
    };

    AdamW(ParamStore<T>& store, Options opt) : store_(&store), opt_(opt) {
        m_.assign(static_cast<size_t>(store.total_numel()), T(0));
        v_.assign(static_cast<size_t>(store.total_numel()), T(0));
        decay_mask_.reserve(static_cast<size_t>(store.total_numel()));
        for (auto& e : store.entries()) {
            bool decay = !(ends_with(e.name, ".b") || ends_with(e.name, ".gamma") ||
                           ends_with(e.name, ".beta") || ends_with(e.name, "mask_token"));
            decay_mask_.insert(decay_mask_.end(), static_cast<size_t>(e.value.numel()), decay);
        }
    }

    void step(double lr, const std::vector<T>& grad_flat) {
        IMPURE_CHECK(grad_flat.size() == m_.size(), "optimizer/gradient size mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
        size_t off = 0;
        for (auto& e : store_->entries()) {
            T* p = e.value.ptr();
            for (int64_t i = 0; i < e.value.numel(); ++i, ++off) {
                double g = double(grad_flat[off]);
                double m = opt_.beta1 * double(m_[off]) + (1.0 - opt_.beta1) * g;
                double v = opt_.beta2 * double(v_[off]) + (1.0 - opt_.beta2) * g * g;
                m_[off] = T(m);
                v_[off] = T(v);
                double update = (m / bc1) / (std::sqrt(v / bc2) + opt_.eps);
                if (decay_mask_[off]) update += opt_.weight_decay * double(p[i]);
                p[i] = T(double(p[i]) - lr * update);
            }
        }
    }

    int64_t steps_taken() const { return t_; }
    const Options& options() const { return opt_; }
    std::vector<T>& moment1() { return m_; }
    std::vector<T>& moment2() { return v_; }
    void set_steps_taken(int64_t t) { t_ = t; }

  private:
    static bool ends_with(const std::string& s, const std::string& suf) {
        return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    }
    ParamStore<T>* store_;
    Options opt_;
    std::vector<T> m_, v_;
    std::vector<bool> decay_mask_;
    int64_t t_ = 0;
};

inline double cosine_lr(double lr0, int64_t epoch, int64_t total_epochs) {
    if (total_epochs <= 0) return lr0;
    return 0.5 * lr0 * (1.0 + std::cos(M_PI * double(epoch) / double(total_epochs)));
}

// ---- checkpoint format ----
//
// "IMPURE01" magic, uint32 little-endian JSON header length, JSON header,
// then float64 payload for each tensor in header order. float32 models are
// widened to float64 on disk, which is exact in both directions.

struct CheckpointHeader {
    std::string kind;
    json config;
    std::string config_hash;
    json extra;
};

inline std::string config_hash_of(const json& config) {
    return hex64(fnv1a64(config.dump()));
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const json& config, const ParamStore<T>& store, const json& extra = json::object()) {
    json header;
    header["kind"] = kind;
    header["config"] = config;
    header["config_hash"] = config_hash_of(config);
    header["extra"] = extra;
    json tensors = json::array();
    for (auto& e : store.entries()) tensors.push_back({{"name", e.name}, {"shape", e.value.shape()}});
    header["tensors"] = tensors;
    std::string hs = header.dump();

    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write("IMPURE01", 8);
        uint32_t len = static_cast<uint32_t>(hs.size());
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (auto& e : store.entries()) {
            for (const T& v : e.value.data()) {
                double d = double(v);
                out.write(reinterpret_cast<const char*>(&d), 8);
            }
        }
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline CheckpointHeader read_checkpoint_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "IMPURE01", 8) != 0)
        throw DecodeError("not a checkpoint file: " + path);
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    if (!in) throw DecodeError("truncated checkpoint header: " + path);
    json h = json::parse(hs, nullptr, false);
    if (h.is_discarded()) throw DecodeError("bad checkpoint header json: " + path);
    CheckpointHeader out;
    out.kind = h.at("kind").get<std::string>();
    out.config = h.at("config");
    out.config_hash = h.at("config_hash").get<std::string>();
    out.extra = h.value("extra", json::object());
    return out;
}

// Loads payload into an already-constructed store; names and shapes must match.
template <typename T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path, const std::string& expect_kind,
                                 ParamStore<T>& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    CheckpointHeader hdr = read_checkpoint_header(in, path.string());
    IMPURE_CHECK(hdr.kind == expect_kind,
                 "checkpoint kind " << hdr.kind << ", expected " << expect_kind);
    // Re-read header json for tensor list.
    in.seekg(8);
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    json h = json::parse(hs);
    auto tensors = h.at("tensors");
    IMPURE_CHECK(tensors.size() == store.count(), "checkpoint tensor count mismatch");
    size_t i = 0;
    for (auto& e : store.entries()) {
        auto& te = tensors[i++];
        IMPURE_CHECK(te.at("name") == e.name, "checkpoint tensor order mismatch at " << e.name);
        auto shape = te.at("shape").get<std::vector<int64_t>>();
        IMPURE_CHECK(shape == e.value.shape(), "checkpoint tensor shape mismatch at " << e.name);
        for (auto& v : e.value.data()) {
            double d;
            in.read(reinterpret_cast<char*>(&d), 8);
            v = T(d);
        }
    }
    if (!in) throw DecodeError("truncated checkpoint payload: " + path.string());
    return hdr;
}

}  // namespace impure::nn
