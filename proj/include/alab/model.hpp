#pragma once
// Factorized transformer encoder: the positional matrix P is concatenated
// (never added) to the layer-normed stream before every attention and MLP
// subblock, so the residual stream carries token information only.
//
// Per block:   Y = Z + attn([ln(Z), P]),   Z' = Y + mlp([ln(Y), P])
// Head:        logits_i = head(ln(Z_final)_i)
// Attention is full bidirectional (no causal mask).

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "alab/hod.hpp"
#include "alab/io.hpp"
#include "alab/rng.hpp"
#include "alab/tensor.hpp"

namespace alab {

// ---------------------------------------------------------------------------
// Computational stages
// ---------------------------------------------------------------------------

// 13 labels: index 0 is b0_z (initial token embeddings); block b then exposes
// attn_update, mlp_in, mlp_update, z_attn_mlp at indices 1+4b .. 4+4b.
constexpr int kStagesPerBlock = 4;

inline int num_stages(int k_b) { return 1 + kStagesPerBlock * k_b; }

inline std::string stage_label(int idx) {
    if (idx == 0) return "b0_z";
    static const char* kind[] = {"attn_update", "mlp_in", "mlp_update", "z_attn_mlp"};
    int b = (idx - 1) / kStagesPerBlock;
    int k = (idx - 1) % kStagesPerBlock;
    return "b" + std::to_string(b) + "_" + kind[k];
}

inline int stage_index(const std::string& label, int k_b = 3) {
    for (int i = 0; i < num_stages(k_b); ++i)
        if (stage_label(i) == label) return i;
    throw std::invalid_argument("unknown stage label: " + label);
}

inline int stage_of(int block, int kind_in_block) { return 1 + kStagesPerBlock * block + kind_in_block; }

// Observation/intervention point. Called right after the stage value is
// computed and before anything consumes it; mutating the tensor's data (in
// no-grad mode) edits all downstream computation.
template <class T>
using StageHook = std::function<void(int stage, Tensor<T>&)>;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct VanillaConfig {
    int n = 8;
    int k_b = 3;
    int k_h = 2;
    int d_e = 64;
    int d_p = 32;
    int d_mlp = 128;
    int V_t = 21;

    int tokens() const { return n * n; }

    void validate() const {
        if (d_e % k_h != 0)
            throw std::invalid_argument("VanillaConfig: d_e=" + std::to_string(d_e) +
                                        " not divisible by k_h=" + std::to_string(k_h));
        if (n <= 0 || k_b <= 0 || d_p <= 0 || d_mlp <= 0 || V_t <= 1)
            throw std::invalid_argument("VanillaConfig: non-positive dimension");
    }
};

template <class T>
struct LayerNormParams {
    Tensor<T> gain, bias;
};

template <class T>
struct AttentionParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class T>
struct MlpParams {
    Tensor<T> w1, b1, w2, b2;
};

template <class T>
struct VanillaBlock {
    LayerNormParams<T> ln_attn, ln_mlp;
    AttentionParams<T> attn;
    MlpParams<T> mlp;
};

template <class T>
struct VanillaModel {
    VanillaConfig config;
    uint64_t seed = 0;
    Tensor<T> token_embeddings;  // V_t x d_e
    Tensor<T> positional;        // n^2 x d_p, shared across all stages
    std::vector<VanillaBlock<T>> blocks;
    LayerNormParams<T> ln_final;
    Tensor<T> head_w, head_b;  // d_e x V_t, V_t

    // Stable name -> tensor view, in construction order.
    std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.push_back({"token_embeddings", token_embeddings});
        out.push_back({"positional", positional});
        for (size_t b = 0; b < blocks.size(); ++b) {
            const auto& blk = blocks[b];
            std::string p = "blocks." + std::to_string(b) + ".";
            out.push_back({p + "ln_attn.gain", blk.ln_attn.gain});
            out.push_back({p + "ln_attn.bias", blk.ln_attn.bias});
            out.push_back({p + "attn.wq", blk.attn.wq});
            out.push_back({p + "attn.bq", blk.attn.bq});
            out.push_back({p + "attn.wk", blk.attn.wk});
            out.push_back({p + "attn.bk", blk.attn.bk});
            out.push_back({p + "attn.wv", blk.attn.wv});
            out.push_back({p + "attn.bv", blk.attn.bv});
            out.push_back({p + "attn.wo", blk.attn.wo});
            out.push_back({p + "attn.bo", blk.attn.bo});
            out.push_back({p + "ln_mlp.gain", blk.ln_mlp.gain});
            out.push_back({p + "ln_mlp.bias", blk.ln_mlp.bias});
            out.push_back({p + "mlp.w1", blk.mlp.w1});
            out.push_back({p + "mlp.b1", blk.mlp.b1});
            out.push_back({p + "mlp.w2", blk.mlp.w2});
            out.push_back({p + "mlp.b2", blk.mlp.b2});
        }
        out.push_back({"ln_final.gain", ln_final.gain});
        out.push_back({"ln_final.bias", ln_final.bias});
        out.push_back({"head.w", head_w});
        out.push_back({"head.b", head_b});
        return out;
    }

    void zero_grads() const {
        for (auto& [name, t] : named_params()) const_cast<Tensor<T>&>(t).zero_grad();
    }
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
Tensor<T> normal_param(Shape shape, Rng& rng, double std_dev = 0.02) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, std_dev));
    return Tensor<T>::param(std::move(shape), std::move(v));
}

template <class T>
Tensor<T> zeros_param(Shape shape) {
    std::vector<T> v(shape_numel(shape), T(0));
    return Tensor<T>::param(std::move(shape), std::move(v));
}

template <class T>
Tensor<T> ones_param(Shape shape) {
    std::vector<T> v(shape_numel(shape), T(1));
    return Tensor<T>::param(std::move(shape), std::move(v));
}

template <class T>
LayerNormParams<T> init_layer_norm(int d) {
    return {ones_param<T>({d}), zeros_param<T>({d})};
}

template <class T>
AttentionParams<T> init_attention(int d_in, int d_e, Rng& rng) {
    AttentionParams<T> p;
    p.wq = normal_param<T>({d_in, d_e}, rng);
    p.bq = zeros_param<T>({d_e});
    p.wk = normal_param<T>({d_in, d_e}, rng);
    p.bk = zeros_param<T>({d_e});
    p.wv = normal_param<T>({d_in, d_e}, rng);
    p.bv = zeros_param<T>({d_e});
    p.wo = normal_param<T>({d_e, d_e}, rng);
    p.bo = zeros_param<T>({d_e});
    return p;
}

template <class T>
MlpParams<T> init_mlp(int d_in, int d_hidden, int d_out, Rng& rng) {
    MlpParams<T> p;
    p.w1 = normal_param<T>({d_in, d_hidden}, rng);
    p.b1 = zeros_param<T>({d_hidden});
    p.w2 = normal_param<T>({d_hidden, d_out}, rng);
    p.b2 = zeros_param<T>({d_out});
    return p;
}

}  // namespace detail

template <class T>
VanillaModel<T> init_vanilla(const VanillaConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "vanilla_init"));
    VanillaModel<T> m;
    m.config = cfg;
    m.seed = seed;
    m.token_embeddings = detail::normal_param<T>({cfg.V_t, cfg.d_e}, rng);
    m.positional = detail::normal_param<T>({cfg.tokens(), cfg.d_p}, rng);
    const int d_cat = cfg.d_e + cfg.d_p;
    for (int b = 0; b < cfg.k_b; ++b) {
        VanillaBlock<T> blk;
        blk.ln_attn = detail::init_layer_norm<T>(cfg.d_e);
        blk.attn = detail::init_attention<T>(d_cat, cfg.d_e, rng);
        blk.ln_mlp = detail::init_layer_norm<T>(cfg.d_e);
        blk.mlp = detail::init_mlp<T>(d_cat, cfg.d_mlp, cfg.d_e, rng);
        m.blocks.push_back(std::move(blk));
    }
    m.ln_final = detail::init_layer_norm<T>(cfg.d_e);
    m.head_w = detail::normal_param<T>({cfg.d_e, cfg.V_t}, rng);
    m.head_b = detail::zeros_param<T>({cfg.V_t});
    return m;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

constexpr double kLayerNormEps = 1e-5;

// Multi-head attention; queries from xq, keys/values from xkv. Scale is
// 1/sqrt(d_e/k_h).
template <class T>
Tensor<T> attention(const Tensor<T>& xq, const Tensor<T>& xkv, const AttentionParams<T>& p, int k_h) {
    auto q = add_rowvec(matmul(xq, p.wq), p.bq);
    auto k = add_rowvec(matmul(xkv, p.wk), p.bk);
    auto v = add_rowvec(matmul(xkv, p.wv), p.bv);
    const int d_e = q.cols();
    const int dh = d_e / k_h;
    const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<T> out;
    for (int h = 0; h < k_h; ++h) {
        auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = slice_cols(v, h * dh, (h + 1) * dh);
        auto weights = softmax_last_dim(scale(matmul(qh, transpose(kh)), s));
        auto oh = matmul(weights, vh);
        out = (h == 0) ? oh : concat_last_dim(out, oh);
    }
    return add_rowvec(matmul(out, p.wo), p.bo);
}

template <class T>
Tensor<T> mlp_forward(const Tensor<T>& x, const MlpParams<T>& p) {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

inline std::vector<int> tokens_to_ids(const std::vector<TokenId>& grid) {
    return std::vector<int>(grid.begin(), grid.end());
}

// Single-board forward. Returns n^2 x V_t logits. The hook (optional) fires at
// each of the 13 stages; it may mutate the stage value only in no-grad mode.
template <class T>
Tensor<T> vanilla_forward(const VanillaModel<T>& m, const std::vector<TokenId>& board_tokens,
                          const StageHook<T>& hook = nullptr) {
    const VanillaConfig& cfg = m.config;
    if (static_cast<int>(board_tokens.size()) != cfg.tokens())
        throw std::invalid_argument("vanilla_forward: board has " + std::to_string(board_tokens.size()) +
                                    " tokens, model expects " + shape_str({cfg.tokens()}));

    auto z = embedding_lookup(m.token_embeddings, tokens_to_ids(board_tokens));
    if (hook) hook(0, z);
    const T eps = static_cast<T>(kLayerNormEps);
    for (int b = 0; b < cfg.k_b; ++b) {
        const auto& blk = m.blocks[static_cast<size_t>(b)];
        auto x1 = concat_last_dim(layer_norm(z, blk.ln_attn.gain, blk.ln_attn.bias, eps), m.positional);
        auto attn_update = attention(x1, x1, blk.attn, cfg.k_h);
        if (hook) hook(stage_of(b, 0), attn_update);
        auto y = add(z, attn_update);
        if (hook) hook(stage_of(b, 1), y);
        auto x2 = concat_last_dim(layer_norm(y, blk.ln_mlp.gain, blk.ln_mlp.bias, eps), m.positional);
        auto mlp_update = mlp_forward(x2, blk.mlp);
        if (hook) hook(stage_of(b, 2), mlp_update);
        z = add(y, mlp_update);
        if (hook) hook(stage_of(b, 3), z);
    }
    auto final_norm = layer_norm(z, m.ln_final.gain, m.ln_final.bias, eps);
    return add_rowvec(matmul(final_norm, m.head_w), m.head_b);
}

template <class T>
Tensor<T> vanilla_forward(const VanillaModel<T>& m, const MaskedBoard& board,
                          const StageHook<T>& hook = nullptr) {
    return vanilla_forward(m, board.masked_grid, hook);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[9] = "ALABCKP0";
constexpr uint32_t kCheckpointVersion = 1;

template <class T>
constexpr uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 1 : 2;
}

template <class T>
void write_named_tensors(BinaryWriter& w, const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    w.write_u64(params.size());
    for (const auto& [name, t] : params) {
        w.write_string(name);
        w.write_u8(dtype_tag<T>());
        w.write_u64(t.shape().size());
        for (int d : t.shape()) w.write_i64(d);
        w.write_vec(t.data());
    }
}

template <class T>
void read_named_tensors(BinaryReader& r, const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    auto count = r.read_u64();
    if (count != params.size())
        throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) +
                                 " tensors, file has " + std::to_string(count));
    for (const auto& [name, t] : params) {
        auto fname = r.read_string();
        if (fname != name) throw std::runtime_error("checkpoint: tensor order mismatch at " + fname);
        if (r.read_u8() != dtype_tag<T>()) throw std::runtime_error("checkpoint: dtype mismatch for " + fname);
        auto ndim = r.read_u64();
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(r.read_i64());
        if (shape != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + fname + ": file " + shape_str(shape) +
                                     " vs model " + shape_str(t.shape()));
        auto data = r.read_vec<T>();
        const_cast<Tensor<T>&>(t).data() = std::move(data);
    }
}

inline void write_metadata_sidecar(const std::string& path, const nlohmann::json& meta) {
    std::ofstream f(path + ".json");
    f << meta.dump(2) << "\n";
}

}  // namespace detail

inline nlohmann::json vanilla_config_json(const VanillaConfig& c) {
    return {{"n", c.n},   {"k_b", c.k_b},     {"k_h", c.k_h}, {"d_e", c.d_e},
            {"d_p", c.d_p}, {"d_mlp", c.d_mlp}, {"V_t", c.V_t}};
}

inline VanillaConfig vanilla_config_from_json(const nlohmann::json& j) {
    VanillaConfig c;
    c.n = j.value("n", c.n);
    c.k_b = j.value("k_b", c.k_b);
    c.k_h = j.value("k_h", c.k_h);
    c.d_e = j.value("d_e", c.d_e);
    c.d_p = j.value("d_p", c.d_p);
    c.d_mlp = j.value("d_mlp", c.d_mlp);
    c.V_t = j.value("V_t", c.V_t);
    return c;
}

template <class T>
void save_checkpoint(const VanillaModel<T>& m, const std::string& path) {
    nlohmann::json meta = {{"kind", "vanilla"}, {"seed", m.seed}, {"config", vanilla_config_json(m.config)}};
    BinaryWriter w;
    w.write_string(meta.dump());
    detail::write_named_tensors(w, m.named_params());
    w.save(path, detail::kCheckpointMagic, detail::kCheckpointVersion);
    detail::write_metadata_sidecar(path, meta);
}

template <class T>
VanillaModel<T> load_vanilla_checkpoint(const std::string& path) {
    BinaryReader r = BinaryReader::load(path, detail::kCheckpointMagic, detail::kCheckpointVersion);
    auto meta = nlohmann::json::parse(r.read_string());
    if (meta.value("kind", "") != "vanilla")
        throw std::runtime_error("checkpoint " + path + " is not a vanilla model (kind=" +
                                 meta.value("kind", "?") + ")");
    VanillaConfig cfg = vanilla_config_from_json(meta.at("config"));
    auto m = init_vanilla<T>(cfg, meta.value("seed", uint64_t{0}));
    detail::read_named_tensors(r, m.named_params());
    return m;
}

}  // namespace alab
