#pragma once
// Language-enhanced architecture: an inference network (IN) and an auxiliary
// language network (ALN), both stacks of decoder blocks with self- and
// cross-attention over a factorized positional stream, joined by an EMA
// vector quantizer that turns ALN's output into a discrete sentence.
//
// Block: Y = Z + attn_self([ln(Z), P_Z])
//        X = Y + attn_cross([ln(Y), P_Z], [W, P_W])
//        Z' = X + mlp([ln(X), P_Z])
//
// Pass 1: IN reads the masked board with S = 0, yields Z_final and board
//         logits. Pass 2: ALN reads Q_init with W = Z_final, its output rows
//         are quantized to the nearest codebook vectors (straight-through
//         gradient). Pass 3: IN starts from UNK embeddings with W = S and
//         reconstructs the board from the sentence alone.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "alab/model.hpp"

namespace alab {

struct LeaConfig {
    int n = 8;
    int k_b = 3;
    int k_h = 2;
    int d_e = 32;
    int d_p = 16;
    int d_mlp = 64;
    int V_t = 21;
    int codebook_size = 128;  // V
    int sentence_len = 16;    // l

    double w_board = 1.0;        // CE(L_b) coefficient
    double w_sentence = 1.0;     // CE(L_s) coefficient
    double beta_commit = 0.25;   // commitment coefficient
    double lambda_sparsity = 0.01;
    double ema_decay = 0.99;
    double ema_eps = 1e-5;
    int dead_code_steps = 1000;

    int tokens() const { return n * n; }
    TokenId unk_token() const { return static_cast<TokenId>(V_t - 1); }

    void validate() const {
        if (d_e % k_h != 0)
            throw std::invalid_argument("LeaConfig: d_e not divisible by k_h");
        if (codebook_size < 2 || sentence_len < 1)
            throw std::invalid_argument("LeaConfig: codebook/sentence sizes invalid");
    }
};

// Fixed-length discrete description of a board.
struct Sentence {
    std::vector<int> words;  // l indices in [0, V)

    std::string to_text() const {
        std::ostringstream os;
        for (size_t i = 0; i < words.size(); ++i) os << (i ? " " : "") << words[i];
        return os.str();
    }

    static Sentence from_text(const std::string& line) {
        Sentence s;
        std::istringstream is(line);
        int w;
        while (is >> w) s.words.push_back(w);
        return s;
    }

    bool operator==(const Sentence& o) const { return words == o.words; }
};

// EMA-updated codebook; not part of the gradient graph.
template <class T>
struct Codebook {
    int size = 0;
    int dim = 0;
    std::vector<T> vectors;          // size x dim
    std::vector<double> ema_counts;  // size
    std::vector<double> ema_sums;    // size x dim
    std::vector<int64_t> last_used;  // step index of last assignment

    const T* vec(int i) const { return vectors.data() + static_cast<size_t>(i) * dim; }

    // Nearest code by Euclidean distance; full scan.
    int nearest(const T* row) const {
        int best = 0;
        double best_d = std::numeric_limits<double>::max();
        for (int i = 0; i < size; ++i) {
            const T* v = vec(i);
            double d = 0;
            for (int j = 0; j < dim; ++j) {
                const double diff = static_cast<double>(row[j]) - static_cast<double>(v[j]);
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }
};

template <class T>
Codebook<T> init_codebook(int size, int dim, Rng& rng) {
    Codebook<T> cb;
    cb.size = size;
    cb.dim = dim;
    cb.vectors.resize(static_cast<size_t>(size) * dim);
    for (auto& v : cb.vectors) v = static_cast<T>(rng.normal(0.0, 0.02));
    cb.ema_counts.assign(static_cast<size_t>(size), 1.0);
    cb.ema_sums.assign(cb.vectors.begin(), cb.vectors.end());
    cb.last_used.assign(static_cast<size_t>(size), 0);
    return cb;
}

// One EMA step from batch assignment statistics. batch_counts[i] is the number
// of rows assigned to code i; batch_sums is the per-code sum of assigned rows.
template <class T>
void codebook_ema_update(Codebook<T>& cb, const std::vector<double>& batch_counts,
                         const std::vector<double>& batch_sums, double decay, double eps) {
    const int V = cb.size, d = cb.dim;
    for (int i = 0; i < V; ++i)
        cb.ema_counts[i] = decay * cb.ema_counts[i] + (1.0 - decay) * batch_counts[i];
    for (size_t j = 0; j < cb.ema_sums.size(); ++j)
        cb.ema_sums[j] = decay * cb.ema_sums[j] + (1.0 - decay) * batch_sums[j];
    double total = 0;
    for (int i = 0; i < V; ++i) total += cb.ema_counts[i];
    for (int i = 0; i < V; ++i) {
        const double smoothed = (cb.ema_counts[i] + eps) / (total + V * eps) * total;
        for (int j = 0; j < d; ++j)
            cb.vectors[static_cast<size_t>(i) * d + j] =
                static_cast<T>(cb.ema_sums[static_cast<size_t>(i) * d + j] / smoothed);
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class T>
struct DecoderBlock {
    LayerNormParams<T> ln_self, ln_cross, ln_mlp;
    AttentionParams<T> self_attn;
    AttentionParams<T> cross_attn;
    MlpParams<T> mlp;
};

template <class T>
struct LeaModel {
    LeaConfig config;
    uint64_t seed = 0;
    Tensor<T> token_embeddings;  // V_t x d_e
    Tensor<T> pos_board;         // n^2 x d_p   (P_Z)
    Tensor<T> pos_sentence;      // l x d_p     (P_Q / P_l)
    Tensor<T> q_init;            // l x d_e language primer
    std::vector<DecoderBlock<T>> in_blocks;
    std::vector<DecoderBlock<T>> aln_blocks;
    LayerNormParams<T> ln_final;
    Tensor<T> head_w, head_b;
    Codebook<T> codebook;

    std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.push_back({"token_embeddings", token_embeddings});
        out.push_back({"pos_board", pos_board});
        out.push_back({"pos_sentence", pos_sentence});
        out.push_back({"q_init", q_init});
        auto add_blocks = [&out](const std::vector<DecoderBlock<T>>& blocks, const std::string& net) {
            for (size_t b = 0; b < blocks.size(); ++b) {
                const auto& blk = blocks[b];
                std::string p = net + "." + std::to_string(b) + ".";
                auto add_attn = [&out, &p](const AttentionParams<T>& a, const std::string& name) {
                    out.push_back({p + name + ".wq", a.wq});
                    out.push_back({p + name + ".bq", a.bq});
                    out.push_back({p + name + ".wk", a.wk});
                    out.push_back({p + name + ".bk", a.bk});
                    out.push_back({p + name + ".wv", a.wv});
                    out.push_back({p + name + ".bv", a.bv});
                    out.push_back({p + name + ".wo", a.wo});
                    out.push_back({p + name + ".bo", a.bo});
                };
                out.push_back({p + "ln_self.gain", blk.ln_self.gain});
                out.push_back({p + "ln_self.bias", blk.ln_self.bias});
                add_attn(blk.self_attn, "self_attn");
                out.push_back({p + "ln_cross.gain", blk.ln_cross.gain});
                out.push_back({p + "ln_cross.bias", blk.ln_cross.bias});
                add_attn(blk.cross_attn, "cross_attn");
                out.push_back({p + "ln_mlp.gain", blk.ln_mlp.gain});
                out.push_back({p + "ln_mlp.bias", blk.ln_mlp.bias});
                out.push_back({p + "mlp.w1", blk.mlp.w1});
                out.push_back({p + "mlp.b1", blk.mlp.b1});
                out.push_back({p + "mlp.w2", blk.mlp.w2});
                out.push_back({p + "mlp.b2", blk.mlp.b2});
            }
        };
        add_blocks(in_blocks, "in");
        add_blocks(aln_blocks, "aln");
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

template <class T>
LeaModel<T> init_lea(const LeaConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "lea_init"));
    LeaModel<T> m;
    m.config = cfg;
    m.seed = seed;
    m.token_embeddings = detail::normal_param<T>({cfg.V_t, cfg.d_e}, rng);
    m.pos_board = detail::normal_param<T>({cfg.tokens(), cfg.d_p}, rng);
    m.pos_sentence = detail::normal_param<T>({cfg.sentence_len, cfg.d_p}, rng);
    m.q_init = detail::normal_param<T>({cfg.sentence_len, cfg.d_e}, rng);
    const int d_cat = cfg.d_e + cfg.d_p;
    auto make_block = [&]() {
        DecoderBlock<T> blk;
        blk.ln_self = detail::init_layer_norm<T>(cfg.d_e);
        blk.self_attn = detail::init_attention<T>(d_cat, cfg.d_e, rng);
        blk.ln_cross = detail::init_layer_norm<T>(cfg.d_e);
        blk.cross_attn = detail::init_attention<T>(d_cat, cfg.d_e, rng);
        blk.ln_mlp = detail::init_layer_norm<T>(cfg.d_e);
        blk.mlp = detail::init_mlp<T>(d_cat, cfg.d_mlp, cfg.d_e, rng);
        return blk;
    };
    for (int b = 0; b < cfg.k_b; ++b) m.in_blocks.push_back(make_block());
    for (int b = 0; b < cfg.k_b; ++b) m.aln_blocks.push_back(make_block());
    m.ln_final = detail::init_layer_norm<T>(cfg.d_e);
    m.head_w = detail::normal_param<T>({cfg.d_e, cfg.V_t}, rng);
    m.head_b = detail::zeros_param<T>({cfg.V_t});
    Rng cb_rng = rng.child("codebook");
    m.codebook = init_codebook<T>(cfg.codebook_size, cfg.d_e, cb_rng);
    return m;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> decoder_block_forward(const DecoderBlock<T>& blk, const Tensor<T>& z,
                                const Tensor<T>& pos_z, const Tensor<T>& external_with_pos,
                                int k_h) {
    const T eps = static_cast<T>(kLayerNormEps);
    auto x1 = concat_last_dim(layer_norm(z, blk.ln_self.gain, blk.ln_self.bias, eps), pos_z);
    auto y = add(z, attention(x1, x1, blk.self_attn, k_h));
    auto x2 = concat_last_dim(layer_norm(y, blk.ln_cross.gain, blk.ln_cross.bias, eps), pos_z);
    auto x = add(y, attention(x2, external_with_pos, blk.cross_attn, k_h));
    auto x3 = concat_last_dim(layer_norm(x, blk.ln_mlp.gain, blk.ln_mlp.bias, eps), pos_z);
    return add(x, mlp_forward(x3, blk.mlp));
}

template <class T>
struct Pass1Result {
    Tensor<T> z_final;  // n^2 x d_e
    Tensor<T> logits;   // n^2 x V_t  (L_b)
};

// IN stack over arbitrary initial stream and external matrix.
template <class T>
Pass1Result<T> lea_in_forward(const LeaModel<T>& m, Tensor<T> z, const Tensor<T>& external) {
    const LeaConfig& cfg = m.config;
    if (external.rows() != cfg.sentence_len || external.cols() != cfg.d_e)
        throw std::invalid_argument("lea_in_forward: external matrix " + shape_str(external.shape()) +
                                    ", expected [" + std::to_string(cfg.sentence_len) + "x" +
                                    std::to_string(cfg.d_e) + "]");
    auto ext = concat_last_dim(external, m.pos_sentence);
    for (const auto& blk : m.in_blocks) z = decoder_block_forward(blk, z, m.pos_board, ext, cfg.k_h);
    const T eps = static_cast<T>(kLayerNormEps);
    auto logits = add_rowvec(matmul(layer_norm(z, m.ln_final.gain, m.ln_final.bias, eps), m.head_w), m.head_b);
    return {z, logits};
}

// Pass 1: masked board in, S = 0.
template <class T>
Pass1Result<T> lea_pass1(const LeaModel<T>& m, const std::vector<TokenId>& board_tokens) {
    const LeaConfig& cfg = m.config;
    if (static_cast<int>(board_tokens.size()) != cfg.tokens())
        throw std::invalid_argument("lea_pass1: board has " + std::to_string(board_tokens.size()) +
                                    " tokens, model expects " + std::to_string(cfg.tokens()));
    auto z = embedding_lookup(m.token_embeddings, tokens_to_ids(board_tokens));
    auto s_zero = Tensor<T>::zeros({cfg.sentence_len, cfg.d_e});
    return lea_in_forward(m, z, s_zero);
}

template <class T>
struct Pass2Result {
    Tensor<T> q;  // l x d_e, pre-quantization
    Tensor<T> s;  // l x d_e, quantized rows (straight-through)
    Sentence sentence;
};

// Pass 2: ALN reads Z_final, output rows quantized to the nearest codes.
template <class T>
Pass2Result<T> lea_pass2(const LeaModel<T>& m, const Tensor<T>& z_final) {
    const LeaConfig& cfg = m.config;
    if (z_final.rows() != cfg.tokens() || z_final.cols() != cfg.d_e)
        throw std::invalid_argument("lea_pass2: z_final " + shape_str(z_final.shape()));
    auto ext = concat_last_dim(z_final, m.pos_board);
    Tensor<T> q = m.q_init;
    for (const auto& blk : m.aln_blocks) q = decoder_block_forward(blk, q, m.pos_sentence, ext, cfg.k_h);

    Pass2Result<T> out;
    out.q = q;
    out.sentence.words.resize(static_cast<size_t>(cfg.sentence_len));
    for (int i = 0; i < cfg.sentence_len; ++i)
        out.sentence.words[static_cast<size_t>(i)] = m.codebook.nearest(q.data().data() + static_cast<size_t>(i) * cfg.d_e);
    out.s = straight_through_lookup(q, m.codebook.vectors, cfg.d_e, out.sentence.words);
    return out;
}

// Pass 3: reconstruct from a sentence embedding matrix alone. This is the
// steering entry point; S may come from pass 2 or be user-built.
template <class T>
Pass1Result<T> lea_pass3(const LeaModel<T>& m, const Tensor<T>& s) {
    const LeaConfig& cfg = m.config;
    std::vector<TokenId> unk(static_cast<size_t>(cfg.tokens()), cfg.unk_token());
    auto z = embedding_lookup(m.token_embeddings, tokens_to_ids(unk));
    return lea_in_forward(m, z, s);
}

template <class T>
Tensor<T> sentence_embeddings(const LeaModel<T>& m, const Sentence& sentence) {
    const LeaConfig& cfg = m.config;
    if (static_cast<int>(sentence.words.size()) != cfg.sentence_len)
        throw std::invalid_argument("sentence has " + std::to_string(sentence.words.size()) +
                                    " words, expected " + std::to_string(cfg.sentence_len));
    std::vector<T> data(static_cast<size_t>(cfg.sentence_len) * cfg.d_e);
    for (int i = 0; i < cfg.sentence_len; ++i) {
        const int w = sentence.words[static_cast<size_t>(i)];
        if (w < 0 || w >= cfg.codebook_size)
            throw std::invalid_argument("word index " + std::to_string(w) + " outside codebook");
        std::copy_n(m.codebook.vec(w), cfg.d_e, data.data() + static_cast<size_t>(i) * cfg.d_e);
    }
    return Tensor<T>::from_data({cfg.sentence_len, cfg.d_e}, std::move(data));
}

template <class T>
Pass1Result<T> lea_pass3(const LeaModel<T>& m, const Sentence& sentence) {
    return lea_pass3(m, sentence_embeddings(m, sentence));
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LeaLossParts {
    double ce_board = 0;
    double ce_sentence = 0;
    double commitment = 0;  // mean over slots of ||q_i - codes_i||^2
    double sparsity = 0;    // mean over slots of ||q_i - codebook[0]||^2
    double total = 0;
};

template <class T>
struct LeaForward {
    Pass1Result<T> pass1;
    Pass2Result<T> pass2;
    Pass1Result<T> pass3;
    Tensor<T> loss;  // weighted sum (graph scalar)
    LeaLossParts parts;
};

// Full three-pass forward with the four-term loss.
template <class T>
LeaForward<T> lea_forward(const LeaModel<T>& m, const std::vector<TokenId>& masked_tokens,
                          const std::vector<int>& targets) {
    const LeaConfig& cfg = m.config;
    LeaForward<T> out;
    out.pass1 = lea_pass1(m, masked_tokens);
    out.pass2 = lea_pass2(m, out.pass1.z_final);
    out.pass3 = lea_pass3(m, out.pass2.s);

    auto ce_b = cross_entropy(out.pass1.logits, targets);
    auto ce_s = cross_entropy(out.pass3.logits, targets);

    // commitment: pull q toward the selected (stop-gradient) codes
    auto commit = scale(mse_to_const(out.pass2.q, out.pass2.s.data()), static_cast<T>(cfg.d_e));
    // sparsity: pull every slot toward the reserved null code 0
    std::vector<T> null_ref(static_cast<size_t>(cfg.sentence_len) * cfg.d_e);
    for (int i = 0; i < cfg.sentence_len; ++i)
        std::copy_n(m.codebook.vec(0), cfg.d_e, null_ref.data() + static_cast<size_t>(i) * cfg.d_e);
    auto sparse = scale(mse_to_const(out.pass2.q, null_ref), static_cast<T>(cfg.d_e));

    out.parts.ce_board = static_cast<double>(ce_b.scalar());
    out.parts.ce_sentence = static_cast<double>(ce_s.scalar());
    out.parts.commitment = static_cast<double>(commit.scalar());
    out.parts.sparsity = static_cast<double>(sparse.scalar());

    auto weighted = add(add(scale(ce_b, static_cast<T>(cfg.w_board)), scale(ce_s, static_cast<T>(cfg.w_sentence))),
                        add(scale(commit, static_cast<T>(cfg.beta_commit)),
                            scale(sparse, static_cast<T>(cfg.lambda_sparsity))));
    out.parts.total = static_cast<double>(weighted.scalar());
    out.loss = weighted;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json lea_config_json(const LeaConfig& c) {
    return {{"n", c.n},
            {"k_b", c.k_b},
            {"k_h", c.k_h},
            {"d_e", c.d_e},
            {"d_p", c.d_p},
            {"d_mlp", c.d_mlp},
            {"V_t", c.V_t},
            {"codebook_size", c.codebook_size},
            {"sentence_len", c.sentence_len},
            {"w_board", c.w_board},
            {"w_sentence", c.w_sentence},
            {"beta_commit", c.beta_commit},
            {"lambda_sparsity", c.lambda_sparsity},
            {"ema_decay", c.ema_decay},
            {"ema_eps", c.ema_eps},
            {"dead_code_steps", c.dead_code_steps}};
}

inline LeaConfig lea_config_from_json(const nlohmann::json& j) {
    LeaConfig c;
    c.n = j.value("n", c.n);
    c.k_b = j.value("k_b", c.k_b);
    c.k_h = j.value("k_h", c.k_h);
    c.d_e = j.value("d_e", c.d_e);
    c.d_p = j.value("d_p", c.d_p);
    c.d_mlp = j.value("d_mlp", c.d_mlp);
    c.V_t = j.value("V_t", c.V_t);
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.sentence_len = j.value("sentence_len", c.sentence_len);
    c.w_board = j.value("w_board", c.w_board);
    c.w_sentence = j.value("w_sentence", c.w_sentence);
    c.beta_commit = j.value("beta_commit", c.beta_commit);
    c.lambda_sparsity = j.value("lambda_sparsity", c.lambda_sparsity);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.ema_eps = j.value("ema_eps", c.ema_eps);
    c.dead_code_steps = j.value("dead_code_steps", c.dead_code_steps);
    return c;
}

template <class T>
void save_checkpoint(const LeaModel<T>& m, const std::string& path) {
    nlohmann::json meta = {{"kind", "lea"}, {"seed", m.seed}, {"config", lea_config_json(m.config)}};
    BinaryWriter w;
    w.write_string(meta.dump());
    detail::write_named_tensors(w, m.named_params());
    w.write_vec(m.codebook.vectors);
    w.write_vec(m.codebook.ema_counts);
    w.write_vec(m.codebook.ema_sums);
    w.write_vec(m.codebook.last_used);
    w.save(path, detail::kCheckpointMagic, detail::kCheckpointVersion);
    detail::write_metadata_sidecar(path, meta);
}

template <class T>
LeaModel<T> load_lea_checkpoint(const std::string& path) {
    BinaryReader r = BinaryReader::load(path, detail::kCheckpointMagic, detail::kCheckpointVersion);
    auto meta = nlohmann::json::parse(r.read_string());
    if (meta.value("kind", "") != "lea")
        throw std::runtime_error("checkpoint " + path + " is not a LEA model");
    LeaConfig cfg = lea_config_from_json(meta.at("config"));
    auto m = init_lea<T>(cfg, meta.value("seed", uint64_t{0}));
    detail::read_named_tensors(r, m.named_params());
    m.codebook.vectors = r.read_vec<T>();
    m.codebook.ema_counts = r.read_vec<double>();
    m.codebook.ema_sums = r.read_vec<double>();
    m.codebook.last_used = r.read_vec<int64_t>();
    return m;
}

}  // namespace alab
