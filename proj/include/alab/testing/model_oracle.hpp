#pragma once
// Straight-line, loop-based reimplementation of the factorized encoder block
// equations in double precision. Shares no code with the library's tensor
// engine; used to pin the model forward to an independent computation.

#include <cmath>
#include <vector>

#include "alab/model.hpp"

namespace alab::testing {

using Mat = std::vector<std::vector<double>>;

template <class T>
Mat to_mat(const Tensor<T>& t) {
    Mat m(static_cast<size_t>(t.rows()), std::vector<double>(static_cast<size_t>(t.cols())));
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j) m[i][j] = static_cast<double>(t.at(i, j));
    return m;
}

template <class T>
std::vector<double> to_vec(const Tensor<T>& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

inline Mat oracle_layer_norm(const Mat& x, const std::vector<double>& gain,
                             const std::vector<double>& bias, double eps) {
    Mat out(x.size(), std::vector<double>(x[0].size()));
    for (size_t i = 0; i < x.size(); ++i) {
        double mu = 0;
        for (double v : x[i]) mu += v;
        mu /= static_cast<double>(x[i].size());
        double var = 0;
        for (double v : x[i]) var += (v - mu) * (v - mu);
        var /= static_cast<double>(x[i].size());
        double inv = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < x[i].size(); ++j) out[i][j] = gain[j] * (x[i][j] - mu) * inv + bias[j];
    }
    return out;
}

inline Mat oracle_matmul(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t k = 0; k < b.size(); ++k)
            for (size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline Mat oracle_affine(const Mat& x, const Mat& w, const std::vector<double>& b) {
    Mat y = oracle_matmul(x, w);
    for (auto& row : y)
        for (size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    return y;
}

inline Mat oracle_concat(const Mat& a, const Mat& b) {
    Mat c(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        c[i] = a[i];
        c[i].insert(c[i].end(), b[i].begin(), b[i].end());
    }
    return c;
}

template <class T>
Mat oracle_attention(const Mat& xq, const Mat& xkv, const AttentionParams<T>& p, int k_h) {
    Mat q = oracle_affine(xq, to_mat(p.wq), to_vec(p.bq));
    Mat k = oracle_affine(xkv, to_mat(p.wk), to_vec(p.bk));
    Mat v = oracle_affine(xkv, to_mat(p.wv), to_vec(p.bv));
    const int d_e = static_cast<int>(q[0].size());
    const int dh = d_e / k_h;
    Mat gathered(q.size(), std::vector<double>(static_cast<size_t>(d_e), 0.0));
    for (int h = 0; h < k_h; ++h) {
        for (size_t i = 0; i < q.size(); ++i) {
            std::vector<double> scores(k.size());
            double mx = -1e300;
            for (size_t j = 0; j < k.size(); ++j) {
                double s = 0;
                for (int c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
                scores[j] = s / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, scores[j]);
            }
            double denom = 0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                denom += s;
            }
            for (size_t j = 0; j < k.size(); ++j)
                for (int c = 0; c < dh; ++c) gathered[i][h * dh + c] += scores[j] / denom * v[j][h * dh + c];
        }
    }
    return oracle_affine(gathered, to_mat(p.wo), to_vec(p.bo));
}

template <class T>
Mat oracle_mlp(const Mat& x, const MlpParams<T>& p) {
    Mat h = oracle_affine(x, to_mat(p.w1), to_vec(p.b1));
    for (auto& row : h)
        for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return oracle_affine(h, to_mat(p.w2), to_vec(p.b2));
}

template <class T>
Mat oracle_vanilla_forward(const VanillaModel<T>& m, const std::vector<TokenId>& ids) {
    const double eps = kLayerNormEps;
    Mat emb = to_mat(m.token_embeddings);
    Mat pos = to_mat(m.positional);
    Mat z(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) z[i] = emb[static_cast<size_t>(ids[i])];
    for (int b = 0; b < m.config.k_b; ++b) {
        const auto& blk = m.blocks[static_cast<size_t>(b)];
        Mat x1 = oracle_concat(oracle_layer_norm(z, to_vec(blk.ln_attn.gain), to_vec(blk.ln_attn.bias), eps), pos);
        Mat au = oracle_attention(x1, x1, blk.attn, m.config.k_h);
        Mat y(z.size());
        for (size_t i = 0; i < z.size(); ++i) {
            y[i].resize(z[i].size());
            for (size_t j = 0; j < z[i].size(); ++j) y[i][j] = z[i][j] + au[i][j];
        }
        Mat x2 = oracle_concat(oracle_layer_norm(y, to_vec(blk.ln_mlp.gain), to_vec(blk.ln_mlp.bias), eps), pos);
        Mat mu = oracle_mlp(x2, blk.mlp);
        for (size_t i = 0; i < z.size(); ++i)
            for (size_t j = 0; j < z[i].size(); ++j) z[i][j] = y[i][j] + mu[i][j];
    }
    Mat fin = oracle_layer_norm(z, to_vec(m.ln_final.gain), to_vec(m.ln_final.bias), eps);
    return oracle_affine(fin, to_mat(m.head_w), to_vec(m.head_b));
}

template <class T>
double max_abs_diff(const Tensor<T>& t, const Mat& m) {
    double worst = 0;
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j)
            worst = std::max(worst, std::abs(static_cast<double>(t.at(i, j)) - m[static_cast<size_t>(i)][static_cast<size_t>(j)]));
    return worst;
}

}  // namespace alab::testing

#include "alab/lea.hpp"

namespace alab::testing {

inline Mat oracle_add(const Mat& a, const Mat& b) {
    Mat c = a;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[i].size(); ++j) c[i][j] += b[i][j];
    return c;
}

// Straight-line decoder block: self-attention, cross-attention against an
// external [W, P_W] matrix, then MLP, each with its own pre-norm.
template <class T>
Mat oracle_decoder_block(const DecoderBlock<T>& blk, const Mat& z, const Mat& pos_z,
                         const Mat& ext_with_pos, int k_h) {
    const double eps = kLayerNormEps;
    Mat x1 = oracle_concat(oracle_layer_norm(z, to_vec(blk.ln_self.gain), to_vec(blk.ln_self.bias), eps), pos_z);
    Mat y = oracle_add(z, oracle_attention(x1, x1, blk.self_attn, k_h));
    Mat x2 = oracle_concat(oracle_layer_norm(y, to_vec(blk.ln_cross.gain), to_vec(blk.ln_cross.bias), eps), pos_z);
    Mat x = oracle_add(y, oracle_attention(x2, ext_with_pos, blk.cross_attn, k_h));
    Mat x3 = oracle_concat(oracle_layer_norm(x, to_vec(blk.ln_mlp.gain), to_vec(blk.ln_mlp.bias), eps), pos_z);
    return oracle_add(x, oracle_mlp(x3, blk.mlp));
}

}  // namespace alab::testing
