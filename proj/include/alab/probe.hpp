#pragma once
// Correlational analyses over recorded activations: PCA, grouped cosine
// similarity distributions, Cohen's d, unit ranking (mutual information or
// probe weights), and multinomial linear probes with the generalization
// protocols. Everything here is double precision and pure.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "alab/record.hpp"
#include "alab/rng.hpp"
#include "alab/tensor.hpp"

namespace alab {

// Dense row-major matrix of doubles for analysis code.
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> data;

    static Matrix zeros(int r, int c) { return {r, c, std::vector<double>(static_cast<size_t>(r) * c, 0.0)}; }
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
};

inline Matrix matrix_from_trace(const ActivationTrace& trace, int stage_index) {
    Matrix m;
    m.rows = static_cast<int>(trace.row_count());
    m.cols = trace.d_e;
    m.data = trace.stage_matrix(stage_index);
    return m;
}

// Rows selected by index list.
inline Matrix matrix_rows(const Matrix& m, const std::vector<int>& idx) {
    Matrix out = Matrix::zeros(static_cast<int>(idx.size()), m.cols);
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(m.row(idx[i]), m.cols, out.row(static_cast<int>(i)));
    return out;
}

template <class Pick>
std::vector<int> select_rows(const ActivationTrace& trace, const Pick& pick) {
    std::vector<int> idx;
    for (size_t r = 0; r < trace.row_count(); ++r)
        if (pick(trace.rows[r])) idx.push_back(static_cast<int>(r));
    return idx;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. a is row-major d*d
// and is destroyed; eigenvectors come back as columns of v.
inline void jacobi_eigen(std::vector<double>& a, int d, std::vector<double>& eigvals,
                         std::vector<double>& v) {
    v.assign(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;
    auto A = [&](int r, int c) -> double& { return a[static_cast<size_t>(r) * d + c]; };
    auto V = [&](int r, int c) -> double& { return v[static_cast<size_t>(r) * d + c]; };

    double frob = 0;
    for (double x : a) frob += x * x;
    const double tol = 1e-30 * std::max(frob, 1e-300);

    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += A(p, q) * A(p, q);
        if (off <= tol) break;
        for (int p = 0; p < d; ++p) {
            for (int q = p + 1; q < d; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < d; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < d; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) eigvals[static_cast<size_t>(i)] = A(i, i);
}

}  // namespace detail

struct PcaResult {
    Matrix components;                             // k x d, rows are unit components
    std::vector<double> explained_variance_ratio;  // k entries, descending
    Matrix projections;                            // N x k
    std::vector<double> mean, scale;               // standardization applied before the solve
};

// Eigendecomposition of the covariance, optionally after per-dimension
// z-scoring. Ratios are eigenvalue shares of the total variance.
inline PcaResult pca(const Matrix& x, int k, bool normalize) {
    const int n = x.rows, d = x.cols;
    if (n < 2) throw std::invalid_argument("pca: need at least 2 rows");
    k = std::min(k, d);
    PcaResult res;
    res.mean.assign(static_cast<size_t>(d), 0.0);
    res.scale.assign(static_cast<size_t>(d), 1.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) res.mean[static_cast<size_t>(j)] += x.at(i, j);
    for (auto& m : res.mean) m /= n;
    if (normalize) {
        std::vector<double> var(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                const double c = x.at(i, j) - res.mean[static_cast<size_t>(j)];
                var[static_cast<size_t>(j)] += c * c;
            }
        for (int j = 0; j < d; ++j) {
            const double s = std::sqrt(var[static_cast<size_t>(j)] / (n - 1));
            res.scale[static_cast<size_t>(j)] = s > 1e-12 ? s : 1.0;
        }
    }

    Matrix xs = Matrix::zeros(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            xs.at(i, j) = (x.at(i, j) - res.mean[static_cast<size_t>(j)]) / res.scale[static_cast<size_t>(j)];

    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    mm_tn(xs.data.data(), xs.data.data(), cov.data(), n, d, d, false);
    for (auto& c : cov) c /= (n - 1);

    std::vector<double> eigvals, eigvecs;
    detail::jacobi_eigen(cov, d, eigvals, eigvecs);

    std::vector<int> order(static_cast<size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return eigvals[static_cast<size_t>(a)] > eigvals[static_cast<size_t>(b)]; });
    double total = 0;
    for (double v : eigvals) total += std::max(v, 0.0);
    if (total <= 0) total = 1.0;

    res.components = Matrix::zeros(k, d);
    res.explained_variance_ratio.resize(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) {
        const int src = order[static_cast<size_t>(c)];
        res.explained_variance_ratio[static_cast<size_t>(c)] = std::max(eigvals[static_cast<size_t>(src)], 0.0) / total;
        for (int j = 0; j < d; ++j) res.components.at(c, j) = eigvecs[static_cast<size_t>(j) * d + src];
    }
    res.projections = Matrix::zeros(n, k);
    mm_nt(xs.data.data(), res.components.data.data(), res.projections.data.data(), n, d, k, false);
    return res;
}

// ---------------------------------------------------------------------------
// Cosine similarity distributions
// ---------------------------------------------------------------------------

// Maps a row pair to a distribution name; empty string skips the pair.
using PairTyper = std::function<std::string(int, int)>;

struct CosineGroups {
    std::map<std::string, std::vector<double>> samples;
    std::map<std::string, double> medians;
};

inline double cosine_similarity(const double* a, const double* b, int d, const std::vector<int>& coords) {
    double dot = 0, na = 0, nb = 0;
    auto accum = [&](int j) {
        dot += a[j] * b[j];
        na += a[j] * a[j];
        nb += b[j] * b[j];
    };
    if (coords.empty())
        for (int j = 0; j < d; ++j) accum(j);
    else
        for (int j : coords) accum(j);
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return denom > 0 ? dot / denom : 0.0;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Pairwise cosine similarities grouped by pair type. All pairs are enumerated
// when feasible; otherwise random pairs are drawn until each type reaches the
// cap. `coords` restricts the similarity to a unit subset (abstraction
// subspace analyses).
inline CosineGroups group_cosine_distributions(const Matrix& emb, const PairTyper& pair_type,
                                               size_t cap_per_type = 100000, uint64_t seed = 0,
                                               const std::vector<int>& coords = {}) {
    CosineGroups out;
    const int n = emb.rows;
    const size_t all_pairs = static_cast<size_t>(n) * (n - 1) / 2;
    if (all_pairs <= 200000) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                std::string type = pair_type(i, j);
                if (type.empty()) continue;
                auto& bucket = out.samples[type];
                if (bucket.size() >= cap_per_type) continue;
                bucket.push_back(cosine_similarity(emb.row(i), emb.row(j), emb.cols, coords));
            }
    } else {
        Rng rng(derive_seed(seed, "cosine_pairs"));
        const size_t attempts = cap_per_type * 8;
        for (size_t a = 0; a < attempts; ++a) {
            int i = rng.uniform_int(n);
            int j = rng.uniform_int(n);
            if (i == j) continue;
            std::string type = pair_type(std::min(i, j), std::max(i, j));
            if (type.empty()) continue;
            auto& bucket = out.samples[type];
            if (bucket.size() >= cap_per_type) continue;
            bucket.push_back(cosine_similarity(emb.row(i), emb.row(j), emb.cols, coords));
        }
    }
    for (auto& [type, v] : out.samples) out.medians[type] = median_of(v);
    return out;
}

// (mean_a - mean_b) / pooled standard deviation.
inline double cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("cohens_d: groups need >= 2 samples");
    auto stats = [](const std::vector<double>& v) {
        double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0;
        for (double x : v) ss += (x - mu) * (x - mu);
        return std::pair<double, double>(mu, ss);
    };
    auto [ma, ssa] = stats(a);
    auto [mb, ssb] = stats(b);
    const double pooled =
        std::sqrt((ssa + ssb) / static_cast<double>(a.size() + b.size() - 2));
    if (pooled == 0.0) return 0.0;
    return (ma - mb) / pooled;
}

// ---------------------------------------------------------------------------
// Linear probes
// ---------------------------------------------------------------------------

struct LinearProbe {
    int dim = 0;
    int classes = 0;
    std::vector<double> weights;    // dim x classes (standardized space)
    std::vector<double> bias;       // classes
    std::vector<double> mean, scale;  // feature standardization
    std::vector<int> class_ids;     // original label values by class index
    double train_accuracy = 0;
    double val_accuracy = 0;
    double reg = 1e-3;

    int predict_class(const double* row) const {
        int best = 0;
        double best_v = -1e300;
        for (int c = 0; c < classes; ++c) {
            double v = bias[static_cast<size_t>(c)];
            for (int j = 0; j < dim; ++j)
                v += (row[j] - mean[static_cast<size_t>(j)]) / scale[static_cast<size_t>(j)] *
                     weights[static_cast<size_t>(j) * classes + c];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        return best;
    }

    int predict_label(const double* row) const { return class_ids[static_cast<size_t>(predict_class(row))]; }

    // Raw-space decision direction for binary probes (class 1 minus class 0,
    // undoing the feature standardization).
    std::vector<double> raw_direction() const {
        if (classes != 2) throw std::invalid_argument("raw_direction: probe is not binary");
        std::vector<double> w(static_cast<size_t>(dim));
        for (int j = 0; j < dim; ++j)
            w[static_cast<size_t>(j)] = (weights[static_cast<size_t>(j) * 2 + 1] - weights[static_cast<size_t>(j) * 2]) /
                                        scale[static_cast<size_t>(j)];
        return w;
    }

    // Per-unit relevance: |w| for binary, per-unit L2 over class columns
    // otherwise.
    std::vector<double> unit_scores() const {
        std::vector<double> s(static_cast<size_t>(dim), 0.0);
        for (int j = 0; j < dim; ++j) {
            if (classes == 2) {
                s[static_cast<size_t>(j)] = std::abs(weights[static_cast<size_t>(j) * 2 + 1] -
                                                     weights[static_cast<size_t>(j) * 2]);
            } else {
                double ss = 0;
                for (int c = 0; c < classes; ++c) {
                    const double w = weights[static_cast<size_t>(j) * classes + c];
                    ss += w * w;
                }
                s[static_cast<size_t>(j)] = std::sqrt(ss);
            }
        }
        return s;
    }
};

inline double probe_accuracy(const LinearProbe& p, const Matrix& emb, const std::vector<int>& labels) {
    if (emb.rows == 0) throw std::invalid_argument("probe_accuracy: empty evaluation set");
    long correct = 0;
    for (int i = 0; i < emb.rows; ++i) correct += p.predict_label(emb.row(i)) == labels[static_cast<size_t>(i)];
    return static_cast<double>(correct) / emb.rows;
}

// Multinomial logistic regression with L2 regularization, full-batch Adam,
// stopped on gradient norm < 1e-6 or max_iters. Deterministic for a fixed
// seed (used for the train/val shuffle). `standardize` z-scores features with
// train-split statistics; disable it when the raw-space weight vector matters
// (nullspace projection).
inline LinearProbe train_probe(const Matrix& emb, const std::vector<int>& labels,
                               double val_fraction = 0.2, double reg = 1e-3, uint64_t seed = 0,
                               int max_iters = 500, bool standardize = true) {
    const int n = emb.rows, d = emb.cols;
    if (n == 0) throw std::invalid_argument("train_probe: empty training set");
    if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("train_probe: label count mismatch");

    LinearProbe p;
    p.dim = d;
    p.reg = reg;
    // class table in order of first appearance, then sorted for stability
    std::vector<int> cls(labels);
    std::sort(cls.begin(), cls.end());
    cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
    p.class_ids = cls;
    p.classes = static_cast<int>(cls.size());
    const int C = p.classes;
    if (C < 2) throw std::invalid_argument("train_probe: need at least 2 classes");
    auto class_of = [&](int label) {
        return static_cast<int>(std::lower_bound(cls.begin(), cls.end(), label) - cls.begin());
    };

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "probe_split"));
    rng.shuffle(order);
    const int n_val = static_cast<int>(val_fraction * n);
    const int n_train = n - n_val;
    if (n_train < 1) throw std::invalid_argument("train_probe: empty train split");

    // standardization from the train split
    p.mean.assign(static_cast<size_t>(d), 0.0);
    p.scale.assign(static_cast<size_t>(d), 1.0);
    if (standardize) {
        for (int i = 0; i < n_train; ++i)
            for (int j = 0; j < d; ++j) p.mean[static_cast<size_t>(j)] += emb.at(order[static_cast<size_t>(i)], j);
        for (auto& m : p.mean) m /= n_train;
        std::vector<double> var(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < n_train; ++i)
            for (int j = 0; j < d; ++j) {
                const double c = emb.at(order[static_cast<size_t>(i)], j) - p.mean[static_cast<size_t>(j)];
                var[static_cast<size_t>(j)] += c * c;
            }
        for (int j = 0; j < d; ++j) {
            const double s = n_train > 1 ? std::sqrt(var[static_cast<size_t>(j)] / (n_train - 1)) : 0.0;
            p.scale[static_cast<size_t>(j)] = s > 1e-12 ? s : 1.0;
        }
    }

    Matrix xs = Matrix::zeros(n_train, d);
    std::vector<int> ys(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) {
        const int src = order[static_cast<size_t>(i)];
        for (int j = 0; j < d; ++j)
            xs.at(i, j) = (emb.at(src, j) - p.mean[static_cast<size_t>(j)]) / p.scale[static_cast<size_t>(j)];
        ys[static_cast<size_t>(i)] = class_of(labels[static_cast<size_t>(src)]);
    }

    p.weights.assign(static_cast<size_t>(d) * C, 0.0);
    p.bias.assign(static_cast<size_t>(C), 0.0);
    std::vector<double> gw(p.weights.size()), gb(p.bias.size());
    std::vector<double> mw(p.weights.size(), 0.0), vw(p.weights.size(), 0.0);
    std::vector<double> mb(p.bias.size(), 0.0), vb(p.bias.size(), 0.0);
    std::vector<double> logits(static_cast<size_t>(n_train) * C);

    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int iter = 1; iter <= max_iters; ++iter) {
        mm_nn(xs.data.data(), p.weights.data(), logits.data(), n_train, d, C, false);
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (int i = 0; i < n_train; ++i) {
            double* li = logits.data() + static_cast<size_t>(i) * C;
            double mx = -1e300;
            for (int c = 0; c < C; ++c) {
                li[c] += p.bias[static_cast<size_t>(c)];
                mx = std::max(mx, li[c]);
            }
            double denom = 0;
            for (int c = 0; c < C; ++c) {
                li[c] = std::exp(li[c] - mx);
                denom += li[c];
            }
            for (int c = 0; c < C; ++c) {
                const double delta = li[c] / denom - (c == ys[static_cast<size_t>(i)] ? 1.0 : 0.0);
                gb[static_cast<size_t>(c)] += delta / n_train;
                li[c] = delta / n_train;  // reuse as scaled residual
            }
        }
        mm_tn(xs.data.data(), logits.data(), gw.data(), n_train, d, C, true);
        for (size_t k = 0; k < gw.size(); ++k) gw[k] += reg * p.weights[k];

        double gnorm = 0;
        for (double g : gw) gnorm += g * g;
        for (double g : gb) gnorm += g * g;
        gnorm = std::sqrt(gnorm);
        if (gnorm < 1e-6) break;

        const double c1 = 1.0 - std::pow(b1, iter), c2 = 1.0 - std::pow(b2, iter);
        for (size_t k = 0; k < gw.size(); ++k) {
            mw[k] = b1 * mw[k] + (1 - b1) * gw[k];
            vw[k] = b2 * vw[k] + (1 - b2) * gw[k] * gw[k];
            p.weights[k] -= lr * (mw[k] / c1) / (std::sqrt(vw[k] / c2) + eps);
        }
        for (size_t k = 0; k < gb.size(); ++k) {
            mb[k] = b1 * mb[k] + (1 - b1) * gb[k];
            vb[k] = b2 * vb[k] + (1 - b2) * gb[k] * gb[k];
            p.bias[k] -= lr * (mb[k] / c1) / (std::sqrt(vb[k] / c2) + eps);
        }
    }

    // accuracies on raw-space rows
    {
        long ok = 0;
        for (int i = 0; i < n_train; ++i)
            ok += p.predict_label(emb.row(order[static_cast<size_t>(i)])) ==
                  labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
        p.train_accuracy = static_cast<double>(ok) / n_train;
    }
    if (n_val > 0) {
        long ok = 0;
        for (int i = n_train; i < n; ++i)
            ok += p.predict_label(emb.row(order[static_cast<size_t>(i)])) ==
                  labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
        p.val_accuracy = static_cast<double>(ok) / n_val;
    } else {
        p.val_accuracy = p.train_accuracy;
    }
    return p;
}

// Pure evaluation on a caller-constructed held-out partition.
inline double probe_generalization(const LinearProbe& p, const Matrix& emb, const std::vector<int>& labels) {
    return probe_accuracy(p, emb, labels);
}

// ---------------------------------------------------------------------------
// Unit ranking
// ---------------------------------------------------------------------------

struct UnitRanking {
    std::vector<int> order;      // most informative unit first
    std::vector<double> scores;  // aligned with order
    std::string method;
};

// Plug-in MI between the 10-quantile-binned unit activation and the label.
inline std::vector<double> mi_per_unit(const Matrix& emb, const std::vector<int>& labels, int bins = 10) {
    const int n = emb.rows, d = emb.cols;
    std::vector<int> cls(labels);
    std::sort(cls.begin(), cls.end());
    cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
    const int L = static_cast<int>(cls.size());
    auto class_of = [&](int label) {
        return static_cast<int>(std::lower_bound(cls.begin(), cls.end(), label) - cls.begin());
    };

    std::vector<double> out(static_cast<size_t>(d), 0.0);
    std::vector<double> column(static_cast<size_t>(n));
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < n; ++i) column[static_cast<size_t>(i)] = emb.at(i, j);
        std::vector<double> sorted = column;
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> edges;
        for (int b = 1; b < bins; ++b)
            edges.push_back(sorted[static_cast<size_t>(static_cast<double>(b) / bins * (n - 1))]);

        std::vector<double> joint(static_cast<size_t>(bins) * L, 0.0);
        std::vector<double> pb(static_cast<size_t>(bins), 0.0), pl(static_cast<size_t>(L), 0.0);
        for (int i = 0; i < n; ++i) {
            int b = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), column[static_cast<size_t>(i)]) -
                                     edges.begin());
            int l = class_of(labels[static_cast<size_t>(i)]);
            joint[static_cast<size_t>(b) * L + l] += 1.0;
            pb[static_cast<size_t>(b)] += 1.0;
            pl[static_cast<size_t>(l)] += 1.0;
        }
        double mi = 0;
        for (int b = 0; b < bins; ++b)
            for (int l = 0; l < L; ++l) {
                const double pj = joint[static_cast<size_t>(b) * L + l] / n;
                if (pj <= 0) continue;
                mi += pj * std::log(pj * n * n / (pb[static_cast<size_t>(b)] * pl[static_cast<size_t>(l)]));
            }
        out[static_cast<size_t>(j)] = mi;
    }
    return out;
}

inline UnitRanking rank_units(const Matrix& emb, const std::vector<int>& labels, const std::string& method,
                              uint64_t seed = 0) {
    std::vector<double> scores;
    if (method == "mutual_information") {
        scores = mi_per_unit(emb, labels);
    } else if (method == "probe_weight") {
        scores = train_probe(emb, labels, 0.2, 1e-3, seed).unit_scores();
    } else {
        throw std::invalid_argument("rank_units: unknown method '" + method + "'");
    }
    UnitRanking r;
    r.method = method;
    r.scores = scores;
    r.order.resize(scores.size());
    std::iota(r.order.begin(), r.order.end(), 0);
    std::stable_sort(r.order.begin(), r.order.end(),
                     [&](int a, int b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });
    std::vector<double> sorted_scores(scores.size());
    for (size_t i = 0; i < r.order.size(); ++i) sorted_scores[i] = scores[static_cast<size_t>(r.order[i])];
    r.scores = std::move(sorted_scores);
    return r;
}

}  // namespace alab
