#pragma once
// Minimal reverse-mode autodiff over dense row-major tensors. Eager: every op
// computes its value immediately and, when gradients are enabled, records a
// backward closure on a tape implied by the node graph.
//
// Scalar type is a template parameter: float for training, double for
// gradient-check tests. Shapes are explicit; mismatches throw with both
// shapes in the message. No broadcasting beyond what the models use
// (row-vector bias addition).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace alab {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated on first backward touch
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Shared-handle tensor; copying shares the underlying node.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<TensorNode<T>>();
        n->data.assign(shape_numel(shape), T(0));
        n->shape = std::move(shape);
        return Tensor(n);
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("from_data: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        return Tensor(n);
    }

    // Leaf parameter participating in backward.
    static Tensor param(Shape shape, std::vector<T> values) {
        Tensor t = from_data(std::move(shape), std::move(values));
        t.n_->requires_grad = true;
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rows() const { return n_->shape.at(0); }
    int cols() const { return n_->shape.at(1); }
    size_t size() const { return n_->data.size(); }
    bool is_scalar() const { return n_->data.size() == 1; }
    T scalar() const {
        if (!is_scalar()) throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape()));
        return n_->data[0];
    }

    std::vector<T>& data() { return n_->data; }
    const std::vector<T>& data() const { return n_->data; }
    T& at(int r, int c) { return n_->data[static_cast<size_t>(r) * cols() + c]; }
    T at(int r, int c) const { return n_->data[static_cast<size_t>(r) * cols() + c]; }

    bool requires_grad() const { return n_->requires_grad; }
    bool has_grad() const { return n_->grad.size() == n_->data.size(); }
    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    std::shared_ptr<TensorNode<T>> node() const { return n_; }

private:
    std::shared_ptr<TensorNode<T>> n_;
};

// ---------------------------------------------------------------------------
// Raw matmul kernels (row-major). ikj / dot / rank-1 loop orders keep the
// inner loop contiguous so the compiler vectorizes them.
// ---------------------------------------------------------------------------

template <class T>
void mm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::fill(ci, ci + n, T(0));
        const T* ai = a + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T aik = ai[kk];
            const T* bk = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

// c(m x n) = a(m x k) . b(n x k)^T. b is transposed into scratch first so the
// inner loop stays contiguous; the copy is negligible next to the multiply.
template <class T>
void mm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    thread_local std::vector<char> scratch;
    scratch.resize(static_cast<size_t>(k) * n * sizeof(T));
    T* bt = reinterpret_cast<T*>(scratch.data());
    for (int j = 0; j < n; ++j)
        for (int kk = 0; kk < k; ++kk) bt[static_cast<size_t>(kk) * n + j] = b[static_cast<size_t>(j) * k + kk];
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::fill(ci, ci + n, T(0));
        const T* ai = a + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T aik = ai[kk];
            const T* bk = bt + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

// c(k x n) = a(m x k)^T . b(m x n)
template <class T>
void mm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(k) * n, T(0));
    for (int mm = 0; mm < m; ++mm) {
        const T* am = a + static_cast<size_t>(mm) * k;
        const T* bm = b + static_cast<size_t>(mm) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T amk = am[kk];
            if (amk == T(0)) continue;
            T* ck = c + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) ck[j] += amk * bm[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Graph plumbing
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> parents,
                      std::function<void(TensorNode<T>&)> backward_fn) {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    bool needs = false;
    if (grad_mode()) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(node);
}

template <class T>
void require_2d(const Tensor<T>& t, const char* op) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> out(static_cast<size_t>(m) * n);
    mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(
        {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode<T>& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                mm_nt(o.grad.data(), bn->data.data(), an->grad.data(), m, n, k, true);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                mm_tn(an->data.data(), o.grad.data(), bn->grad.data(), m, k, n, true);
            }
        });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_2d(a, "transpose");
    const int m = a.rows(), n = a.cols();
    std::vector<T> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
    auto an = a.node();
    return detail::make_result<T>({n, m}, std::move(out), {a}, [an, m, n](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i)
                an->grad[static_cast<size_t>(i) * n + j] += o.grad[static_cast<size_t>(j) * m + i];
    });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    auto an = a.node();
    return detail::make_result<T>(a.shape(), std::move(out), {a}, [an, s](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += s * o.grad[i];
    });
}

// m (r x c) + v (c), broadcast over rows.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& m, const Tensor<T>& v) {
    detail::require_2d(m, "add_rowvec");
    if (v.shape().size() != 1 || v.dim(0) != m.cols())
        throw std::invalid_argument("add_rowvec: vector " + shape_str(v.shape()) + " does not match " +
                                    shape_str(m.shape()));
    const int r = m.rows(), c = m.cols();
    std::vector<T> out(m.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<size_t>(i) * c + j] = m.data()[static_cast<size_t>(i) * c + j] + v.data()[j];
    auto mn = m.node();
    auto vn = v.node();
    return detail::make_result<T>(m.shape(), std::move(out), {m, v}, [mn, vn, r, c](TensorNode<T>& o) {
        if (mn->requires_grad) {
            mn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) mn->grad[i] += o.grad[i];
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) vn->grad[j] += o.grad[static_cast<size_t>(i) * c + j];
        }
    });
}

template <class T>
Tensor<T> concat_last_dim(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_2d(a, "concat_last_dim");
    detail::require_2d(b, "concat_last_dim");
    if (a.rows() != b.rows())
        throw std::invalid_argument("concat_last_dim: row mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    const int r = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<T> out(static_cast<size_t>(r) * (ca + cb));
    for (int i = 0; i < r; ++i) {
        std::copy_n(a.data().data() + static_cast<size_t>(i) * ca, ca,
                    out.data() + static_cast<size_t>(i) * (ca + cb));
        std::copy_n(b.data().data() + static_cast<size_t>(i) * cb, cb,
                    out.data() + static_cast<size_t>(i) * (ca + cb) + ca);
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>({r, ca + cb}, std::move(out), {a, b}, [an, bn, r, ca, cb](TensorNode<T>& o) {
        const int cc = ca + cb;
        if (an->requires_grad) {
            an->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < ca; ++j)
                    an->grad[static_cast<size_t>(i) * ca + j] += o.grad[static_cast<size_t>(i) * cc + j];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < cb; ++j)
                    bn->grad[static_cast<size_t>(i) * cb + j] += o.grad[static_cast<size_t>(i) * cc + ca + j];
        }
    });
}

// Columns [c0, c1) of a 2-d tensor.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
    detail::require_2d(a, "slice_cols");
    if (c0 < 0 || c1 > a.cols() || c0 >= c1)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                    ") invalid for " + shape_str(a.shape()));
    const int r = a.rows(), c = a.cols(), w = c1 - c0;
    std::vector<T> out(static_cast<size_t>(r) * w);
    for (int i = 0; i < r; ++i)
        std::copy_n(a.data().data() + static_cast<size_t>(i) * c + c0, w, out.data() + static_cast<size_t>(i) * w);
    auto an = a.node();
    return detail::make_result<T>({r, w}, std::move(out), {a}, [an, r, c, c0, w](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j)
                an->grad[static_cast<size_t>(i) * c + c0 + j] += o.grad[static_cast<size_t>(i) * w + j];
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
    std::vector<T> out = a.data();
    auto an = a.node();
    return detail::make_result<T>(std::move(shape), std::move(out), {a}, [an](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    });
}

// Gather rows of an embedding table; gradient scatters back into the table.
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
    detail::require_2d(table, "embedding_lookup");
    const int v = table.rows(), d = table.cols();
    std::vector<T> out(ids.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v)
            throw std::invalid_argument("embedding_lookup: id " + std::to_string(ids[i]) +
                                        " outside table " + shape_str(table.shape()));
        std::copy_n(table.data().data() + static_cast<size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    auto tn = table.node();
    auto ids_copy = ids;
    return detail::make_result<T>({static_cast<int>(ids.size()), d}, std::move(out), {table},
                                  [tn, ids_copy, d](TensorNode<T>& o) {
                                      if (!tn->requires_grad) return;
                                      tn->ensure_grad();
                                      for (size_t i = 0; i < ids_copy.size(); ++i)
                                          for (int j = 0; j < d; ++j)
                                              tn->grad[static_cast<size_t>(ids_copy[i]) * d + j] +=
                                                  o.grad[i * static_cast<size_t>(d) + j];
                                  });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    const size_t n = a.size();
    T s = std::accumulate(a.data().begin(), a.data().end(), T(0));
    auto an = a.node();
    return detail::make_result<T>({1}, {s / static_cast<T>(n)}, {a}, [an, n](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T g = o.grad[0] / static_cast<T>(n);
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
}

// Population (biased) variance over all elements.
template <class T>
Tensor<T> variance_all(const Tensor<T>& a) {
    const size_t n = a.size();
    T mu = std::accumulate(a.data().begin(), a.data().end(), T(0)) / static_cast<T>(n);
    T var = T(0);
    for (T x : a.data()) var += (x - mu) * (x - mu);
    var /= static_cast<T>(n);
    auto an = a.node();
    return detail::make_result<T>({1}, {var}, {a}, [an, n, mu](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T g = o.grad[0] * T(2) / static_cast<T>(n);
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g * (an->data[i] - mu);
    });
}

// Layer norm over the last dimension with learned gain/bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    detail::require_2d(x, "layer_norm");
    const int r = x.rows(), c = x.cols();
    if (gain.shape() != Shape{c} || bias.shape() != Shape{c})
        throw std::invalid_argument("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                                    shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
    if (eps <= T(0)) throw std::invalid_argument("layer_norm: eps must be positive");
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        const T* xi = x.data().data() + static_cast<size_t>(i) * c;
        T mu = T(0);
        for (int j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<T>(c);
        const T istd = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = istd;
        for (int j = 0; j < c; ++j) {
            const T xh = (xi[j] - mu) * istd;
            xhat[static_cast<size_t>(i) * c + j] = xh;
            out[static_cast<size_t>(i) * c + j] = gain.data()[j] * xh + bias.data()[j];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), {x, gain, bias},
        [xn, gn, bn, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<T>& o) {
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        gn->grad[j] += o.grad[static_cast<size_t>(i) * c + j] * xhat[static_cast<size_t>(i) * c + j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) bn->grad[j] += o.grad[static_cast<size_t>(i) * c + j];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    const T* go = o.grad.data() + static_cast<size_t>(i) * c;
                    const T* xh = xhat.data() + static_cast<size_t>(i) * c;
                    T mean_gy = T(0), mean_gy_xhat = T(0);
                    for (int j = 0; j < c; ++j) {
                        const T gy = go[j] * gn->data[j];
                        mean_gy += gy;
                        mean_gy_xhat += gy * xh[j];
                    }
                    mean_gy /= static_cast<T>(c);
                    mean_gy_xhat /= static_cast<T>(c);
                    T* gx = xn->grad.data() + static_cast<size_t>(i) * c;
                    const T istd = inv_std[static_cast<size_t>(i)];
                    for (int j = 0; j < c; ++j) {
                        const T gy = go[j] * gn->data[j];
                        gx[j] += istd * (gy - mean_gy - xh[j] * mean_gy_xhat);
                    }
                }
            }
        });
}

// Row-wise softmax, stabilized by max subtraction.
template <class T>
Tensor<T> softmax_last_dim(const Tensor<T>& x) {
    detail::require_2d(x, "softmax_last_dim");
    const int r = x.rows(), c = x.cols();
    std::vector<T> out(x.size());
    for (int i = 0; i < r; ++i) {
        const T* xi = x.data().data() + static_cast<size_t>(i) * c;
        T* oi = out.data() + static_cast<size_t>(i) * c;
        T m = xi[0];
        for (int j = 1; j < c; ++j) m = std::max(m, xi[j]);
        T sum = T(0);
        for (int j = 0; j < c; ++j) {
            oi[j] = std::exp(xi[j] - m);
            sum += oi[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < c; ++j) oi[j] *= inv;
    }
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(out), {x}, [xn, r, c](TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i) {
            const T* y = o.data.data() + static_cast<size_t>(i) * c;
            const T* gy = o.grad.data() + static_cast<size_t>(i) * c;
            T dot = T(0);
            for (int j = 0; j < c; ++j) dot += y[j] * gy[j];
            T* gx = xn->grad.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
}

// Exact GELU (erf form).
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    std::vector<T> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(x.data()[i]);
        out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
    }
    auto xn = x.node();
    return detail::make_result<T>(x.shape(), std::move(out), {x}, [xn](TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            const double v = static_cast<double>(xn->data[i]);
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            xn->grad[i] += o.grad[i] * static_cast<T>(cdf + v * pdf);
        }
    });
}

// Mean negative log softmax probability of the target ids.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
    detail::require_2d(logits, "cross_entropy");
    const int t = logits.rows(), v = logits.cols();
    if (static_cast<int>(targets.size()) != t)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for logits " + shape_str(logits.shape()));
    std::vector<T> probs(logits.size());
    T loss = T(0);
    for (int i = 0; i < t; ++i) {
        if (targets[i] < 0 || targets[i] >= v)
            throw std::invalid_argument("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
        const T* xi = logits.data().data() + static_cast<size_t>(i) * v;
        T* pi = probs.data() + static_cast<size_t>(i) * v;
        T m = xi[0];
        for (int j = 1; j < v; ++j) m = std::max(m, xi[j]);
        T sum = T(0);
        for (int j = 0; j < v; ++j) {
            pi[j] = std::exp(xi[j] - m);
            sum += pi[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < v; ++j) pi[j] *= inv;
        loss -= std::log(pi[targets[i]]);
    }
    loss /= static_cast<T>(t);
    auto ln = logits.node();
    auto tg = targets;
    return detail::make_result<T>({1}, {loss}, {logits},
                                  [ln, tg, t, v, probs = std::move(probs)](TensorNode<T>& o) {
                                      if (!ln->requires_grad) return;
                                      ln->ensure_grad();
                                      const T g = o.grad[0] / static_cast<T>(t);
                                      for (int i = 0; i < t; ++i) {
                                          const T* pi = probs.data() + static_cast<size_t>(i) * v;
                                          T* gi = ln->grad.data() + static_cast<size_t>(i) * v;
                                          for (int j = 0; j < v; ++j) gi[j] += g * pi[j];
                                          gi[tg[i]] -= g;
                                      }
                                  });
}

// Mean squared difference to a constant reference (no gradient to ref).
template <class T>
Tensor<T> mse_to_const(const Tensor<T>& a, const std::vector<T>& ref) {
    if (a.size() != ref.size())
        throw std::invalid_argument("mse_to_const: reference size " + std::to_string(ref.size()) +
                                    " does not match " + shape_str(a.shape()));
    const size_t n = a.size();
    T s = T(0);
    for (size_t i = 0; i < n; ++i) {
        const T d = a.data()[i] - ref[i];
        s += d * d;
    }
    auto an = a.node();
    return detail::make_result<T>({1}, {s / static_cast<T>(n)}, {a}, [an, ref, n](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T g = o.grad[0] * T(2) / static_cast<T>(n);
        for (size_t i = 0; i < n; ++i) an->grad[i] += g * (an->data[i] - ref[i]);
    });
}

// Vector-quantization forward: output rows are codebook rows selected by
// `words`; the backward pass is the straight-through estimator (gradient
// copies to q, none reaches the codebook).
template <class T>
Tensor<T> straight_through_lookup(const Tensor<T>& q, const std::vector<T>& codebook, int code_dim,
                                  const std::vector<int>& words) {
    detail::require_2d(q, "straight_through_lookup");
    if (q.cols() != code_dim)
        throw std::invalid_argument("straight_through_lookup: q " + shape_str(q.shape()) +
                                    " vs code dim " + std::to_string(code_dim));
    if (static_cast<int>(words.size()) != q.rows())
        throw std::invalid_argument("straight_through_lookup: word count mismatch");
    std::vector<T> out(q.size());
    for (size_t i = 0; i < words.size(); ++i)
        std::copy_n(codebook.data() + static_cast<size_t>(words[i]) * code_dim, code_dim,
                    out.data() + i * static_cast<size_t>(code_dim));
    auto qn = q.node();
    return detail::make_result<T>(q.shape(), std::move(out), {q}, [qn](TensorNode<T>& o) {
        if (!qn->requires_grad) return;
        qn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) qn->grad[i] += o.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse-topological traversal from a scalar loss. Gradients accumulate into
// every reachable node that requires grad; the caller zeroes parameter grads
// between steps.
template <class T>
void backward(const Tensor<T>& loss, T seed = T(1)) {
    if (!loss.is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            TensorNode<T>* p = node->parents[next_child].get();
            ++next_child;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

}  // namespace alab
