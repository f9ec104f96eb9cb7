#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "feat/tensor.hpp"

#ifdef FEAT_USE_BLAS
#include <cblas.h>
#endif

namespace feat {

// ---------------------------------------------------------------------------
// GEMM backend. Row-major C[m,n] = alpha * op(A) op(B) + beta * C.
// ---------------------------------------------------------------------------
namespace detail {

template <class T>
constexpr T neg_big() {
    return T(-1e30);
}

#ifdef FEAT_USE_BLAS
inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
                 const float* b, float beta, float* c) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}
inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
                 const double* b, double beta, double* c) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}
#else
template <class T>
inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
                 const T* b, T beta, T* c) {
    auto A = [&](int64_t i, int64_t p) { return ta ? a[p * m + i] : a[i * k + p]; };
    auto B = [&](int64_t p, int64_t j) { return tb ? b[j * k + p] : b[p * n + j]; };
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            T acc = 0;
            for (int64_t p = 0; p < k; ++p) acc += A(i, p) * B(p, j);
            c[i * n + j] = alpha * acc + beta * c[i * n + j];
        }
    }
}
#endif

}  // namespace detail

// ---------------------------------------------------------------------------
// Reverse-mode tape. Nodes own their value and (lazily) their gradient; each
// op closes over its parents and accumulates into their gradients. Graphs are
// built per forward pass and freed when the root goes out of scope; leaves
// (parameters) persist, so repeated backward() calls accumulate into them.
// ---------------------------------------------------------------------------
template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until first touched
    bool requires_grad = false;
    std::vector<Var<T>> parents;
    std::function<void()> backward_fn;

    Tensor<T>& ensure_grad() {
        if (grad.empty()) grad = Tensor<T>(value.shape());
        return grad;
    }
    void zero_grad() {
        if (!grad.empty()) grad.fill(T(0));
    }
    int64_t numel() const { return value.numel(); }
    const Shape& shape() const { return value.shape(); }
};

template <class T>
Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

template <class T>
Var<T> constant(Tensor<T> v) {
    return leaf(std::move(v), false);
}

namespace detail {

template <class T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

}  // namespace detail

// Backpropagate from a scalar root. Gradients accumulate; callers zero leaf
// gradients between optimizer steps.
template <class T>
void backward(const Var<T>& root) {
    if (root->numel() != 1) throw ShapeError("backward: root must be scalar");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn();
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor<T> out(a->shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    auto n = detail::make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node<T>* raw = n.get();
        n->backward_fn = [raw, a, b] {
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i];
            }
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i];
            }
        };
    }
    return n;
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor<T> out(a->shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    auto n = detail::make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node<T>* raw = n.get();
        n->backward_fn = [raw, a, b] {
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i];
            }
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (int64_t i = 0; i < g.numel(); ++i) g[i] -= raw->grad[i];
            }
        };
    }
    return n;
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor<T> out(a->shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    auto n = detail::make_node(std::move(out), {a, b});
    if (n->requires_grad) {
        Node<T>* raw = n.get();
        n->backward_fn = [raw, a, b] {
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i] * b->value[i];
            }
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i] * a->value[i];
            }
        };
    }
    return n;
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
    Tensor<T> out(a->shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * factor;
    auto n = detail::make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node<T>* raw = n.get();
        n->backward_fn = [raw, a, factor] {
            auto& g = a->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i] * factor;
        };
    }
    return n;
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out(a->shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
    auto n = detail::make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node<T>* raw = n.get();
        n->backward_fn = [raw, a] {
            auto& g = a->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) {
                T y = raw->value[i];
                g[i] += raw->grad[i] * y * (T(1) - y);
            }
        };
    }
    return n;
}

template <class T>
Var<T> silu(const Var<T>& a) {
    Tensor<T> out(a->shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        T s = T(1) / (T(1) + std::exp(-a->value[i]));
        out[i] = a->value[i] * s;
    }
    auto n = detail::make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node<T>* raw = n.get();
        n->backward_fn = [raw, a] {
            auto& g = a->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) {
                T x = a->value[i];
                T s = T(1) / (T(1) + std::exp(-x));
                g[i] += raw->grad[i] * s * (T(1) + x * (T(1) - s));
            }
        };
    }
    return n;
}

// tanh-form GELU
template <class T>
Var<T> gelu(const Var<T>& a) {
    const T c0 = static_cast<T>(std::sqrt(2.0 / M_PI));
    const T c1 = static_cast<T>(0.044715);
    Tensor<T> out(a->shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        T x = a->value[i];
        out[i] = T(0.5) * x * (T(1) + std::tanh(c0 * (x + c1 * x * x * x)));
    }
    auto n = detail::make_node(std::move(out), {a});
    if (n->requires_grad) {
        Node<T>* raw = n.get();
        n->backward_fn = [raw, a, c0, c1] {
            auto& g = a->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) {
                T x = a->value[i];
                T u = c0 * (x + c1 * x * x * x);
                T th = std::tanh(u);
                T sech2 = T(1) - th * th;
                T du = c0 * (T(1) + T(3) * c1 * x * x);
                g[i] += raw->grad[i] * (T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * du);
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// Matmul family
// ---------------------------------------------------------------------------

// [n,k] x [k,m] -> [n,m]
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a->shape().size() != 2 || b->shape().size() != 2 || a->shape()[1] != b->shape()[0])
        throw ShapeError("matmul: " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
    int64_t n = a->shape()[0], k = a->shape()[1], m = b->shape()[1];
    Tensor<T> out({n, m});
    detail::gemm(false, false, n, m, k, T(1), a->value.data(), b->value.data(), T(0), out.data());
    auto node = detail::make_node(std::move(out), {a, b});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, a, b, n, k, m] {
            if (a->requires_grad)
                detail::gemm(false, true, n, k, m, T(1), raw->grad.data(), b->value.data(), T(1),
                             a->ensure_grad().data());
            if (b->requires_grad)
                detail::gemm(true, false, k, m, n, T(1), a->value.data(), raw->grad.data(), T(1),
                             b->ensure_grad().data());
        };
    }
    return node;
}

// [n,k] x [m,k]^T -> [n,m]
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    if (a->shape().size() != 2 || b->shape().size() != 2 || a->shape()[1] != b->shape()[1])
        throw ShapeError("matmul_nt: " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
    int64_t n = a->shape()[0], k = a->shape()[1], m = b->shape()[0];
    Tensor<T> out({n, m});
    detail::gemm(false, true, n, m, k, T(1), a->value.data(), b->value.data(), T(0), out.data());
    auto node = detail::make_node(std::move(out), {a, b});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, a, b, n, k, m] {
            if (a->requires_grad)
                detail::gemm(false, false, n, k, m, T(1), raw->grad.data(), b->value.data(), T(1),
                             a->ensure_grad().data());
            if (b->requires_grad)
                detail::gemm(true, false, m, k, n, T(1), raw->grad.data(), a->value.data(), T(1),
                             b->ensure_grad().data());
        };
    }
    return node;
}

template <class T>
Var<T> transpose2d(const Var<T>& a) {
    if (a->shape().size() != 2) throw ShapeError("transpose2d: rank-2 expected");
    int64_t n = a->shape()[0], m = a->shape()[1];
    Tensor<T> out({m, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) out[j * n + i] = a->value[i * m + j];
    auto node = detail::make_node(std::move(out), {a});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, a, n, m] {
            auto& g = a->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) g[i * m + j] += raw->grad[j * n + i];
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Row-broadcast ops: x is [n,d], vector argument is [d]
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void require_rowvec(const Var<T>& x, const Var<T>& v, const char* where) {
    if (x->shape().size() != 2 || v->numel() != x->shape()[1])
        throw ShapeError(std::string(where) + ": " + shape_str(x->shape()) + " with vector " +
                         shape_str(v->shape()));
}
}  // namespace detail

template <class T>
Var<T> mul_rowvec(const Var<T>& x, const Var<T>& s) {
    detail::require_rowvec(x, s, "mul_rowvec");
    int64_t n = x->shape()[0], d = x->shape()[1];
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out[i * d + j] = x->value[i * d + j] * s->value[j];
    auto node = detail::make_node(std::move(out), {x, s});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, s, n, d] {
            if (x->requires_grad) {
                auto& g = x->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) g[i * d + j] += raw->grad[i * d + j] * s->value[j];
            }
            if (s->requires_grad) {
                auto& g = s->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) g[j] += raw->grad[i * d + j] * x->value[i * d + j];
            }
        };
    }
    return node;
}

template <class T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& b) {
    detail::require_rowvec(x, b, "add_rowvec");
    int64_t n = x->shape()[0], d = x->shape()[1];
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out[i * d + j] = x->value[i * d + j] + b->value[j];
    auto node = detail::make_node(std::move(out), {x, b});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, b, n, d] {
            if (x->requires_grad) {
                auto& g = x->ensure_grad();
                for (int64_t i = 0; i < n * d; ++i) g[i] += raw->grad[i];
            }
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) g[j] += raw->grad[i * d + j];
            }
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Normalization / softmax
// ---------------------------------------------------------------------------

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6)) {
    detail::require_rowvec(x, gamma, "layer_norm");
    detail::require_rowvec(x, beta, "layer_norm");
    int64_t n = x->shape()[0], d = x->shape()[1];
    Tensor<T> out({n, d});
    auto xhat = std::make_shared<Tensor<T>>(Shape{n, d});
    auto inv_std = std::make_shared<Tensor<T>>(Shape{n});
    for (int64_t i = 0; i < n; ++i) {
        const T* row = x->value.data() + i * d;
        T mean = 0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (int64_t j = 0; j < d; ++j) {
            T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int64_t j = 0; j < d; ++j) {
            T xh = (row[j] - mean) * is;
            (*xhat)[i * d + j] = xh;
            out[i * d + j] = gamma->value[j] * xh + beta->value[j];
        }
    }
    auto node = detail::make_node(std::move(out), {x, gamma, beta});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, gamma, beta, xhat, inv_std, n, d] {
            for (int64_t i = 0; i < n; ++i) {
                const T* gy = raw->grad.data() + i * d;
                const T* xh = xhat->data() + i * d;
                if (gamma->requires_grad) {
                    auto& gg = gamma->ensure_grad();
                    for (int64_t j = 0; j < d; ++j) gg[j] += gy[j] * xh[j];
                }
                if (beta->requires_grad) {
                    auto& gb = beta->ensure_grad();
                    for (int64_t j = 0; j < d; ++j) gb[j] += gy[j];
                }
                if (x->requires_grad) {
                    auto& gx = x->ensure_grad();
                    T sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        T dxh = gy[j] * gamma->value[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[j];
                    }
                    T inv_d = T(1) / static_cast<T>(d);
                    for (int64_t j = 0; j < d; ++j) {
                        T dxh = gy[j] * gamma->value[j];
                        gx[i * d + j] += (*inv_std)[i] *
                                         (dxh - sum_dxhat * inv_d - xh[j] * sum_dxhat_xhat * inv_d);
                    }
                }
            }
        };
    }
    return node;
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
    if (x->shape().size() != 2) throw ShapeError("softmax_rows: rank-2 expected");
    int64_t n = x->shape()[0], d = x->shape()[1];
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        const T* row = x->value.data() + i * d;
        T mx = row[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int64_t j = 0; j < d; ++j) {
            T e = std::exp(row[j] - mx);
            out[i * d + j] = e;
            sum += e;
        }
        for (int64_t j = 0; j < d; ++j) out[i * d + j] /= sum;
    }
    auto node = detail::make_node(std::move(out), {x});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, n, d] {
            auto& g = x->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const T* y = raw->value.data() + i * d;
                const T* gy = raw->grad.data() + i * d;
                T dot = 0;
                for (int64_t j = 0; j < d; ++j) dot += gy[j] * y[j];
                for (int64_t j = 0; j < d; ++j) g[i * d + j] += y[j] * (gy[j] - dot);
            }
        };
    }
    return node;
}

// L2-normalizes each row; rows with norm below `floor` are divided by `floor`.
template <class T>
Var<T> normalize_rows(const Var<T>& x, T floor = T(1e-12)) {
    if (x->shape().size() != 2) throw ShapeError("normalize_rows: rank-2 expected");
    int64_t n = x->shape()[0], d = x->shape()[1];
    Tensor<T> out({n, d});
    auto norms = std::make_shared<Tensor<T>>(Shape{n});
    for (int64_t i = 0; i < n; ++i) {
        const T* row = x->value.data() + i * d;
        T ss = 0;
        for (int64_t j = 0; j < d; ++j) ss += row[j] * row[j];
        T norm = std::max(std::sqrt(ss), floor);
        (*norms)[i] = norm;
        for (int64_t j = 0; j < d; ++j) out[i * d + j] = row[j] / norm;
    }
    auto node = detail::make_node(std::move(out), {x});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, norms, floor, n, d] {
            auto& g = x->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const T* y = raw->value.data() + i * d;
                const T* gy = raw->grad.data() + i * d;
                T norm = (*norms)[i];
                if (norm > floor) {
                    T dot = 0;
                    for (int64_t j = 0; j < d; ++j) dot += y[j] * gy[j];
                    for (int64_t j = 0; j < d; ++j) g[i * d + j] += (gy[j] - y[j] * dot) / norm;
                } else {
                    for (int64_t j = 0; j < d; ++j) g[i * d + j] += gy[j] / floor;
                }
            }
        };
    }
    return node;
}

// y = x * exp(tau), tau a learnable scalar
template <class T>
Var<T> scale_exp(const Var<T>& x, const Var<T>& tau) {
    if (tau->numel() != 1) throw ShapeError("scale_exp: tau must be scalar");
    T f = std::exp(tau->value[0]);
    Tensor<T> out(x->shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * f;
    auto node = detail::make_node(std::move(out), {x, tau});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, tau, f] {
            if (x->requires_grad) {
                auto& g = x->ensure_grad();
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i] * f;
            }
            if (tau->requires_grad) {
                T acc = 0;
                for (int64_t i = 0; i < x->numel(); ++i) acc += raw->grad[i] * x->value[i];
                tau->ensure_grad()[0] += acc * f;
            }
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Data movement
// ---------------------------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& x, Shape new_shape) {
    Tensor<T> out = x->value.reshaped(std::move(new_shape));
    auto node = detail::make_node(std::move(out), {x});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x] {
            auto& g = x->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += raw->grad[i];
        };
    }
    return node;
}

template <class T>
Var<T> slice(const Var<T>& x, int64_t offset, int64_t len) {
    if (x->shape().size() != 1) throw ShapeError("slice: rank-1 expected");
    if (offset < 0 || len <= 0 || offset + len > x->numel()) throw ShapeError("slice: out of range");
    Tensor<T> out({len});
    for (int64_t i = 0; i < len; ++i) out[i] = x->value[offset + i];
    auto node = detail::make_node(std::move(out), {x});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, offset, len] {
            auto& g = x->ensure_grad();
            for (int64_t i = 0; i < len; ++i) g[offset + i] += raw->grad[i];
        };
    }
    return node;
}

// Row gather: out[i,:] = x[index[i],:]. Repeated source rows are allowed;
// their gradients accumulate.
template <class T>
Var<T> permute_rows(const Var<T>& x, std::shared_ptr<const std::vector<int64_t>> index) {
    if (x->shape().size() != 2) throw ShapeError("permute_rows: rank-2 expected");
    int64_t rows = x->shape()[0], d = x->shape()[1];
    int64_t n = static_cast<int64_t>(index->size());
    for (int64_t i : *index)
        if (i < 0 || i >= rows) throw ShapeError("permute_rows: index out of range");
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        const T* src = x->value.data() + (*index)[i] * d;
        T* dst = out.data() + i * d;
        std::copy(src, src + d, dst);
    }
    auto node = detail::make_node(std::move(out), {x});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, index, n, d] {
            auto& g = x->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const T* gy = raw->grad.data() + i * d;
                T* gx = g.data() + (*index)[i] * d;
                for (int64_t j = 0; j < d; ++j) gx[j] += gy[j];
            }
        };
    }
    return node;
}

// Element gather: out[i] = x[index[i]]. Indices may repeat; the gradient
// scatter-adds.
template <class T>
Var<T> gather(const Var<T>& x, std::shared_ptr<const std::vector<int64_t>> index, Shape out_shape) {
    int64_t n = shape_numel(out_shape);
    if (static_cast<int64_t>(index->size()) != n) throw ShapeError("gather: bad index size");
    Tensor<T> out(std::move(out_shape));
    for (int64_t i = 0; i < n; ++i) out[i] = x->value[(*index)[i]];
    auto node = detail::make_node(std::move(out), {x});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, index, n] {
            auto& g = x->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[(*index)[i]] += raw->grad[i];
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (int64_t i = 0; i < x->numel(); ++i) acc += x->value[i];
    Tensor<T> out({1});
    out[0] = acc;
    auto node = detail::make_node(std::move(out), {x});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x] {
            auto& g = x->ensure_grad();
            T gy = raw->grad[0];
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += gy;
        };
    }
    return node;
}

template <class T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x->numel()));
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    auto d = sub(a, b);
    return mean(mul(d, d));
}

}  // namespace feat
