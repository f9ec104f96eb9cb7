#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "feat/autograd.hpp"
#include "feat/tensor.hpp"

namespace feat {

// Naive quadratic softmax self-attention. Kept as the efficiency baseline for
// benchmarks and as the attention of the ablation baseline model.

// Row-at-a-time forward on plain arrays, O(T^2 * D) time, O(T) extra memory.
template <class T>
void softmax_attention_kernel(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              Tensor<T>& out) {
    int64_t n = q.dim(0), d = q.dim(1);
    T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<T> scores(n);
    for (int64_t t = 0; t < n; ++t) {
        const T* qt = q.data() + t * d;
        T mx = detail::neg_big<T>();
        for (int64_t i = 0; i < n; ++i) {
            const T* ki = k.data() + i * d;
            T dot = 0;
            for (int64_t c = 0; c < d; ++c) dot += qt[c] * ki[c];
            scores[i] = dot * inv_sqrt_d;
            mx = std::max(mx, scores[i]);
        }
        T sum = 0;
        for (int64_t i = 0; i < n; ++i) {
            scores[i] = std::exp(scores[i] - mx);
            sum += scores[i];
        }
        T* ot = out.data() + t * d;
        for (int64_t c = 0; c < d; ++c) ot[c] = 0;
        for (int64_t i = 0; i < n; ++i) {
            T p = scores[i] / sum;
            const T* vi = v.data() + i * d;
            for (int64_t c = 0; c < d; ++c) ot[c] += p * vi[c];
        }
    }
}

// Tape op over contiguous sequences of seq_len rows. Standard attention
// backward; probability matrices are rematerialized per sequence.
template <class T>
Var<T> softmax_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int64_t seq_len) {
    require_same_shape(q->value, k->value, "softmax_attention");
    require_same_shape(q->value, v->value, "softmax_attention");
    int64_t n = q->shape()[0], d = q->shape()[1];
    if (seq_len < 1 || n % seq_len != 0)
        throw ShapeError("softmax_attention: rows not divisible by seq_len");
    int64_t nseq = n / seq_len;
    T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

    auto probs = std::make_shared<Tensor<T>>(Shape{nseq * seq_len, seq_len});
    Tensor<T> out({n, d});
    for (int64_t s = 0; s < nseq; ++s) {
        const T* qs = q->value.data() + s * seq_len * d;
        const T* ks = k->value.data() + s * seq_len * d;
        const T* vs = v->value.data() + s * seq_len * d;
        T* ps = probs->data() + s * seq_len * seq_len;
        detail::gemm(false, true, seq_len, seq_len, d, inv_sqrt_d, qs, ks, T(0), ps);
        for (int64_t t = 0; t < seq_len; ++t) {
            T* row = ps + t * seq_len;
            T mx = row[0];
            for (int64_t i = 1; i < seq_len; ++i) mx = std::max(mx, row[i]);
            T sum = 0;
            for (int64_t i = 0; i < seq_len; ++i) {
                row[i] = std::exp(row[i] - mx);
                sum += row[i];
            }
            for (int64_t i = 0; i < seq_len; ++i) row[i] /= sum;
        }
        detail::gemm(false, false, seq_len, d, seq_len, T(1), ps, vs, T(0),
                     out.data() + s * seq_len * d);
    }
    auto node = detail::make_node(std::move(out), {q, k, v});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, q, k, v, probs, seq_len, nseq, d, inv_sqrt_d] {
            Tensor<T> dp({seq_len, seq_len});
            Tensor<T> ds({seq_len, seq_len});
            for (int64_t s = 0; s < nseq; ++s) {
                const T* qs = q->value.data() + s * seq_len * d;
                const T* ks = k->value.data() + s * seq_len * d;
                const T* vs = v->value.data() + s * seq_len * d;
                const T* ps = probs->data() + s * seq_len * seq_len;
                const T* gy = raw->grad.data() + s * seq_len * d;
                if (v->requires_grad)
                    detail::gemm(true, false, seq_len, d, seq_len, T(1), ps, gy, T(1),
                                 v->ensure_grad().data() + s * seq_len * d);
                // dP = gy V^T; dS = P (.) (dP - rowsum(dP (.) P))
                detail::gemm(false, true, seq_len, seq_len, d, T(1), gy, vs, T(0), dp.data());
                for (int64_t t = 0; t < seq_len; ++t) {
                    const T* prow = ps + t * seq_len;
                    const T* dprow = dp.data() + t * seq_len;
                    T dot = 0;
                    for (int64_t i = 0; i < seq_len; ++i) dot += dprow[i] * prow[i];
                    T* dsrow = ds.data() + t * seq_len;
                    for (int64_t i = 0; i < seq_len; ++i)
                        dsrow[i] = prow[i] * (dprow[i] - dot) * inv_sqrt_d;
                }
                if (q->requires_grad)
                    detail::gemm(false, false, seq_len, d, seq_len, T(1), ds.data(), ks, T(1),
                                 q->ensure_grad().data() + s * seq_len * d);
                if (k->requires_grad)
                    detail::gemm(true, false, seq_len, d, seq_len, T(1), ds.data(), qs, T(1),
                                 k->ensure_grad().data() + s * seq_len * d);
            }
        };
    }
    return node;
}

}  // namespace feat
