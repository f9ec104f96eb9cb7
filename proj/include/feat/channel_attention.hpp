#pragma once

#include <cmath>
#include <cstdint>

#include "feat/autograd.hpp"
#include "feat/tensor.hpp"

namespace feat {

// Global channel attention: attention over the D x D channel-covariance of
// L2-normalized projections, linear in token count. One head; temperature
// stored unconstrained and applied as exp(tau).
template <class T>
struct ChannelAttnParams {
    Var<T> w_q, w_k, w_v, w_o;  // [D,D]
    Var<T> temperature;         // scalar
};

// x is [N,D] over all clip tokens; optional residual value guidance as in the
// WKV sub-layer.
template <class T>
Var<T> channel_attention(const Var<T>& x, const ChannelAttnParams<T>& p, const Var<T>* z = nullptr,
                         const Var<T>* lambda1 = nullptr, const Var<T>* lambda2 = nullptr) {
    if (x->shape().size() != 2 || x->shape()[0] < 1)
        throw ShapeError("channel_attention: non-empty [N,D] input required");
    Var<T> q = matmul(x, p.w_q);
    Var<T> k = matmul(x, p.w_k);
    Var<T> v = matmul(x, p.w_v);
    Var<T> v_in = z ? add(v, mul_rowvec(*z, *lambda1)) : v;

    Var<T> qc = normalize_rows(transpose2d(q));           // [D,N], unit rows
    Var<T> kc = normalize_rows(transpose2d(k));
    Var<T> attn = softmax_rows(scale_exp(matmul_nt(qc, kc), p.temperature));  // [D,D]
    Var<T> yc = matmul(attn, transpose2d(v_in));          // [D,N]
    Var<T> out = matmul(transpose2d(yc), p.w_o);
    if (z) out = add(out, mul_rowvec(sub(*z, v), *lambda2));
    return out;
}

// Plain-array forward used by the timing benchmark (projections omitted; the
// kernel under test is the normalized channel mixing itself).
template <class T>
void channel_attention_kernel(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              T temperature_exp, Tensor<T>& out) {
    int64_t n = q.dim(0), d = q.dim(1);
    Tensor<T> qn({d, n}), kn({d, n});
    for (int64_t c = 0; c < d; ++c) {
        T sq = 0, sk = 0;
        for (int64_t i = 0; i < n; ++i) {
            sq += q[i * d + c] * q[i * d + c];
            sk += k[i * d + c] * k[i * d + c];
        }
        T nq = std::max(std::sqrt(sq), T(1e-12));
        T nk = std::max(std::sqrt(sk), T(1e-12));
        for (int64_t i = 0; i < n; ++i) {
            qn[c * n + i] = q[i * d + c] / nq;
            kn[c * n + i] = k[i * d + c] / nk;
        }
    }
    Tensor<T> scores({d, d});
    detail::gemm(false, true, d, d, n, temperature_exp, qn.data(), kn.data(), T(0), scores.data());
    for (int64_t r = 0; r < d; ++r) {
        T* row = scores.data() + r * d;
        T mx = row[0];
        for (int64_t c = 1; c < d; ++c) mx = std::max(mx, row[c]);
        T sum = 0;
        for (int64_t c = 0; c < d; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (int64_t c = 0; c < d; ++c) row[c] /= sum;
    }
    // out^T[c,i] = sum_e scores[c,e] * v[i,e]
    Tensor<T> yt({d, n});
    Tensor<T> vt({d, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c) vt[c * n + i] = v[i * d + c];
    detail::gemm(false, false, d, n, d, T(1), scores.data(), vt.data(), T(0), yt.data());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c) out[i * d + c] = yt[c * n + i];
}

}  // namespace feat
