#pragma once

#include <cstdint>

#include "feat/autograd.hpp"
#include "feat/tensor.hpp"

namespace feat {

// Residual value guidance: the patch-embedding tokens Z are routed into every
// block; the attention value becomes V + lambda1 (.) Z and the block output
// gains lambda2 (.) (Z - V). Both lambdas are per-channel and per-block,
// zero-initialized so a fresh model matches the un-guided network.
template <class T>
struct ResVgmParams {
    Var<T> lambda1;  // [D]
    Var<T> lambda2;  // [D]
};

// H = attn(V + lambda1 (.) Z) + lambda2 (.) (Z - V), lambdas broadcast over
// tokens. The attention callable receives the guided value tensor and must
// close over whatever else it needs (K, Q, decay, ...).
template <class T, class Attn>
Var<T> apply_resvgm(Attn&& attn, const Var<T>& v, const Var<T>& z, const Var<T>& lambda1,
                    const Var<T>& lambda2) {
    require_same_shape(v->value, z->value, "apply_resvgm");
    Var<T> guided = add(v, mul_rowvec(z, lambda1));
    Var<T> h = attn(guided);
    return add(h, mul_rowvec(sub(z, v), lambda2));
}

// Plain-tensor variant for stub-based tests and oracle compositions.
template <class T, class Attn>
Tensor<T> apply_resvgm_dense(Attn&& attn, const Tensor<T>& v, const Tensor<T>& z,
                             const Tensor<T>& lambda1, const Tensor<T>& lambda2) {
    require_same_shape(v, z, "apply_resvgm");
    int64_t n = v.dim(0), d = v.dim(1);
    if (lambda1.numel() != d || lambda2.numel() != d)
        throw ShapeError("apply_resvgm: lambda length mismatch");
    Tensor<T> guided({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c)
            guided[i * d + c] = v[i * d + c] + lambda1[c] * z[i * d + c];
    Tensor<T> h = attn(guided);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c)
            h[i * d + c] += lambda2[c] * (z[i * d + c] - v[i * d + c]);
    return h;
}

}  // namespace feat
