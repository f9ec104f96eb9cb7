#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "feat/autograd.hpp"
#include "feat/tensor.hpp"

namespace feat {

// Weighted key-value attention over a token sequence, per channel:
//
//   wkv_t = ( sum_{i != t} exp(-(|t-i|-1)/T * w' + k_i) * v_i + exp(u + k_t) * v_t )
//           / ( sum_{i != t} exp(-(|t-i|-1)/T * w' + k_i)       + exp(u + k_t) )
//
// with w' = softplus(w) >= 0 and T the sequence length. Bidirectional
// distance decay; adjacent tokens are undecayed. Evaluated in O(T) by a
// forward and a backward prefix scan with running-max exponent
// stabilization, against which wkv_reference provides the literal O(T^2)
// oracle.

namespace detail {

template <class T>
inline T softplus(T x) {
    return std::max(x, T(0)) + std::log1p(std::exp(-std::fabs(x)));
}

// One of the two stabilized exponents is exactly zero at every step (the
// running max is one of the candidates), so skip those exp calls.
template <class T>
inline T exp_nz(T x) {
    return x == T(0) ? T(1) : std::exp(x);
}

// One directional scan over a whole sequence, all channels at once
// (time-major, channel-contiguous). Records the state covering strictly
// preceding items as seen from each position t: value-sum p*e^m, weight-sum
// q*e^m with weights exp(-(dist-1)*delta + k_i).
template <class T>
void wkv_scan_dir(const T* k, const T* v, int64_t L, int64_t d, const T* delta, bool reverse,
                  T* sp, T* sq, T* sm, T* p, T* q, T* m) {
    for (int64_t c = 0; c < d; ++c) {
        p[c] = 0;
        q[c] = 0;
        m[c] = neg_big<T>();
    }
    for (int64_t step = 0; step < L; ++step) {
        int64_t t = reverse ? (L - 1 - step) : step;
        const T* kt = k + t * d;
        const T* vt = v + t * d;
        T* spt = sp + t * d;
        T* sqt = sq + t * d;
        T* smt = sm + t * d;
        for (int64_t c = 0; c < d; ++c) {
            spt[c] = p[c];
            sqt[c] = q[c];
            smt[c] = m[c];
            T decayed = m[c] - delta[c];
            T no = std::max(decayed, kt[c]);
            T ea = exp_nz(decayed - no);
            T eb = exp_nz(kt[c] - no);
            p[c] = ea * p[c] + eb * vt[c];
            q[c] = ea * q[c] + eb;
            m[c] = no;
        }
    }
}

}  // namespace detail

// Forward pass for contiguous sequences of length seq_len stacked along the
// row axis. out gets wkv; den/no_exp (when provided) store the per-position
// denominator as den * exp(no_exp) for the backward pass.
template <class T>
void wkv_forward_batched(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                         const Tensor<T>& u, int64_t seq_len, Tensor<T>& out,
                         Tensor<T>* den = nullptr, Tensor<T>* no_exp = nullptr) {
    if (k.ndim() != 2) throw ShapeError("wkv: k must be [N,D]");
    require_same_shape(k, v, "wkv");
    int64_t n = k.dim(0), d = k.dim(1);
    if (w.numel() != d || u.numel() != d) throw ShapeError("wkv: w/u must be length D");
    if (seq_len < 1 || n % seq_len != 0) throw ShapeError("wkv: rows not divisible by seq_len");
    int64_t nseq = n / seq_len;

    std::vector<T> delta(d);
    for (int64_t c = 0; c < d; ++c) delta[c] = detail::softplus(w[c]) / static_cast<T>(seq_len);

    std::vector<T> ap(seq_len * d), aq(seq_len * d), am(seq_len * d);
    std::vector<T> bp(seq_len * d), bq(seq_len * d), bm(seq_len * d);
    std::vector<T> p(d), q(d), m(d);
    for (int64_t s = 0; s < nseq; ++s) {
        const T* ks = k.data() + s * seq_len * d;
        const T* vs = v.data() + s * seq_len * d;
        T* os = out.data() + s * seq_len * d;
        detail::wkv_scan_dir(ks, vs, seq_len, d, delta.data(), false, ap.data(), aq.data(),
                             am.data(), p.data(), q.data(), m.data());
        detail::wkv_scan_dir(ks, vs, seq_len, d, delta.data(), true, bp.data(), bq.data(),
                             bm.data(), p.data(), q.data(), m.data());
        for (int64_t t = 0; t < seq_len; ++t) {
            int64_t row = t * d;
            for (int64_t c = 0; c < d; ++c) {
                T bonus = u[c] + ks[row + c];
                T no = std::max({am[row + c], bm[row + c], bonus});
                T ea = detail::exp_nz(am[row + c] - no);
                T eb = detail::exp_nz(bm[row + c] - no);
                T ec = detail::exp_nz(bonus - no);
                // paired grouping keeps the combine symmetric under reversal
                T num = (ea * ap[row + c] + eb * bp[row + c]) + ec * vs[row + c];
                T dnm = (ea * aq[row + c] + eb * bq[row + c]) + ec;
                T y = num / dnm;
                if (!std::isfinite(y))
                    throw NumericError("wkv: non-finite output despite stabilization (seq " +
                                       std::to_string(s) + ", t " + std::to_string(t) +
                                       ", channel " + std::to_string(c) + ")");
                os[row + c] = y;
                if (den) (*den)[s * seq_len * d + row + c] = dnm;
                if (no_exp) (*no_exp)[s * seq_len * d + row + c] = no;
            }
        }
    }
}

// Literal O(T^2) evaluation of the formula, no scan tricks. Verification
// oracle for small T.
template <class T>
Tensor<T> wkv_reference(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                        const Tensor<T>& u) {
    if (k.ndim() != 2) throw ShapeError("wkv_reference: k must be [T,D]");
    require_same_shape(k, v, "wkv_reference");
    int64_t L = k.dim(0), d = k.dim(1);
    if (L > 256) throw ConfigError("wkv_reference: T <= 256 only");
    if (w.numel() != d || u.numel() != d) throw ShapeError("wkv_reference: w/u must be length D");
    Tensor<T> out({L, d});
    for (int64_t c = 0; c < d; ++c) {
        T wp = detail::softplus(w[c]);
        for (int64_t t = 0; t < L; ++t) {
            T num = 0, dnm = 0;
            for (int64_t i = 0; i < L; ++i) {
                T weight;
                if (i == t) {
                    weight = std::exp(u[c] + k[t * d + c]);
                } else {
                    T dist = static_cast<T>(std::llabs(t - i));
                    weight = std::exp(-(dist - T(1)) / static_cast<T>(L) * wp + k[i * d + c]);
                }
                num += weight * v[i * d + c];
                dnm += weight;
            }
            out[t * d + c] = num / dnm;
        }
    }
    return out;
}

// Single-sequence convenience used by tests and benchmarks.
template <class T>
Tensor<T> wkv_scan(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w, const Tensor<T>& u) {
    Tensor<T> out(k.shape());
    wkv_forward_batched(k, v, w, u, k.dim(0), out);
    return out;
}

namespace detail {

// Backward-pass directional scan, time-major over all channels. Items enter
// keyed by exponent key_t with a pair of values (h1, h2); the state
// additionally carries the distance-weighted sums needed for the decay
// gradient:
//   p_j  = sum exp(-(dist-1)*delta + key_i) * h_i
//   c_j  = sum (dist-1) * exp(-(dist-1)*delta + key_i) * h_i
template <class T>
void wkv_grad_scan_dir(const T* key, const T* h1, const T* h2, int64_t L, int64_t d,
                       const T* delta, bool reverse, T* sp1, T* sp2, T* sc1, T* sc2, T* sm,
                       T* p1, T* p2, T* c1, T* c2, T* m) {
    for (int64_t c = 0; c < d; ++c) {
        p1[c] = 0;
        p2[c] = 0;
        c1[c] = 0;
        c2[c] = 0;
        m[c] = neg_big<T>();
    }
    for (int64_t step = 0; step < L; ++step) {
        int64_t t = reverse ? (L - 1 - step) : step;
        int64_t row = t * d;
        for (int64_t c = 0; c < d; ++c) {
            sp1[row + c] = p1[c];
            sp2[row + c] = p2[c];
            sc1[row + c] = c1[c];
            sc2[row + c] = c2[c];
            sm[row + c] = m[c];
            T decayed = m[c] - delta[c];
            T no = std::max(decayed, key[row + c]);
            T ea = exp_nz(decayed - no);
            T eb = exp_nz(key[row + c] - no);
            c1[c] = ea * (c1[c] + p1[c]);
            c2[c] = ea * (c2[c] + p2[c]);
            p1[c] = ea * p1[c] + eb * h1[row + c];
            p2[c] = ea * p2[c] + eb * h2[row + c];
            m[c] = no;
        }
    }
}

}  // namespace detail

// Reverse-mode gradients of the batched forward. dk/dv accumulate [N,D];
// dw/du accumulate [D]. Requires den/no_exp saved by the forward.
template <class T>
void wkv_backward_batched(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                          const Tensor<T>& u, int64_t seq_len, const Tensor<T>& out,
                          const Tensor<T>& den, const Tensor<T>& no_exp, const Tensor<T>& gout,
                          Tensor<T>* dk, Tensor<T>* dv, Tensor<T>* dw, Tensor<T>* du) {
    int64_t n = k.dim(0), d = k.dim(1);
    int64_t nseq = n / seq_len;
    int64_t L = seq_len;

    std::vector<T> delta(d), sig_over_l(d);
    for (int64_t c = 0; c < d; ++c) {
        delta[c] = detail::softplus(w[c]) / static_cast<T>(L);
        sig_over_l[c] = (T(1) / (T(1) + std::exp(-w[c]))) / static_cast<T>(L);
    }

    std::vector<T> key(L * d), h1(L * d), h2(L * d);
    std::vector<T> ap1(L * d), ap2(L * d), ac1(L * d), ac2(L * d), am(L * d);
    std::vector<T> bp1(L * d), bp2(L * d), bc1(L * d), bc2(L * d), bm(L * d);
    std::vector<T> s1(d), s2(d), s3(d), s4(d), s5(d);
    std::vector<T> ddelta(d);

    for (int64_t s = 0; s < nseq; ++s) {
        int64_t base = s * L * d;
        for (int64_t i = 0; i < L * d; ++i) {
            key[i] = -no_exp[base + i];
            T g_over_den = gout[base + i] / den[base + i];
            h1[i] = g_over_den;
            h2[i] = g_over_den * out[base + i];
        }
        detail::wkv_grad_scan_dir(key.data(), h1.data(), h2.data(), L, d, delta.data(), false,
                                  ap1.data(), ap2.data(), ac1.data(), ac2.data(), am.data(),
                                  s1.data(), s2.data(), s3.data(), s4.data(), s5.data());
        detail::wkv_grad_scan_dir(key.data(), h1.data(), h2.data(), L, d, delta.data(), true,
                                  bp1.data(), bp2.data(), bc1.data(), bc2.data(), bm.data(),
                                  s1.data(), s2.data(), s3.data(), s4.data(), s5.data());
        std::fill(ddelta.begin(), ddelta.end(), T(0));
        for (int64_t t = 0; t < L; ++t) {
            int64_t row = t * d;
            for (int64_t c = 0; c < d; ++c) {
                int64_t idx = base + row + c;
                T kt = k[idx], vt = v[idx], yt = out[idx];
                T mm = std::max(am[row + c], bm[row + c]);
                T ea = detail::exp_nz(am[row + c] - mm);
                T eb = detail::exp_nz(bm[row + c] - mm);
                T sum1 = ea * ap1[row + c] + eb * bp1[row + c];
                T sum2 = ea * ap2[row + c] + eb * bp2[row + c];
                T r1 = ea * ac1[row + c] + eb * bc1[row + c];
                T r2 = ea * ac2[row + c] + eb * bc2[row + c];
                T e_t = std::exp(kt + mm);
                T bonus = std::exp(u[c] + kt - no_exp[idx]) * (gout[idx] / den[idx]);
                if (dv) (*dv)[idx] += e_t * sum1 + bonus;
                if (dk) (*dk)[idx] += vt * e_t * sum1 - e_t * sum2 + bonus * (vt - yt);
                if (du) (*du)[c] += bonus * (vt - yt);
                ddelta[c] += e_t * (r2 - vt * r1);
            }
        }
        if (dw)
            for (int64_t c = 0; c < d; ++c) (*dw)[c] += ddelta[c] * sig_over_l[c];
    }
}

// Tape op. k, v are [N,D] with sequences of seq_len contiguous rows; w and u
// are per-channel [D] leaves (w is the raw pre-softplus decay).
template <class T>
Var<T> wkv(const Var<T>& k, const Var<T>& v, const Var<T>& w, const Var<T>& u, int64_t seq_len) {
    Tensor<T> out(k->value.shape());
    auto den = std::make_shared<Tensor<T>>(k->value.shape());
    auto no_exp = std::make_shared<Tensor<T>>(k->value.shape());
    wkv_forward_batched(k->value, v->value, w->value, u->value, seq_len, out, den.get(),
                        no_exp.get());
    auto node = detail::make_node(std::move(out), {k, v, w, u});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, k, v, w, u, den, no_exp, seq_len] {
            Tensor<T>* dk = k->requires_grad ? &k->ensure_grad() : nullptr;
            Tensor<T>* dv = v->requires_grad ? &v->ensure_grad() : nullptr;
            Tensor<T>* dw = w->requires_grad ? &w->ensure_grad() : nullptr;
            Tensor<T>* du = u->requires_grad ? &u->ensure_grad() : nullptr;
            wkv_backward_batched(k->value, v->value, w->value, u->value, seq_len, raw->value, *den,
                                 *no_exp, raw->grad, dk, dv, dw, du);
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Token shifts: depthwise convolutions replacing the original token-shift.
// Shift S is a per-channel 3x3 convolution over each frame's (H', W') grid;
// Shift T is a per-channel length-3 convolution along the frame axis. Both
// zero-pad at borders.
// ---------------------------------------------------------------------------

// x rows ordered (frame, site) row-major over (H', W'); kernel [D, 9].
template <class T>
Var<T> token_shift_spatial(const Var<T>& x, const Var<T>& kernel, int64_t frames, int64_t hp,
                           int64_t wp) {
    if (hp <= 0 || wp <= 0) throw ShapeError("token_shift_spatial: empty grid");
    int64_t d = x->shape()[1];
    if (x->shape()[0] != frames * hp * wp || kernel->numel() != d * 9)
        throw ShapeError("token_shift_spatial: inconsistent shapes");
    int64_t sites = hp * wp;
    Tensor<T> out(x->value.shape());
    for (int64_t f = 0; f < frames; ++f) {
        for (int64_t y = 0; y < hp; ++y) {
            for (int64_t xx = 0; xx < wp; ++xx) {
                T* orow = out.data() + (f * sites + y * wp + xx) * d;
                for (int64_t ky = -1; ky <= 1; ++ky) {
                    int64_t sy = y + ky;
                    if (sy < 0 || sy >= hp) continue;
                    for (int64_t kx = -1; kx <= 1; ++kx) {
                        int64_t sx = xx + kx;
                        if (sx < 0 || sx >= wp) continue;
                        const T* irow = x->value.data() + (f * sites + sy * wp + sx) * d;
                        const T* kcol = kernel->value.data() + (ky + 1) * 3 + (kx + 1);
                        for (int64_t c = 0; c < d; ++c) orow[c] += kcol[c * 9] * irow[c];
                    }
                }
            }
        }
    }
    auto node = detail::make_node(std::move(out), {x, kernel});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, kernel, frames, hp, wp, d, sites] {
            Tensor<T>* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
            Tensor<T>* gk = kernel->requires_grad ? &kernel->ensure_grad() : nullptr;
            for (int64_t f = 0; f < frames; ++f) {
                for (int64_t y = 0; y < hp; ++y) {
                    for (int64_t xx = 0; xx < wp; ++xx) {
                        const T* gout = raw->grad.data() + (f * sites + y * wp + xx) * d;
                        for (int64_t ky = -1; ky <= 1; ++ky) {
                            int64_t sy = y + ky;
                            if (sy < 0 || sy >= hp) continue;
                            for (int64_t kx = -1; kx <= 1; ++kx) {
                                int64_t sx = xx + kx;
                                if (sx < 0 || sx >= wp) continue;
                                int64_t tap = (ky + 1) * 3 + (kx + 1);
                                int64_t in_row = f * sites + sy * wp + sx;
                                if (gx) {
                                    T* gxr = gx->data() + in_row * d;
                                    const T* kcol = kernel->value.data() + tap;
                                    for (int64_t c = 0; c < d; ++c) gxr[c] += kcol[c * 9] * gout[c];
                                }
                                if (gk) {
                                    const T* irow = x->value.data() + in_row * d;
                                    T* gkc = gk->data() + tap;
                                    for (int64_t c = 0; c < d; ++c) gkc[c * 9] += irow[c] * gout[c];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return node;
}

// x rows ordered (site, frame); kernel [D, 3], tap offsets {-1, 0, +1}.
template <class T>
Var<T> token_shift_temporal(const Var<T>& x, const Var<T>& kernel, int64_t sites, int64_t frames) {
    if (sites <= 0 || frames <= 0) throw ShapeError("token_shift_temporal: empty layout");
    int64_t d = x->shape()[1];
    if (x->shape()[0] != sites * frames || kernel->numel() != d * 3)
        throw ShapeError("token_shift_temporal: inconsistent shapes");
    Tensor<T> out(x->value.shape());
    for (int64_t s = 0; s < sites; ++s) {
        for (int64_t f = 0; f < frames; ++f) {
            T* orow = out.data() + (s * frames + f) * d;
            for (int64_t kf = -1; kf <= 1; ++kf) {
                int64_t sf = f + kf;
                if (sf < 0 || sf >= frames) continue;
                const T* irow = x->value.data() + (s * frames + sf) * d;
                const T* kcol = kernel->value.data() + (kf + 1);
                for (int64_t c = 0; c < d; ++c) orow[c] += kcol[c * 3] * irow[c];
            }
        }
    }
    auto node = detail::make_node(std::move(out), {x, kernel});
    if (node->requires_grad) {
        Node<T>* raw = node.get();
        node->backward_fn = [raw, x, kernel, sites, frames, d] {
            Tensor<T>* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
            Tensor<T>* gk = kernel->requires_grad ? &kernel->ensure_grad() : nullptr;
            for (int64_t s = 0; s < sites; ++s) {
                for (int64_t f = 0; f < frames; ++f) {
                    const T* gout = raw->grad.data() + (s * frames + f) * d;
                    for (int64_t kf = -1; kf <= 1; ++kf) {
                        int64_t sf = f + kf;
                        if (sf < 0 || sf >= frames) continue;
                        int64_t in_row = s * frames + sf;
                        if (gx) {
                            T* gxr = gx->data() + in_row * d;
                            const T* kcol = kernel->value.data() + (kf + 1);
                            for (int64_t c = 0; c < d; ++c) gxr[c] += kcol[c * 3] * gout[c];
                        }
                        if (gk) {
                            const T* irow = x->value.data() + in_row * d;
                            T* gkc = gk->data() + (kf + 1);
                            for (int64_t c = 0; c < d; ++c) gkc[c * 3] += irow[c] * gout[c];
                        }
                    }
                }
            }
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// WKV sub-layer: shift -> R/K/V projections -> gated WKV -> output
// projection, with optional residual value guidance (value entering the scan
// becomes v + lambda1 (.) z; output gains lambda2 (.) (z - v)).
// ---------------------------------------------------------------------------

enum class ShiftKind { Spatial, Temporal };

template <class T>
struct WkvParams {
    Var<T> shift_kernel;       // [D,9] spatial, [D,3] temporal
    Var<T> w_r, w_k, w_v, w_o; // [D,D]
    Var<T> decay;              // [D], pre-softplus
    Var<T> bonus;              // [D]
};

template <class T>
Var<T> wkv_sublayer(const Var<T>& x, const WkvParams<T>& p, ShiftKind kind, int64_t frames,
                    int64_t hp, int64_t wp, const Var<T>* z = nullptr,
                    const Var<T>* lambda1 = nullptr, const Var<T>* lambda2 = nullptr) {
    int64_t seq_len = kind == ShiftKind::Spatial ? hp * wp : frames;
    Var<T> shifted = kind == ShiftKind::Spatial
                         ? token_shift_spatial(x, p.shift_kernel, frames, hp, wp)
                         : token_shift_temporal(x, p.shift_kernel, hp * wp, frames);
    Var<T> r = matmul(shifted, p.w_r);
    Var<T> k = matmul(shifted, p.w_k);
    Var<T> v = matmul(shifted, p.w_v);
    Var<T> v_in = z ? add(v, mul_rowvec(*z, *lambda1)) : v;
    Var<T> agg = wkv(k, v_in, p.decay, p.bonus, seq_len);
    Var<T> out = matmul(mul(sigmoid(r), agg), p.w_o);
    if (z) out = add(out, mul_rowvec(sub(*z, v), *lambda2));
    return out;
}

}  // namespace feat
