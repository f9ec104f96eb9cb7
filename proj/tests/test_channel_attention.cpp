#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "feat/channel_attention.hpp"
#include "feat/grad_check.hpp"
#include "feat/rng.hpp"

using namespace feat;

namespace {

struct Fixture {
    int64_t n, d;
    Tensor<double> x, wq, wk, wv, wo, tau, z, l1, l2;

    Fixture(int64_t n_, int64_t d_, uint64_t seed) : n(n_), d(d_) {
        RngStream rng(seed);
        x = Tensor<double>({n, d});
        wq = Tensor<double>({d, d});
        wk = Tensor<double>({d, d});
        wv = Tensor<double>({d, d});
        wo = Tensor<double>({d, d});
        tau = Tensor<double>({1});
        z = Tensor<double>({n, d});
        l1 = Tensor<double>({d});
        l2 = Tensor<double>({d});
        rng.fill_gaussian(x);
        rng.fill_gaussian(wq, 0.5);
        rng.fill_gaussian(wk, 0.5);
        rng.fill_gaussian(wv, 0.5);
        rng.fill_gaussian(wo, 0.5);
        tau[0] = rng.next_gaussian() * 0.3;
        rng.fill_gaussian(z);
        rng.fill_gaussian(l1, 0.5);
        rng.fill_gaussian(l2, 0.5);
    }

    ChannelAttnParams<double> params() const {
        return {constant(wq), constant(wk), constant(wv), constant(wo), constant(tau)};
    }
};

// Literal step-by-step dense evaluation, written with plain loops only.
// Returns the output and fills attn_out with the D x D attention matrix.
Tensor<double> dense_channel_oracle(const Fixture& fx, bool guided, Tensor<double>* attn_out) {
    int64_t n = fx.n, d = fx.d;
    auto matvec = [&](const Tensor<double>& m, const Tensor<double>& in, Tensor<double>& out) {
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) {
                double acc = 0;
                for (int64_t k = 0; k < d; ++k) acc += in[i * d + k] * m[k * d + j];
                out[i * d + j] = acc;
            }
    };
    Tensor<double> q({n, d}), k({n, d}), v({n, d});
    matvec(fx.wq, fx.x, q);
    matvec(fx.wk, fx.x, k);
    matvec(fx.wv, fx.x, v);
    Tensor<double> v_orig = v;
    if (guided)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < d; ++c) v[i * d + c] += fx.l1[c] * fx.z[i * d + c];

    // channel-major rows, L2 normalized with a 1e-12 floor
    auto channel_norm = [&](const Tensor<double>& m, int64_t c) {
        double ss = 0;
        for (int64_t i = 0; i < n; ++i) ss += m[i * d + c] * m[i * d + c];
        return std::max(std::sqrt(ss), 1e-12);
    };
    Tensor<double> scores({d, d});
    for (int64_t a = 0; a < d; ++a) {
        double na = channel_norm(q, a);
        for (int64_t b = 0; b < d; ++b) {
            double nb = channel_norm(k, b);
            double dot = 0;
            for (int64_t i = 0; i < n; ++i) dot += (q[i * d + a] / na) * (k[i * d + b] / nb);
            scores[a * d + b] = dot * std::exp(fx.tau[0]);
        }
    }
    Tensor<double> attn({d, d});
    for (int64_t a = 0; a < d; ++a) {
        double mx = scores[a * d];
        for (int64_t b = 1; b < d; ++b) mx = std::max(mx, scores[a * d + b]);
        double sum = 0;
        for (int64_t b = 0; b < d; ++b) {
            attn[a * d + b] = std::exp(scores[a * d + b] - mx);
            sum += attn[a * d + b];
        }
        for (int64_t b = 0; b < d; ++b) attn[a * d + b] /= sum;
    }
    if (attn_out) *attn_out = attn;

    Tensor<double> mixed({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t a = 0; a < d; ++a) {
            double acc = 0;
            for (int64_t b = 0; b < d; ++b) acc += attn[a * d + b] * v[i * d + b];
            mixed[i * d + a] = acc;
        }
    Tensor<double> out({n, d});
    matvec(fx.wo, mixed, out);
    if (guided)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < d; ++c)
                out[i * d + c] += fx.l2[c] * (fx.z[i * d + c] - v_orig[i * d + c]);
    return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("channel attention D=1 is the projected value path", "[channel]") {
    Fixture fx(5, 1, 31);
    auto out = channel_attention(constant(fx.x), fx.params());
    for (int64_t i = 0; i < fx.n; ++i) {
        double v = fx.x[i] * fx.wv[0];
        REQUIRE(out->value[i] == Catch::Approx(v * fx.wo[0]).margin(1e-12));
    }
}

TEST_CASE("very negative temperature yields uniform channel mixing", "[channel]") {
    Fixture fx(12, 6, 32);
    fx.tau[0] = -60.0;  // exp(tau) ~ 0 -> softmax of ~zeros -> uniform rows
    // identity output projection exposes the mixed values directly
    Tensor<double> eye({fx.d, fx.d});
    for (int64_t i = 0; i < fx.d; ++i) eye[i * fx.d + i] = 1.0;
    fx.wo = eye;
    auto out = channel_attention(constant(fx.x), fx.params());

    Tensor<double> v({fx.n, fx.d});
    for (int64_t i = 0; i < fx.n; ++i)
        for (int64_t j = 0; j < fx.d; ++j) {
            double acc = 0;
            for (int64_t k = 0; k < fx.d; ++k) acc += fx.x[i * fx.d + k] * fx.wv[k * fx.d + j];
            v[i * fx.d + j] = acc;
        }
    for (int64_t i = 0; i < fx.n; ++i) {
        double mean = 0;
        for (int64_t c = 0; c < fx.d; ++c) mean += v[i * fx.d + c];
        mean /= static_cast<double>(fx.d);
        for (int64_t c = 0; c < fx.d; ++c)
            REQUIRE(out->value[i * fx.d + c] == Catch::Approx(mean).margin(1e-10));
    }
}

TEST_CASE("channel attention matches the dense oracle", "[channel][oracle]") {
    for (uint64_t seed : {41ULL, 42ULL, 43ULL, 44ULL}) {
        RngStream pick(seed);
        int64_t n = 2 + static_cast<int64_t>(pick.next_below(63));
        int64_t d = 1 + static_cast<int64_t>(pick.next_below(8));
        Fixture fx(n, d, seed * 7 + 1);

        auto plain = channel_attention(constant(fx.x), fx.params());
        REQUIRE(max_abs_diff(plain->value, dense_channel_oracle(fx, false, nullptr)) < 1e-11);

        auto zv = constant(fx.z);
        auto l1 = constant(fx.l1), l2 = constant(fx.l2);
        auto guided = channel_attention(constant(fx.x), fx.params(), &zv, &l1, &l2);
        Tensor<double> attn;
        REQUIRE(max_abs_diff(guided->value, dense_channel_oracle(fx, true, &attn)) < 1e-11);

        // row-stochasticity of the attention matrix
        for (int64_t a = 0; a < d; ++a) {
            double row = 0;
            for (int64_t b = 0; b < d; ++b) {
                REQUIRE(attn[a * d + b] >= 0.0);
                row += attn[a * d + b];
            }
            REQUIRE(row == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("channel attention is permutation equivariant over tokens", "[channel][property]") {
    Fixture fx(14, 5, 51);
    auto out = channel_attention(constant(fx.x), fx.params());

    RngStream rng(52);
    std::vector<int64_t> perm(static_cast<size_t>(fx.n));
    for (int64_t i = 0; i < fx.n; ++i) perm[static_cast<size_t>(i)] = i;
    for (int64_t i = fx.n - 1; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)],
                  perm[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(i + 1)))]);

    Tensor<double> xp({fx.n, fx.d});
    for (int64_t i = 0; i < fx.n; ++i)
        for (int64_t c = 0; c < fx.d; ++c)
            xp[i * fx.d + c] = fx.x[perm[static_cast<size_t>(i)] * fx.d + c];
    Fixture fxp = fx;
    fxp.x = xp;
    auto out_p = channel_attention(constant(fxp.x), fxp.params());
    for (int64_t i = 0; i < fx.n; ++i)
        for (int64_t c = 0; c < fx.d; ++c)
            REQUIRE(out_p->value[i * fx.d + c] ==
                    Catch::Approx(out->value[perm[static_cast<size_t>(i)] * fx.d + c])
                        .margin(1e-11));
}

TEST_CASE("zero input exercises the norm floor without NaNs", "[channel][stability]") {
    Fixture fx(8, 4, 61);
    fx.x.fill(0.0);
    auto zv = constant(fx.z);
    auto l1 = constant(fx.l1), l2 = constant(fx.l2);
    auto out = channel_attention(constant(fx.x), fx.params(), &zv, &l1, &l2);
    REQUIRE(out->value.all_finite());
    REQUIRE(max_abs_diff(out->value, dense_channel_oracle(fx, true, nullptr)) < 1e-11);
}

TEST_CASE("empty token sets are unrepresentable", "[channel]") {
    REQUIRE_THROWS_AS(Tensor<double>({0, 4}), ShapeError);
}

TEST_CASE("channel attention gradients", "[channel][gradcheck]") {
    Fixture fx(9, 4, 71);
    RngStream rng(72);
    Tensor<double> weights({fx.n, fx.d});
    rng.fill_gaussian(weights);

    auto run = [&](const Var<double>& xin, ChannelAttnParams<double> p, const Var<double>& zin,
                   const Var<double>& l1in, const Var<double>& l2in) {
        return sum(mul(channel_attention(xin, p, &zin, &l1in, &l2in), constant(weights)));
    };

    auto f_x = [&](const Var<double>& v) {
        return run(v, fx.params(), constant(fx.z), constant(fx.l1), constant(fx.l2));
    };
    REQUIRE(grad_check(f_x, fx.x, 1e-5).max_rel_err < 1e-6);

    auto f_wq = [&](const Var<double>& v) {
        auto p = fx.params();
        p.w_q = v;
        return run(constant(fx.x), p, constant(fx.z), constant(fx.l1), constant(fx.l2));
    };
    REQUIRE(grad_check(f_wq, fx.wq, 1e-5).max_rel_err < 1e-6);

    auto f_tau = [&](const Var<double>& v) {
        auto p = fx.params();
        p.temperature = v;
        return run(constant(fx.x), p, constant(fx.z), constant(fx.l1), constant(fx.l2));
    };
    REQUIRE(grad_check(f_tau, fx.tau, 1e-5).max_rel_err < 1e-6);

    auto f_l1 = [&](const Var<double>& v) {
        return run(constant(fx.x), fx.params(), constant(fx.z), v, constant(fx.l2));
    };
    REQUIRE(grad_check(f_l1, fx.l1, 1e-5).max_rel_err < 1e-6);
}
