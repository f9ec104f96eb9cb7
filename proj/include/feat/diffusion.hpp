#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "feat/autograd.hpp"
#include "feat/rng.hpp"
#include "feat/tensor.hpp"

namespace feat {

// Forward-process coefficients, 1-indexed by timestep t in [1, T]:
//   beta linearly interpolated, alpha_bar_t = prod(1 - beta_i),
//   alpha_t = sqrt(alpha_bar_t), sigma_t = sqrt(1 - alpha_bar_t),
// so the marginal is q(x_t | x_0) = N(alpha_t x_0, sigma_t^2 I) and
// alpha_t^2 + sigma_t^2 = 1 by construction.
struct DiffusionSchedule {
    int64_t steps = 0;
    std::vector<double> beta;       // [T]
    std::vector<double> alpha_bar;  // [T]
    std::vector<double> alpha;      // [T], sqrt(alpha_bar)
    std::vector<double> sigma;      // [T], sqrt(1 - alpha_bar)

    double beta_at(int64_t t) const { return beta.at(static_cast<size_t>(t - 1)); }
    double alpha_bar_at(int64_t t) const { return alpha_bar.at(static_cast<size_t>(t - 1)); }
    double alpha_at(int64_t t) const { return alpha.at(static_cast<size_t>(t - 1)); }
    double sigma_at(int64_t t) const { return sigma.at(static_cast<size_t>(t - 1)); }
};

inline DiffusionSchedule make_schedule(int64_t steps, double beta_start = 1e-4,
                                       double beta_end = 2e-2) {
    if (steps < 1) throw ConfigError("make_schedule: steps must be >= 1");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw ConfigError("make_schedule: need 0 < beta_start < beta_end < 1");
    DiffusionSchedule s;
    s.steps = steps;
    s.beta.resize(steps);
    s.alpha_bar.resize(steps);
    s.alpha.resize(steps);
    s.sigma.resize(steps);
    double cum = 1.0;
    for (int64_t t = 0; t < steps; ++t) {
        double frac = steps > 1 ? static_cast<double>(t) / static_cast<double>(steps - 1) : 0.0;
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        cum *= 1.0 - s.beta[t];
        s.alpha_bar[t] = cum;
        s.alpha[t] = std::sqrt(cum);
        s.sigma[t] = std::sqrt(1.0 - cum);
    }
    return s;
}

template <class T>
void check_timestep(const DiffusionSchedule& s, int64_t t) {
    if (t < 1 || t > s.steps)
        throw ConfigError("timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(s.steps) + "]");
}

// x_t = alpha_t x_0 + sigma_t eps
template <class T>
Tensor<T> q_sample(const Tensor<T>& x0, int64_t t, const Tensor<T>& eps,
                   const DiffusionSchedule& s) {
    check_timestep<T>(s, t);
    require_same_shape(x0, eps, "q_sample");
    T a = static_cast<T>(s.alpha_at(t));
    T sg = static_cast<T>(s.sigma_at(t));
    Tensor<T> out(x0.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + sg * eps[i];
    return out;
}

// Noise-prediction squared error at one explicit (t, eps) draw. The denoiser
// is any callable returning a tape node; gradients flow to whatever it
// closes over.
template <class T, class Denoiser>
Var<T> elbo_loss_at(Denoiser&& denoiser, const Tensor<T>& x0, int64_t t, const Tensor<T>& eps,
                    const DiffusionSchedule& s) {
    Tensor<T> xt = q_sample(x0, t, eps, s);
    Var<T> pred = denoiser(xt, t);
    Var<T> loss = mse(pred, constant(eps));
    if (!std::isfinite(static_cast<double>(loss->value[0])))
        throw NumericError("elbo_loss: non-finite loss");
    return loss;
}

// Per-element mean squared error between predicted and true noise at a
// uniformly drawn timestep.
template <class T, class Denoiser>
Var<T> elbo_loss(Denoiser&& denoiser, const Tensor<T>& x0, const DiffusionSchedule& s,
                 RngStream& rng) {
    int64_t t = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(s.steps))) + 1;
    Tensor<T> eps(x0.shape());
    rng.fill_gaussian(eps);
    return elbo_loss_at(denoiser, x0, t, eps, s);
}

// One ancestral step: mu = (x_t - beta_t/sigma_t * eps_hat) / sqrt(1-beta_t),
// then x_{t-1} = mu + sqrt(beta_tilde_t) z with z = 0 at t = 1 and
// beta_tilde_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
template <class T>
Tensor<T> ddpm_step(const Tensor<T>& xt, const Tensor<T>& eps_hat, int64_t t,
                    const DiffusionSchedule& s, RngStream& rng) {
    check_timestep<T>(s, t);
    require_same_shape(xt, eps_hat, "ddpm_step");
    double beta = s.beta_at(t);
    double sigma = s.sigma_at(t);
    double inv_sqrt = 1.0 / std::sqrt(1.0 - beta);
    double coef = beta / sigma;
    Tensor<T> out(xt.shape());
    if (t > 1) {
        double beta_tilde = beta * (1.0 - s.alpha_bar_at(t - 1)) / (1.0 - s.alpha_bar_at(t));
        double noise_scale = std::sqrt(beta_tilde);
        for (int64_t i = 0; i < out.numel(); ++i) {
            double mu = (static_cast<double>(xt[i]) - coef * static_cast<double>(eps_hat[i])) *
                        inv_sqrt;
            out[i] = static_cast<T>(mu + noise_scale * rng.next_gaussian());
        }
    } else {
        for (int64_t i = 0; i < out.numel(); ++i)
            out[i] = static_cast<T>(
                (static_cast<double>(xt[i]) - coef * static_cast<double>(eps_hat[i])) * inv_sqrt);
    }
    return out;
}

// Full chain from x_T ~ N(0, I) down to x_0. The denoiser is a plain
// callable (x_t, t) -> eps_hat; callers decide which parameters (e.g. the
// EMA set) it closes over.
template <class T>
Tensor<T> sample(const std::function<Tensor<T>(const Tensor<T>&, int64_t)>& denoiser, Shape shape,
                 const DiffusionSchedule& s, RngStream& rng) {
    Tensor<T> x(shape);
    rng.fill_gaussian(x);
    for (int64_t t = s.steps; t >= 1; --t) {
        Tensor<T> eps_hat = denoiser(x, t);
        x = ddpm_step(x, eps_hat, t, s, rng);
    }
    return x;
}

// Exponential moving average of a flat parameter vector.
struct EmaState {
    double decay = 0.9999;
    std::vector<float> shadow;

    static EmaState init(double decay, const std::vector<float>& params) {
        if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema: decay must be in [0, 1)");
        EmaState e;
        e.decay = decay;
        e.shadow = params;
        return e;
    }

    void update(const std::vector<float>& params) {
        if (params.size() != shadow.size()) throw ShapeError("ema: parameter count changed");
        float d = static_cast<float>(decay);
        float one_minus = static_cast<float>(1.0 - decay);
        for (size_t i = 0; i < shadow.size(); ++i)
            shadow[i] = d * shadow[i] + one_minus * params[i];
    }
};

}  // namespace feat
