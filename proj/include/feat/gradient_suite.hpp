#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "feat/backbone.hpp"
#include "feat/channel_attention.hpp"
#include "feat/grad_check.hpp"
#include "feat/rng.hpp"
#include "feat/wkv.hpp"

namespace feat {

// Finite-difference verification of every learnable operation at 64-bit:
// shifts, the WKV scan, channel attention, adaLN, FFN, embedding/head and
// the residual-guidance path, on randomized small shapes.
struct GradSuiteEntry {
    std::string op;
    uint64_t seed;
    double max_rel_err;
};

namespace detail {

inline void check(std::vector<GradSuiteEntry>& out, const std::string& op, uint64_t seed,
                  const std::function<Var<double>(const Var<double>&)>& f,
                  const Tensor<double>& x, double eps = 1e-5) {
    out.push_back({op, seed, grad_check(f, x, eps).max_rel_err});
}

}  // namespace detail

inline std::vector<GradSuiteEntry> run_gradient_suite(int64_t n_seeds = 20) {
    std::vector<GradSuiteEntry> results;
    for (int64_t s = 0; s < n_seeds; ++s) {
        uint64_t seed = 1000 + static_cast<uint64_t>(s);
        RngStream rng(seed);

        // ---- standalone ops on randomized small shapes ----
        int64_t frames = 1 + static_cast<int64_t>(rng.next_below(3));
        int64_t hp = 2 + static_cast<int64_t>(rng.next_below(3));
        int64_t wp = 2 + static_cast<int64_t>(rng.next_below(3));
        int64_t d = 2 + static_cast<int64_t>(rng.next_below(5));
        int64_t n = frames * hp * wp;

        Tensor<double> x({n, d}), weights({n, d});
        rng.fill_gaussian(x);
        rng.fill_gaussian(weights);

        {
            Tensor<double> ker({d, 9});
            rng.fill_gaussian(ker);
            detail::check(results, "token_shift_spatial/x", seed,
                          [&](const Var<double>& v) {
                              return sum(mul(token_shift_spatial(v, constant(ker), frames, hp, wp),
                                             constant(weights)));
                          },
                          x);
            detail::check(results, "token_shift_spatial/kernel", seed,
                          [&](const Var<double>& v) {
                              return sum(mul(token_shift_spatial(constant(x), v, frames, hp, wp),
                                             constant(weights)));
                          },
                          ker);
        }
        {
            Tensor<double> ker({d, 3});
            rng.fill_gaussian(ker);
            detail::check(results, "token_shift_temporal/x", seed,
                          [&](const Var<double>& v) {
                              return sum(mul(token_shift_temporal(v, constant(ker), hp * wp, frames),
                                             constant(weights)));
                          },
                          x);
            detail::check(results, "token_shift_temporal/kernel", seed,
                          [&](const Var<double>& v) {
                              return sum(mul(token_shift_temporal(constant(x), v, hp * wp, frames),
                                             constant(weights)));
                          },
                          ker);
        }
        {
            int64_t t = 2 + static_cast<int64_t>(rng.next_below(7));
            Tensor<double> k({t, d}), v({t, d}), w({d}), u({d}), wt({t, d});
            rng.fill_gaussian(k);
            rng.fill_gaussian(v);
            rng.fill_gaussian(w);
            rng.fill_gaussian(u, 0.5);
            rng.fill_gaussian(wt);
            auto with = [&](const char* name, auto slot) {
                detail::check(results, std::string("wkv_scan/") + name, seed,
                              [&](const Var<double>& probe) {
                                  auto [kk, vv, ww, uu] = slot(probe);
                                  return sum(mul(wkv(kk, vv, ww, uu, t), constant(wt)));
                              },
                              [&]() -> const Tensor<double>& {
                                  switch (name[0]) {
                                      case 'k': return k;
                                      case 'v': return v;
                                      case 'w': return w;
                                      default: return u;
                                  }
                              }());
            };
            with("k", [&](const Var<double>& p) {
                return std::tuple{p, constant(v), constant(w), constant(u)};
            });
            with("v", [&](const Var<double>& p) {
                return std::tuple{constant(k), p, constant(w), constant(u)};
            });
            with("w", [&](const Var<double>& p) {
                return std::tuple{constant(k), constant(v), p, constant(u)};
            });
            with("u", [&](const Var<double>& p) {
                return std::tuple{constant(k), constant(v), constant(w), p};
            });
        }
        {
            Tensor<double> wq({d, d}), wk({d, d}), wv({d, d}), wo({d, d}), tau({1});
            rng.fill_gaussian(wq, 0.5);
            rng.fill_gaussian(wk, 0.5);
            rng.fill_gaussian(wv, 0.5);
            rng.fill_gaussian(wo, 0.5);
            tau[0] = 0.2 * rng.next_gaussian();
            Tensor<double> z({n, d}), l1({d}), l2({d});
            rng.fill_gaussian(z);
            rng.fill_gaussian(l1, 0.5);
            rng.fill_gaussian(l2, 0.5);
            auto run = [&](ChannelAttnParams<double> p, const Var<double>& zin,
                           const Var<double>& l1in, const Var<double>& l2in,
                           const Var<double>& xin) {
                return sum(mul(channel_attention(xin, p, &zin, &l1in, &l2in), constant(weights)));
            };
            auto base = [&] {
                return ChannelAttnParams<double>{constant(wq), constant(wk), constant(wv),
                                                 constant(wo), constant(tau)};
            };
            detail::check(results, "channel_attention/x", seed,
                          [&](const Var<double>& p) {
                              return run(base(), constant(z), constant(l1), constant(l2), p);
                          },
                          x);
            detail::check(results, "channel_attention/w_q", seed,
                          [&](const Var<double>& p) {
                              auto b = base();
                              b.w_q = p;
                              return run(b, constant(z), constant(l1), constant(l2), constant(x));
                          },
                          wq);
            detail::check(results, "channel_attention/temperature", seed,
                          [&](const Var<double>& p) {
                              auto b = base();
                              b.temperature = p;
                              return run(b, constant(z), constant(l1), constant(l2), constant(x));
                          },
                          tau);
            detail::check(results, "resvgm/lambda1", seed,
                          [&](const Var<double>& p) {
                              return run(base(), constant(z), p, constant(l2), constant(x));
                          },
                          l1);
            detail::check(results, "resvgm/lambda2", seed,
                          [&](const Var<double>& p) {
                              return run(base(), constant(z), constant(l1), p, constant(x));
                          },
                          l2);
        }

        // ---- model-level paths on a minimal network ----
        ModelConfig cfg;
        cfg.d = 8;
        cfg.n_triplets = 1;
        cfg.patch = 2;
        cfg.frames = 2;
        cfg.channels = 1;
        cfg.height = 4;
        cfg.width = 4;
        cfg.t_max = 8;
        auto model = Model<double>::init(cfg, RngStream(seed * 13 + 1));
        RngStream jitter(seed * 17 + 3);
        for (auto& p : model.params)
            for (int64_t i = 0; i < p->value.numel(); ++i)
                p->value[i] += 0.25 * jitter.next_gaussian();

        Tensor<double> input({cfg.frames, cfg.channels, cfg.height, cfg.width});
        Tensor<double> out_weights(input.shape());
        rng.fill_gaussian(input);
        // small functional scale keeps central-difference noise below the
        // 1e-8 relative-error floor on near-zero gradient coordinates
        rng.fill_gaussian(out_weights, 0.005);
        int64_t t_step = 1 + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(cfg.t_max)));

        // temporarily swap the probe node into the named parameter slot
        auto model_param_check = [&](const std::string& op, const std::string& pname) {
            size_t slot = 0;
            while (model.layout[slot].name != pname) ++slot;
            Var<double> saved = model.params[slot];
            auto f = [&, slot](const Var<double>& probe) {
                model.set_requires_grad(false);  // gradient flows to the probe only
                model.params[slot] = probe;
                model.bind();
                auto loss = sum(mul(model.forward(input, t_step), constant(out_weights)));
                model.params[slot] = saved;
                model.bind();
                model.set_requires_grad(true);
                return loss;
            };
            detail::check(results, op, seed, f, saved->value, 5e-5);
        };

        model_param_check("adaln/weight", "blocks.0.adaln.weight");
        model_param_check("adaln/bias", "blocks.1.adaln.bias");
        model_param_check("ffn/fc1.weight", "blocks.2.ffn.fc1.weight");
        model_param_check("ffn/fc2.bias", "blocks.0.ffn.fc2.bias");
        model_param_check("embed/patch.weight", "patch_embed.weight");
        model_param_check("embed/pos.spatial", "pos.spatial");
        model_param_check("embed/time.fc1.weight", "time_embed.fc1.weight");
        model_param_check("head/weight", "head.weight");
        model_param_check("resvgm/model.lambda1", "blocks.0.resvgm.lambda1");
        model_param_check("resvgm/model.lambda2", "blocks.2.resvgm.lambda2");
        model_param_check("norm/ln1.gamma", "blocks.1.ln1.gamma");

        detail::check(results, "model/input", seed,
                      [&](const Var<double>& probe) {
                          if (!probe->requires_grad) model.set_requires_grad(false);
                          auto loss = sum(mul(model.forward(probe, t_step), constant(out_weights)));
                          model.set_requires_grad(true);
                          return loss;
                      },
                      input, 5e-5);
    }
    return results;
}

}  // namespace feat
