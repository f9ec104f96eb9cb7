#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "feat/backbone.hpp"
#include "feat/tensor.hpp"

namespace feat {

// AdamW with decoupled weight decay. Decay is applied to matrix parameters
// only (biases, norms, lambdas, decays and embeddings are exempt).
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    int64_t step_count = 0;
    std::vector<Tensor<float>> m, v;

    static AdamW init(const Model<float>& model, double lr, double weight_decay = 0.0) {
        if (lr <= 0) throw ConfigError("adamw: lr must be > 0");
        AdamW opt;
        opt.lr = lr;
        opt.weight_decay = weight_decay;
        opt.m.reserve(model.params.size());
        opt.v.reserve(model.params.size());
        for (const auto& p : model.params) {
            opt.m.emplace_back(p->value.shape());
            opt.v.emplace_back(p->value.shape());
        }
        return opt;
    }

    // Applies one update from the accumulated gradients, then clears them.
    void step(Model<float>& model) {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < model.params.size(); ++i) {
            auto& p = model.params[i]->value;
            auto& g = model.params[i]->ensure_grad();
            bool decay_this = model.layout[i].is_matrix && weight_decay > 0.0;
            for (int64_t j = 0; j < p.numel(); ++j) {
                double grad = g[j];
                double mj = beta1 * m[i][j] + (1.0 - beta1) * grad;
                double vj = beta2 * v[i][j] + (1.0 - beta2) * grad * grad;
                m[i][j] = static_cast<float>(mj);
                v[i][j] = static_cast<float>(vj);
                double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps);
                double value = p[j] - lr * update;
                if (decay_this) value -= lr * weight_decay * p[j];
                p[j] = static_cast<float>(value);
            }
            g.fill(0.0f);
        }
    }
};

}  // namespace feat
