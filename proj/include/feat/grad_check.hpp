#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

#include "feat/autograd.hpp"
#include "feat/tensor.hpp"

namespace feat {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// Compares the reverse-mode gradient of a scalar-valued function against
// central differences, coordinate by coordinate. Relative error uses
// max(|analytic|, |numeric|, 1e-8) as denominator. Runs at 64-bit.
inline GradCheckReport grad_check(const std::function<Var<double>(const Var<double>&)>& f,
                                  const Tensor<double>& x, double eps = 1e-5) {
    if (eps < 1e-6 || eps > 1e-4) throw ConfigError("grad_check: eps must be in [1e-6, 1e-4]");

    auto probe = leaf(x, true);
    Var<double> y = f(probe);
    if (y->numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
    if (!std::isfinite(y->value[0]))
        throw NumericError("grad_check: non-finite f at base point");
    backward(y);
    Tensor<double> analytic =
        probe->grad.empty() ? Tensor<double>(x.shape()) : probe->grad;

    auto eval = [&](const Tensor<double>& point, int64_t coord) {
        Var<double> v = f(leaf(point, false));
        double val = v->value[0];
        if (!std::isfinite(val))
            throw NumericError("grad_check: non-finite f at perturbed coordinate " +
                               std::to_string(coord));
        return val;
    };

    GradCheckReport report;
    Tensor<double> point = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double orig = point[i];
        point[i] = orig + eps;
        double fp = eval(point, i);
        point[i] = orig - eps;
        double fm = eval(point, i);
        point[i] = orig;
        double numeric = (fp - fm) / (2.0 * eps);
        double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        double rel = std::fabs(analytic[i] - numeric) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    return report;
}

}  // namespace feat
