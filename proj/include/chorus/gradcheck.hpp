#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "chorus/autodiff.hpp"
#include "chorus/errors.hpp"
#include "chorus/optim.hpp"

namespace chorus {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
};

// Builds a scalar loss over double-bound parameters.
using LossBuilder = std::function<ag::VarT<double>(ag::TapeT<double>&, BoundParams<double>&)>;

// Central-difference check of reverse-mode gradients, run in double so the
// comparison isolates the gradient formulas from f32 storage noise. Relative
// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckReport grad_check(const ParamStore& params, const LossBuilder& build, double h = 1e-3) {
    if (!(h > 0.0 && h <= 1e-1)) throw ContractViolation("grad_check: h must be in (0, 1e-1]");

    std::map<std::string, TensorT<double>> work;
    for (const auto& [name, p] : params) work.emplace(name, p.value.cast<double>());

    const auto eval = [&build](const std::map<std::string, TensorT<double>>& vals) {
        ag::TapeT<double> tape;
        BoundParams<double> bound = bind_raw(tape, vals, false);
        ag::VarT<double> loss = build(tape, bound);
        if (loss.size() != 1) throw ContractViolation("grad_check: loss must be scalar");
        return static_cast<double>(loss.value()[0]);
    };

    // Analytic pass.
    std::map<std::string, TensorT<double>> analytic;
    {
        ag::TapeT<double> tape;
        BoundParams<double> bound = bind_raw(tape, work, true);
        ag::VarT<double> loss = build(tape, bound);
        tape.backward(loss);
        for (const auto& [name, var] : bound.vars) analytic.emplace(name, var.grad());
    }

    GradCheckReport report;
    for (auto& [name, vals] : work) {
        const TensorT<double>& ga = analytic.at(name);
        for (int64_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double up = eval(work);
            vals[i] = orig - h;
            const double down = eval(work);
            vals[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = ga[i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace chorus
