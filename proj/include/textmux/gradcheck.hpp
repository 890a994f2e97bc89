#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "textmux/parameters.hpp"
#include "textmux/tensor.hpp"

namespace textmux {

struct GradReport {
    struct Entry {
        std::string name;
        double max_rel_error = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|, 1)
    };
    std::vector<Entry> per_parameter;
    double max_rel_error = 0.0;
    std::string worst_parameter;
};

// Central finite differences against the analytic gradient of a scalar loss.
// The loss builder must be deterministic given the current parameter values.
template <class Real>
GradReport grad_check(const std::function<Tensor<Real>()>& loss_builder,
                      ParameterSet<Real>& params, Real step) {
    if (!(step > Real(0))) throw std::invalid_argument("grad_check: step must be positive");
    params.zero_grad();
    Tensor<Real> loss = loss_builder();
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw NumericError("grad_check: non-finite loss");
    forward_backward(loss);

    GradReport report;
    for (auto& p : params.items()) {
        if (!p.trainable) continue;  // frozen: analytic grad is zero by contract
        GradReport::Entry entry{p.name, 0.0};
        std::vector<Real> analytic = p.tensor.grad();
        if (analytic.empty()) analytic.assign(p.tensor.size(), Real(0));
        auto& values = p.tensor.values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            Real saved = values[i];
            values[i] = saved + step;
            Real up = loss_builder().item();
            values[i] = saved - step;
            Real down = loss_builder().item();
            values[i] = saved;
            if (!std::isfinite(static_cast<double>(up)) || !std::isfinite(static_cast<double>(down)))
                throw NumericError("grad_check: non-finite loss during perturbation of " + p.name);
            double numeric = static_cast<double>(up - down) / (2.0 * static_cast<double>(step));
            double a = static_cast<double>(analytic[i]);
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
            double rel = std::fabs(a - numeric) / denom;
            if (rel > entry.max_rel_error) entry.max_rel_error = rel;
        }
        if (entry.max_rel_error > report.max_rel_error) {
            report.max_rel_error = entry.max_rel_error;
            report.worst_parameter = p.name;
        }
        report.per_parameter.push_back(std::move(entry));
    }
    return report;
}

}  // namespace textmux
