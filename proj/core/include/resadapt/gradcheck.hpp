#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

namespace resadapt {

struct GradCheckOptions {
    double step = 1e-5;
    /// Denominator floor of the relative error, so entries whose true gradient
    /// is ~0 are judged on absolute error instead of noise-over-noise.
    double floor = 1e-3;
    /// Entries for which this returns true are not perturbed (e.g. ReLU kinks).
    std::function<bool(std::size_t)> skip;
};

struct GradCheckReport {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;

    bool within(double tolerance) const { return max_relative_error <= tolerance; }
};

/// Compares `analytic` (dloss/dparam) against central differences obtained by
/// perturbing `param` in place and re-evaluating `loss`. Double precision only.
/// `param` is restored bitwise before returning.
GradCheckReport finite_diff_check(std::string name, std::span<double> param, std::span<const double> analytic,
                                  const std::function<double()>& loss, const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace resadapt
