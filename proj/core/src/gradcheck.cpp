#include "resadapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "resadapt/errors.hpp"

namespace resadapt {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(std::string name, std::span<double> param, std::span<const double> analytic,
                                  const std::function<double()>& loss, const GradCheckOptions& options) {
    if (param.size() != analytic.size()) {
        throw ConfigError("finite_diff_check(" + name + "): parameter and gradient sizes differ");
    }
    GradCheckReport report;
    report.name = std::move(name);
    for (std::size_t i = 0; i < param.size(); ++i) {
        if (options.skip && options.skip(i)) {
            ++report.skipped;
            continue;
        }
        const double saved = param[i];
        param[i] = saved + options.step;
        const double up = loss();
        param[i] = saved - options.step;
        const double down = loss();
        param[i] = saved;
        const double numeric = (up - down) / (2.0 * options.step);
        const double err = relative_error(analytic[i], numeric, options.floor);
        if (!std::isfinite(err)) {
            throw NumericError("finite_diff_check(" + report.name + "): non-finite comparison at " +
                               std::to_string(i));
        }
        if (err > report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_index = i;
        }
        ++report.checked;
    }
    return report;
}

}  // namespace resadapt
