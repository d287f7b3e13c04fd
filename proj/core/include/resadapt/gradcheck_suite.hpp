#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "resadapt/gradcheck.hpp"

namespace resadapt {

struct GradSuiteReport {
    std::vector<GradCheckReport> reports;  // one per (trial, differentiated input)
    std::size_t trials = 0;

    double max_error() const;
    const GradCheckReport* worst() const;
    bool passed(double tolerance) const { return max_error() <= tolerance; }
};

/// Randomized finite-difference checks of every differentiable op, cycling
/// through conv2d, conv1x1, batch norm, pooling, ReLU, dropout, the classifier
/// head, both adapter topologies and a small end-to-end network.
GradSuiteReport run_gradcheck_suite(std::uint64_t seed, std::size_t trials, const GradCheckOptions& options = {});

}  // namespace resadapt
