#pragma once

// Central finite-difference gradient checking used across the test suites.
// Intentionally independent of the tape's backward pass: it only calls the
// forward builder.

#include <cmath>
#include <functional>
#include <vector>

#include "mood/tensor.hpp"

namespace gradcheck {

// f maps a set of input tensors to a scalar loss.
using ScalarFn = std::function<double(const std::vector<mood::Tensor>&)>;

inline double numeric_partial(const ScalarFn& f, std::vector<mood::Tensor> inputs, int which,
                              int64_t flat_index, double eps) {
    inputs[size_t(which)][flat_index] += eps;
    const double hi = f(inputs);
    inputs[size_t(which)][flat_index] -= 2.0 * eps;
    const double lo = f(inputs);
    return (hi - lo) / (2.0 * eps);
}

// Relative error with an absolute floor so near-zero gradients do not blow
// up the ratio.
inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace gradcheck
