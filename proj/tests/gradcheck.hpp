#pragma once

// Central finite-difference gradient checking, test-side oracle.

#include <cmath>
#include <functional>
#include <vector>

#include "impure/tensor.hpp"

namespace impure::testing {

// Evaluates fn at perturbed copies of x and compares the analytic gradient
// against (f(x+h) - f(x-h)) / 2h per coordinate.
template <typename VecX, typename VecG>
double max_rel_error(const std::function<double(const std::vector<double>&)>& fn, const VecX& x,
                     const VecG& analytic, const std::vector<size_t>& coords, double h = 1e-5) {
    double worst = 0.0;
    std::vector<double> probe(x.begin(), x.end());
    for (size_t i : coords) {
        probe[i] = x[i] + h;
        double fp = fn(probe);
        probe[i] = x[i] - h;
        double fm = fn(probe);
        probe[i] = x[i];
        double fd = (fp - fm) / (2.0 * h);
        double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace impure::testing
