#pragma once

#include <cstdint>
#include <vector>

#include "impure/common.hpp"

namespace impure::theory {

// f(x) = omega . x
struct LinearModel {
    std::vector<double> omega;
    int64_t dim() const { return static_cast<int64_t>(omega.size()); }
};

enum class ReduceMode { Global, Local };

struct ReductionResult {
    ReduceMode mode = ReduceMode::Global;
    double s = 0;
    std::vector<double> reduced;
    std::vector<uint8_t> mask;  // local mode only, exactly round(s*n) ones
};

struct MonteCarloReport {
    int64_t n = 0;
    double epsilon = 0;
    double s = 0;
    int64_t trials = 0;
    uint64_t seed = 0;
    double mean_global = 0, mean_local = 0;
    double std_global = 0, std_local = 0;
    double stderr_global = 0, stderr_local = 0;
    double analytic = 0;  // s * eps * n * sqrt(2/pi)
    std::vector<double> per_trial_global, per_trial_local;
};

// eta = eps * sign(omega); also returns the induced output difference
// omega . eta = eps * ||omega||_1. sign(0) = 0.
std::pair<std::vector<double>, double> optimal_perturbation(const LinearModel& model,
                                                            double epsilon);

double model_diff(const LinearModel& model, const std::vector<double>& eta);

ReductionResult reduce_global(const std::vector<double>& eta, double s);
// Keeps a uniformly random subset of round(s*n) coordinates, zeroes the rest.
ReductionResult reduce_local(const std::vector<double>& eta, double s, uint64_t seed);

// E(max diff) = s * eps * m * n for mean absolute weight m; s = 1 gives the
// unreduced expectation.
double expected_max_diff(int64_t n, double m, double epsilon, double s);

// Per trial: omega ~ N(0,1)^n, eta = eps*sign(omega), both reductions applied
// through the ops above, recording omega . reduced.
MonteCarloReport monte_carlo_diff(int64_t n, double epsilon, double s, int64_t trials,
                                  uint64_t seed, int threads = 1);

std::string report_to_text(const MonteCarloReport& r);
std::string report_to_json(const MonteCarloReport& r);
std::string report_to_csv(const MonteCarloReport& r);  // per-trial values

}  // namespace impure::theory
