#include "impure/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "impure/rng.hpp"

namespace impure::theory {

namespace {
constexpr double kSqrt2OverPi = 0.79788456080286535588;  // E|N(0,1)|

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / double(xs.size() - 1))};
}
}  // namespace

std::pair<std::vector<double>, double> optimal_perturbation(const LinearModel& model,
                                                            double epsilon) {
    IMPURE_CHECK(epsilon >= 0, "optimal_perturbation: epsilon must be non-negative");
    IMPURE_CHECK(model.dim() >= 1, "optimal_perturbation: empty model");
    std::vector<double> eta(model.omega.size());
    double l1 = 0;
    for (size_t i = 0; i < eta.size(); ++i) {
        eta[i] = epsilon * sign(model.omega[i]);
        l1 += std::abs(model.omega[i]);
    }
    return {std::move(eta), epsilon * l1};
}

double model_diff(const LinearModel& model, const std::vector<double>& eta) {
    IMPURE_CHECK(model.omega.size() == eta.size(), "model_diff: dimension mismatch");
    double acc = 0;
    for (size_t i = 0; i < eta.size(); ++i) acc += model.omega[i] * eta[i];
    return acc;
}

ReductionResult reduce_global(const std::vector<double>& eta, double s) {
    IMPURE_CHECK(s > 0 && s < 1, "reduce_global: s must lie in (0,1)");
    ReductionResult out;
    out.mode = ReduceMode::Global;
    out.s = s;
    out.reduced.resize(eta.size());
    for (size_t i = 0; i < eta.size(); ++i) out.reduced[i] = s * eta[i];
    return out;
}

ReductionResult reduce_local(const std::vector<double>& eta, double s, uint64_t seed) {
    IMPURE_CHECK(s > 0 && s < 1, "reduce_local: s must lie in (0,1)");
    const int64_t n = static_cast<int64_t>(eta.size());
    const int64_t keep = static_cast<int64_t>(std::llround(s * double(n)));
    IMPURE_CHECK(keep >= 1, "reduce_local: round(s*n) must be at least 1");

    ReductionResult out;
    out.mode = ReduceMode::Local;
    out.s = s;
    out.mask.assign(eta.size(), 0);
    out.reduced.assign(eta.size(), 0.0);

    // partial Fisher-Yates draw of `keep` distinct indices
    std::vector<int64_t> idx(eta.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed, 0x6c6f63616cull);
    for (int64_t i = 0; i < keep; ++i) {
        int64_t j = i + static_cast<int64_t>(rng.index(static_cast<uint64_t>(n - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        out.mask[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
    }
    for (size_t i = 0; i < eta.size(); ++i)
        if (out.mask[i]) out.reduced[i] = eta[i];
    return out;
}

double expected_max_diff(int64_t n, double m, double epsilon, double s) {
    IMPURE_CHECK(n >= 1, "expected_max_diff: n must be >= 1");
    IMPURE_CHECK(m > 0, "expected_max_diff: m must be positive");
    IMPURE_CHECK(epsilon > 0, "expected_max_diff: epsilon must be positive");
    IMPURE_CHECK(s > 0 && s <= 1, "expected_max_diff: s must lie in (0,1]");
    return s * epsilon * m * double(n);
}

MonteCarloReport monte_carlo_diff(int64_t n, double epsilon, double s, int64_t trials,
                                  uint64_t seed, int threads) {
    IMPURE_CHECK(trials >= 1, "monte_carlo_diff: trials must be >= 1");
    MonteCarloReport r;
    r.n = n;
    r.epsilon = epsilon;
    r.s = s;
    r.trials = trials;
    r.seed = seed;
    r.analytic = s * epsilon * double(n) * kSqrt2OverPi;
    r.per_trial_global.assign(static_cast<size_t>(trials), 0.0);
    r.per_trial_local.assign(static_cast<size_t>(trials), 0.0);

    auto run_range = [&](int64_t t0, int64_t t1) {
        LinearModel model;
        model.omega.resize(static_cast<size_t>(n));
        for (int64_t t = t0; t < t1; ++t) {
            Rng rng(seed, 0x7472ull, static_cast<uint64_t>(t));
            for (auto& w : model.omega) w = rng.normal();
            auto [eta, df] = optimal_perturbation(model, epsilon);
            (void)df;
            auto g = reduce_global(eta, s);
            auto l = reduce_local(eta, s, mix_seed(seed, 0x6d61736bull, static_cast<uint64_t>(t)));
            r.per_trial_global[static_cast<size_t>(t)] = model_diff(model, g.reduced);
            r.per_trial_local[static_cast<size_t>(t)] = model_diff(model, l.reduced);
        }
    };

    threads = std::max(1, std::min<int>(threads, static_cast<int>(trials)));
    if (threads == 1) {
        run_range(0, trials);
    } else {
        // per-trial streams make the result independent of the thread split
        std::vector<std::thread> pool;
        int64_t chunk = (trials + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            int64_t t0 = t * chunk, t1 = std::min<int64_t>(trials, t0 + chunk);
            if (t0 < t1) pool.emplace_back(run_range, t0, t1);
        }
        for (auto& th : pool) th.join();
    }

    auto [mg, sg] = mean_std(r.per_trial_global);
    auto [ml, sl] = mean_std(r.per_trial_local);
    r.mean_global = mg;
    r.std_global = sg;
    r.mean_local = ml;
    r.std_local = sl;
    r.stderr_global = sg / std::sqrt(double(trials));
    r.stderr_local = sl / std::sqrt(double(trials));
    return r;
}

std::string report_to_text(const MonteCarloReport& r) {
    std::ostringstream oss;
    char line[256];
    std::snprintf(line, sizeof(line), "n=%lld epsilon=%.10g s=%.10g trials=%lld seed=%llu\n",
                  static_cast<long long>(r.n), r.epsilon, r.s, static_cast<long long>(r.trials),
                  static_cast<unsigned long long>(r.seed));
    oss << line;
    std::snprintf(line, sizeof(line), "mean_global=%.10g std_global=%.10g stderr_global=%.10g\n",
                  r.mean_global, r.std_global, r.stderr_global);
    oss << line;
    std::snprintf(line, sizeof(line), "mean_local=%.10g std_local=%.10g stderr_local=%.10g\n",
                  r.mean_local, r.std_local, r.stderr_local);
    oss << line;
    std::snprintf(line, sizeof(line), "analytic=%.10g (s*eps*n*sqrt(2/pi))\n", r.analytic);
    oss << line;
    return oss.str();
}

std::string report_to_json(const MonteCarloReport& r) {
    nlohmann::json j{{"n", r.n},
                     {"epsilon", r.epsilon},
                     {"s", r.s},
                     {"trials", r.trials},
                     {"seed", r.seed},
                     {"mean_global", r.mean_global},
                     {"mean_local", r.mean_local},
                     {"std_global", r.std_global},
                     {"std_local", r.std_local},
                     {"stderr_global", r.stderr_global},
                     {"stderr_local", r.stderr_local},
                     {"analytic", r.analytic}};
    return j.dump(2) + "\n";
}

std::string report_to_csv(const MonteCarloReport& r) {
    std::ostringstream oss;
    oss << "trial,diff_global,diff_local\n";
    char line[128];
    for (int64_t t = 0; t < r.trials; ++t) {
        std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g\n", static_cast<long long>(t),
                      r.per_trial_global[static_cast<size_t>(t)],
                      r.per_trial_local[static_cast<size_t>(t)]);
        oss << line;
    }
    return oss.str();
}

}  // namespace impure::theory
