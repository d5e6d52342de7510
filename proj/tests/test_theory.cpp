#include <doctest.h>

#include <cmath>

#include "impure/rng.hpp"
#include "impure/theory.hpp"

using namespace impure;
using namespace impure::theory;

TEST_CASE("optimal perturbation closed form") {
    LinearModel m{{1.0, -2.0, 3.0}};
    auto [eta, df] = optimal_perturbation(m, 0.1);
    CHECK(eta == std::vector<double>{0.1, -0.1, 0.1});
    CHECK(df == doctest::Approx(0.6).epsilon(1e-12));

    // zero budget
    auto [eta0, df0] = optimal_perturbation(m, 0.0);
    CHECK(eta0 == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(df0 == 0.0);

    // sign(0) = 0
    LinearModel mz{{0.0, 5.0}};
    auto [etaz, dfz] = optimal_perturbation(mz, 0.2);
    CHECK(etaz[0] == 0.0);
    CHECK(etaz[1] == 0.2);
    CHECK(dfz == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("optimal perturbation identity over random models") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        int64_t n = 1 + int64_t(rng.index(10000));
        LinearModel m;
        m.omega.resize(size_t(n));
        double l1 = 0;
        for (auto& w : m.omega) {
            w = rng.normal();
            l1 += std::abs(w);
        }
        double eps = rng.uniform(1e-4, 0.5);
        auto [eta, df] = optimal_perturbation(m, eps);
        double dot = model_diff(m, eta);
        CHECK(std::abs(dot - eps * l1) <= 1e-9 * std::abs(eps * l1));
        CHECK(std::abs(df - eps * l1) <= 1e-9 * std::abs(eps * l1));
    }
}

TEST_CASE("model_diff basics") {
    LinearModel m{{1.0, 2.0}};
    CHECK(model_diff(m, {0.0, 0.0}) == 0.0);
    CHECK(model_diff(m, {2.0, -1.0}) == 0.0);  // orthogonal
    CHECK_THROWS_AS(model_diff(m, {1.0}), ContractViolation);
}

TEST_CASE("global reduction") {
    CHECK_THROWS_AS(reduce_global({0.1}, 0.0), ContractViolation);
    CHECK_THROWS_AS(reduce_global({0.1}, 1.0), ContractViolation);
    auto r = reduce_global({0.2, -0.2}, 0.5);
    CHECK(r.reduced == std::vector<double>{0.1, -0.1});

    // L1 homogeneity and exact linear scaling of the model difference
    Rng rng(11);
    LinearModel m;
    std::vector<double> eta;
    for (int i = 0; i < 64; ++i) {
        m.omega.push_back(rng.normal());
        eta.push_back(rng.normal() * 0.1);
    }
    auto r2 = reduce_global(eta, 0.3);
    double l1r = 0, l1 = 0;
    for (size_t i = 0; i < eta.size(); ++i) {
        l1r += std::abs(r2.reduced[i]);
        l1 += std::abs(eta[i]);
    }
    CHECK(l1r == doctest::Approx(0.3 * l1).epsilon(1e-12));
    CHECK(model_diff(m, r2.reduced) == doctest::Approx(0.3 * model_diff(m, eta)).epsilon(1e-12));
}

TEST_CASE("local reduction mask construction") {
    std::vector<double> ones(10, 1.0);
    // round(s*n) = 9 -> exactly one zero
    auto r = reduce_local(ones, 0.9, 1);
    int kept = 0;
    for (auto v : r.mask) kept += v;
    CHECK(kept == 9);
    int zeros = 0;
    for (auto v : r.reduced) zeros += v == 0.0 ? 1 : 0;
    CHECK(zeros == 1);

    for (auto v : r.mask) CHECK((v == 0 || v == 1));
    CHECK_THROWS_AS(reduce_local(ones, 0.04, 1), ContractViolation);  // round(0.4) = 0

    // expectation of the kept mass approaches s * ||eta||_1
    Rng rng(3);
    std::vector<double> eta(50);
    double l1 = 0;
    for (auto& v : eta) {
        v = rng.normal();
        l1 += std::abs(v);
    }
    const double s = 0.5;
    double acc = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        auto rl = reduce_local(eta, s, uint64_t(t));
        for (auto v : rl.reduced) acc += std::abs(v);
    }
    double mean = acc / trials;
    // per-trial std of the kept mass is below ||eta||_1 / sqrt(n); 3 sigma band
    double sigma_bound = 3.0 * l1 / std::sqrt(50.0) / std::sqrt(double(trials));
    CHECK(std::abs(mean - s * l1) < sigma_bound + 1e-9);
}

TEST_CASE("expected_max_diff formula") {
    CHECK(expected_max_diff(10, 1.0, 1.0, 1.0) == doctest::Approx(10.0));
    CHECK(expected_max_diff(10, 1.0, 1.0, 0.5) == doctest::Approx(0.5 * expected_max_diff(10, 1.0, 1.0, 1.0)));
    // standard-normal m = sqrt(2/pi), n = 4096, eps = 16/255, s = 0.5
    double v = expected_max_diff(4096, std::sqrt(2.0 / M_PI), 16.0 / 255.0, 0.5);
    CHECK(v == doctest::Approx(102.54).epsilon(2e-4));
    CHECK_THROWS_AS(expected_max_diff(0, 1.0, 1.0, 0.5), ContractViolation);
}

TEST_CASE("monte carlo reproducibility and sanity at small scale") {
    auto a = monte_carlo_diff(128, 16.0 / 255.0, 0.5, 500, 17, 2);
    auto b = monte_carlo_diff(128, 16.0 / 255.0, 0.5, 500, 17, 1);
    CHECK(a.mean_global == b.mean_global);  // thread split cannot matter
    CHECK(a.per_trial_local == b.per_trial_local);

    auto c = monte_carlo_diff(128, 16.0 / 255.0, 0.5, 1, 3);
    auto d = monte_carlo_diff(128, 16.0 / 255.0, 0.5, 1, 3);
    CHECK(c.per_trial_global == d.per_trial_global);

    // 4-sigma statistical band around the analytic value
    CHECK(std::abs(a.mean_global - a.analytic) < 4 * a.stderr_global + 1e-9);
    CHECK(std::abs(a.mean_local - a.analytic) < 4 * a.stderr_local + 1e-9);

    // report serializations stay in sync with the values
    auto text = report_to_text(a);
    CHECK(text.find("analytic") != std::string::npos);
    auto csv = report_to_csv(c);
    CHECK(csv.find("trial,diff_global,diff_local") == 0);
}
