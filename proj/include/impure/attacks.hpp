#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "impure/classifier.hpp"
#include "impure/rng.hpp"

namespace impure::attacks {

struct AttackConfig {
    double epsilon = 16.0 / 255.0;  // L-inf budget in [0,1]
    double alpha = 0;               // step size; 0 means the epsilon/4 default
    int steps = 10;
    bool targeted = false;
    int target_class = -1;
    double momentum_decay = 1.0;  // MI only
    bool random_start = false;    // PGD only
    uint64_t seed = 0;

    double effective_alpha() const { return alpha > 0 ? alpha : epsilon / 4.0; }
    void validate() const {
        IMPURE_CHECK(epsilon > 0 && epsilon <= 1, "attack: epsilon must lie in (0,1]");
        IMPURE_CHECK(effective_alpha() > 0, "attack: alpha must be positive");
        IMPURE_CHECK(steps >= 1, "attack: steps must be >= 1");
        IMPURE_CHECK(momentum_decay >= 0, "attack: momentum decay must be >= 0");
    }
};

// "8/255" or plain float
inline double parse_epsilon(const std::string& text) {
    try {
        auto slash = text.find('/');
        if (slash == std::string::npos) return std::stod(text);
        double num = std::stod(text.substr(0, slash));
        double den = std::stod(text.substr(slash + 1));
        IMPURE_CHECK(den != 0, "epsilon denominator is zero");
        return num / den;
    } catch (const ContractViolation&) {
        throw;
    } catch (const std::exception&) {
        throw ContractViolation("cannot parse epsilon: " + text);
    }
}

namespace detail {

template <typename T>
inline T sign_of(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// Shared iterate: optional uniform random start, optional momentum
// accumulation, step along the gradient sign, then project onto the
// epsilon-ball around the original image followed by [0,1].
template <typename T>
std::vector<Image> iterate(const TargetModel<T>& model, const std::vector<Image>& batch,
                           const std::vector<int>& labels, const AttackConfig& cfg,
                           bool use_momentum) {
    cfg.validate();
    IMPURE_CHECK(batch.size() == labels.size(), "attack: batch/label size mismatch");
    const T eps = T(cfg.epsilon);
    const T alpha = T(cfg.effective_alpha());
    const T dir_sign = cfg.targeted ? T(-1) : T(1);

    std::vector<Image> x = batch;
    if (cfg.random_start) {
        for (size_t i = 0; i < x.size(); ++i) {
            Rng rng(cfg.seed, 0x706764ull, static_cast<uint64_t>(i));
            for (size_t p = 0; p < x[i].data.size(); ++p) {
                T v = T(x[i].data[p]) + T(rng.uniform(-cfg.epsilon, cfg.epsilon));
                x[i].data[p] = float(std::clamp(v, T(0), T(1)));
            }
        }
    }

    std::vector<std::vector<T>> momentum;
    if (use_momentum)
        momentum.assign(batch.size(), std::vector<T>(batch[0].data.size(), T(0)));

    for (int t = 0; t < cfg.steps; ++t) {
        std::vector<Tensor<T>> grads = model.input_gradient(x, labels);
        for (size_t i = 0; i < x.size(); ++i) {
            const T* g = grads[i].ptr();
            const size_t n = x[i].data.size();
            for (size_t p = 0; p < n; ++p)
                if (!std::isfinite(double(g[p])))
                    throw NumericalError("non-finite gradient at batch index " + std::to_string(i) +
                                         ", iteration " + std::to_string(t));
            if (use_momentum) {
                T l1 = T(0);
                for (size_t p = 0; p < n; ++p) l1 += std::abs(g[p]);
                T* m = momentum[i].data();
                for (size_t p = 0; p < n; ++p) {
                    T contrib = l1 > T(0) ? dir_sign * g[p] / l1 : T(0);
                    m[p] = T(cfg.momentum_decay) * m[p] + contrib;
                }
            }
            for (size_t p = 0; p < n; ++p) {
                T step = use_momentum ? sign_of(momentum[i][p]) : sign_of(dir_sign * g[p]);
                T orig = T(batch[i].data[p]);
                T v = T(x[i].data[p]) + alpha * step;
                v = std::clamp(v, orig - eps, orig + eps);  // epsilon ball first
                v = std::clamp(v, T(0), T(1));
                x[i].data[p] = float(v);
            }
        }
    }
    return x;
}

}  // namespace detail

template <typename T>
std::vector<Image> fgsm(const TargetModel<T>& model, const std::vector<Image>& batch,
                        const std::vector<int>& labels, double epsilon) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.alpha = epsilon;
    cfg.steps = 1;
    return detail::iterate(model, batch, labels, cfg, false);
}

template <typename T>
std::vector<Image> fgsm_targeted(const TargetModel<T>& model, const std::vector<Image>& batch,
                                 const std::vector<int>& target_labels, double epsilon) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.alpha = epsilon;
    cfg.steps = 1;
    cfg.targeted = true;
    return detail::iterate(model, batch, target_labels, cfg, false);
}

template <typename T>
std::vector<Image> bim(const TargetModel<T>& model, const std::vector<Image>& batch,
                       const std::vector<int>& labels, double epsilon, double alpha, int steps) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.alpha = alpha;
    cfg.steps = steps;
    return detail::iterate(model, batch, labels, cfg, false);
}

template <typename T>
std::vector<Image> pgd(const TargetModel<T>& model, const std::vector<Image>& batch,
                       const std::vector<int>& labels, double epsilon, double alpha, int steps,
                       bool random_start, uint64_t seed) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.alpha = alpha;
    cfg.steps = steps;
    cfg.random_start = random_start;
    cfg.seed = seed;
    return detail::iterate(model, batch, labels, cfg, false);
}

template <typename T>
std::vector<Image> mifgsm(const TargetModel<T>& model, const std::vector<Image>& batch,
                          const std::vector<int>& labels, double epsilon, double alpha, int steps,
                          double momentum_decay) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.alpha = alpha;
    cfg.steps = steps;
    cfg.momentum_decay = momentum_decay;
    return detail::iterate(model, batch, labels, cfg, true);
}

// Dispatch by method name ("fgsm", "bim", "pgd", "mifgsm").
template <typename T>
std::vector<Image> run_attack(const std::string& method, const TargetModel<T>& model,
                              const std::vector<Image>& batch, const std::vector<int>& labels,
                              const AttackConfig& cfg) {
    if (method == "fgsm")
        return cfg.targeted ? fgsm_targeted(model, batch, labels, cfg.epsilon)
                            : fgsm(model, batch, labels, cfg.epsilon);
    if (method == "bim")
        return bim(model, batch, labels, cfg.epsilon, cfg.effective_alpha(), cfg.steps);
    if (method == "pgd")
        return pgd(model, batch, labels, cfg.epsilon, cfg.effective_alpha(), cfg.steps,
                   cfg.random_start, cfg.seed);
    if (method == "mifgsm")
        return mifgsm(model, batch, labels, cfg.epsilon, cfg.effective_alpha(), cfg.steps,
                      cfg.momentum_decay);
    throw ContractViolation("unknown attack method: " + method);
}

}  // namespace impure::attacks
