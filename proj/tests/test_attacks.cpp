#include <doctest.h>

#include "impure/attacks.hpp"
#include "impure/rng.hpp"

using namespace impure;
using D = double;

namespace {

Image random_image(int h, int w, uint64_t seed, float lo = 0.15f, float hi = 0.85f) {
    Image img(h, w, 3);
    Rng rng(seed);
    for (auto& v : img.data) v = float(rng.uniform(lo, hi));
    return img;
}

// Analytic 1-D-per-pixel model: logits = (w.x, -w.x), so the cross-entropy
// gradient has a closed form and never vanishes.
class TinyLinearModel final : public TargetModel<D> {
  public:
    explicit TinyLinearModel(double w) : w_(w) {}
    int num_classes() const override { return 2; }
    Tensor<D> logits(const std::vector<Image>& batch) const override {
        Tensor<D> out({int64_t(batch.size()), 2});
        for (size_t i = 0; i < batch.size(); ++i) {
            double f = 0;
            for (float v : batch[i].data) f += w_ * double(v);
            out.mat()(int64_t(i), 0) = f;
            out.mat()(int64_t(i), 1) = -f;
        }
        return out;
    }
    D loss(const std::vector<Image>& batch, const std::vector<int>& labels) const override {
        Tensor<D> lg = logits(batch);
        double acc = 0;
        for (size_t i = 0; i < batch.size(); ++i) {
            double a = lg.mat()(int64_t(i), 0), b = lg.mat()(int64_t(i), 1);
            double mx = std::max(a, b);
            double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
            acc += lse - (labels[i] == 0 ? a : b);
        }
        return acc / double(batch.size());
    }
    std::vector<Tensor<D>> input_gradient(const std::vector<Image>& batch,
                                          const std::vector<int>& labels) const override {
        Tensor<D> lg = logits(batch);
        std::vector<Tensor<D>> grads;
        for (size_t i = 0; i < batch.size(); ++i) {
            double a = lg.mat()(int64_t(i), 0), b = lg.mat()(int64_t(i), 1);
            double p0 = 1.0 / (1.0 + std::exp(b - a));
            // dL/df where L = lse - z_y and f enters logits as (f, -f)
            double dldf = (p0 - (labels[i] == 0 ? 1.0 : 0.0)) - ((1.0 - p0) - (labels[i] == 1 ? 1.0 : 0.0));
            Tensor<D> g({batch[i].h, batch[i].w, batch[i].c});
            for (auto& v : g.data()) v = dldf * w_;
            grads.push_back(std::move(g));
        }
        return grads;
    }

  private:
    double w_;
};

class ZeroGradientModel final : public TargetModel<D> {
  public:
    int num_classes() const override { return 2; }
    Tensor<D> logits(const std::vector<Image>& batch) const override {
        return Tensor<D>::zeros({int64_t(batch.size()), 2});
    }
    D loss(const std::vector<Image>&, const std::vector<int>&) const override {
        return D(std::log(2.0));
    }
    std::vector<Tensor<D>> input_gradient(const std::vector<Image>& batch,
                                          const std::vector<int>&) const override {
        std::vector<Tensor<D>> grads;
        for (const auto& img : batch) grads.push_back(Tensor<D>::zeros({img.h, img.w, img.c}));
        return grads;
    }
};

}  // namespace

TEST_CASE("epsilon parsing") {
    CHECK(attacks::parse_epsilon("16/255") == doctest::Approx(16.0 / 255.0).epsilon(1e-12));
    CHECK(attacks::parse_epsilon("0.05") == doctest::Approx(0.05));
    CHECK_THROWS_AS(attacks::parse_epsilon("abc"), ContractViolation);
}

TEST_CASE("zero gradient attacks return the input unchanged") {
    ZeroGradientModel model;
    std::vector<Image> batch{random_image(8, 8, 1)};
    std::vector<int> labels{0};
    CHECK(attacks::fgsm(model, batch, labels, 16.0 / 255.0)[0].data == batch[0].data);
    CHECK(attacks::fgsm_targeted(model, batch, labels, 16.0 / 255.0)[0].data == batch[0].data);
    CHECK(attacks::bim(model, batch, labels, 16.0 / 255.0, 4.0 / 255.0, 5)[0].data == batch[0].data);
    CHECK(attacks::mifgsm(model, batch, labels, 16.0 / 255.0, 4.0 / 255.0, 5, 1.0)[0].data ==
          batch[0].data);
}

TEST_CASE("fgsm closed form on the analytic linear model") {
    TinyLinearModel model(0.02);
    const double eps = 16.0 / 255.0;
    std::vector<Image> batch{random_image(4, 4, 2)};

    // label 0: the loss gradient w.r.t. pixels is (p0 - 1) * 2w < 0, so the
    // untargeted step moves every pixel down by eps.
    auto adv = attacks::fgsm(model, batch, {0}, eps);
    for (size_t i = 0; i < adv[0].data.size(); ++i)
        CHECK(double(batch[0].data[i]) - double(adv[0].data[i]) == doctest::Approx(eps).epsilon(1e-6));

    // targeted toward class 0 flips the sign relative to fgsm
    auto advt = attacks::fgsm_targeted(model, batch, {0}, eps);
    for (size_t i = 0; i < advt[0].data.size(); ++i)
        CHECK(double(advt[0].data[i]) - double(batch[0].data[i]) == doctest::Approx(eps).epsilon(1e-6));

    // max-abs change is exactly eps wherever the gradient is nonzero
    float max_abs = linf_distance(adv[0], batch[0]);
    CHECK(max_abs == doctest::Approx(eps).epsilon(1e-6));
}

TEST_CASE("budget and range invariants for every attack") {
    TinyLinearModel model(0.013);
    std::vector<Image> batch{random_image(8, 8, 3, 0.0f, 1.0f), random_image(8, 8, 4, 0.0f, 1.0f)};
    std::vector<int> labels{0, 1};
    const double eps = 8.0 / 255.0;

    auto check_contract = [&](const std::vector<Image>& out) {
        for (size_t i = 0; i < out.size(); ++i) {
            CHECK(linf_distance(out[i], batch[i]) <= float(eps) + 1e-6f);
            for (float v : out[i].data) {
                CHECK(v >= 0.f);
                CHECK(v <= 1.f);
            }
        }
    };
    check_contract(attacks::fgsm(model, batch, labels, eps));
    check_contract(attacks::bim(model, batch, labels, eps, eps / 4, 10));
    check_contract(attacks::pgd(model, batch, labels, eps, eps / 4, 10, true, 99));
    check_contract(attacks::mifgsm(model, batch, labels, eps, eps / 4, 10, 1.0));
}

TEST_CASE("fgsm equals one-step bim bit-exactly") {
    TinyLinearModel model(0.007);
    std::vector<Image> batch{random_image(8, 8, 5, 0.0f, 1.0f)};
    const double eps = 16.0 / 255.0;
    auto a = attacks::fgsm(model, batch, {1}, eps);
    auto b = attacks::bim(model, batch, {1}, eps, eps, 1);
    CHECK(a[0].data == b[0].data);
}

TEST_CASE("pgd without random start equals bim; with seed it is reproducible") {
    TinyLinearModel model(0.009);
    std::vector<Image> batch{random_image(8, 8, 6)};
    const double eps = 8.0 / 255.0;
    auto b = attacks::bim(model, batch, {0}, eps, 2.0 / 255.0, 10);
    auto p = attacks::pgd(model, batch, {0}, eps, 2.0 / 255.0, 10, false, 4);
    CHECK(b[0].data == p[0].data);

    auto r1 = attacks::pgd(model, batch, {0}, eps, 2.0 / 255.0, 10, true, 4);
    auto r2 = attacks::pgd(model, batch, {0}, eps, 2.0 / 255.0, 10, true, 4);
    CHECK(r1[0].data == r2[0].data);
    // one tiny step leaves the random initialization visible
    auto r3 = attacks::pgd(model, batch, {0}, eps, 1e-4, 1, true, 4);
    auto r4 = attacks::pgd(model, batch, {0}, eps, 1e-4, 1, true, 5);
    CHECK(r3[0].data != r4[0].data);
}

TEST_CASE("bim pins at the ball boundary under a constant gradient") {
    TinyLinearModel model(0.02);
    std::vector<Image> batch{random_image(6, 6, 7)};
    const double eps = 16.0 / 255.0;
    // alpha = eps/4, steps = 8: after 4 steps the iterate hits the boundary
    // and the projection keeps it there.
    auto adv = attacks::bim(model, batch, {0}, eps, eps / 4, 8);
    for (size_t i = 0; i < adv[0].data.size(); ++i)
        CHECK(std::abs(double(adv[0].data[i]) - double(batch[0].data[i])) ==
              doctest::Approx(eps).epsilon(1e-6));
}

TEST_CASE("mifgsm equals bim when the gradient direction is constant") {
    TinyLinearModel model(0.011);
    std::vector<Image> batch{random_image(8, 8, 8)};
    const double eps = 8.0 / 255.0;
    auto m = attacks::mifgsm(model, batch, {0}, eps, 2.0 / 255.0, 6, 1.0);
    auto b = attacks::bim(model, batch, {0}, eps, 2.0 / 255.0, 6);
    CHECK(m[0].data == b[0].data);
}

TEST_CASE("attack config validation") {
    attacks::AttackConfig cfg;
    cfg.epsilon = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractViolation);
    cfg.epsilon = 0.1;
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractViolation);
    cfg.steps = 1;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.effective_alpha() == doctest::Approx(0.025));
}
