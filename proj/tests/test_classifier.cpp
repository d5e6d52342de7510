#include <doctest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "impure/classifier.hpp"

using namespace impure;
using D = double;

namespace {
Image random_image(int h, int w, uint64_t seed) {
    Image img(h, w, 3);
    Rng rng(seed);
    for (auto& v : img.data) v = float(rng.uniform(0.05, 0.95));
    return img;
}

ClassifierConfig tiny_config() {
    ClassifierConfig cfg;
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.stage_channels = {6, 8};
    cfg.classes = 3;
    return cfg;
}
}  // namespace

TEST_CASE("input gradient matches finite differences on random probes") {
    SmallConvNet<D> net(tiny_config());
    net.init(3);
    Rng pick(7);
    for (int probe = 0; probe < 10; ++probe) {
        Image img = random_image(8, 8, 100 + uint64_t(probe));
        int label = int(pick.index(3));
        auto grads = net.input_gradient({img}, {label});

        // pixels are stored as float32, so the step must be snapped to the
        // representable values actually fed through the network
        for (int i = 0; i < 6; ++i) {
            size_t coord = pick.index(img.data.size());
            const float h = 1e-3f;
            Image xp = img, xm = img;
            xp.data[coord] = img.data[coord] + h;
            xm.data[coord] = img.data[coord] - h;
            double h_eff = double(xp.data[coord]) - double(xm.data[coord]);
            double fd = (double(net.loss({xp}, {label})) - double(net.loss({xm}, {label}))) / h_eff;
            double analytic = grads[0][int64_t(coord)];
            double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
            CHECK(std::abs(fd - analytic) / denom < 1e-3);
        }
    }
}

TEST_CASE("predict matches argmax of logits") {
    SmallConvNet<D> net(tiny_config());
    net.init(5);
    std::vector<Image> batch{random_image(8, 8, 1), random_image(8, 8, 2)};
    auto lg = net.logits(batch);
    auto pred = net.predict(batch);
    for (int64_t r = 0; r < 2; ++r) {
        int best = 0;
        for (int k = 1; k < 3; ++k)
            if (lg.mat()(r, k) > lg.mat()(r, best)) best = k;
        CHECK(pred[size_t(r)] == best);
    }
}

TEST_CASE("feature maps expose stages and pre-softmax") {
    SmallConvNet<D> net(tiny_config());
    net.init(9);
    Image img = random_image(8, 8, 3);
    auto ids = net.layer_ids();
    CHECK(ids == std::vector<std::string>{"layer1", "layer2", "pre_soft"});
    auto f1 = net.feature_map(img, "layer1");
    CHECK(f1.shape() == std::vector<int64_t>{8, 8, 6});
    auto f2 = net.feature_map(img, "layer2");
    CHECK(f2.shape() == std::vector<int64_t>{4, 4, 8});
    auto ps = net.feature_map(img, "pre_soft");
    CHECK(ps.numel() == 3);
    CHECK_THROWS_AS(net.feature_map(img, "layer9"), ContractViolation);

    // frozen network: identical inputs, identical outputs
    CHECK(net.feature_map(img, "layer2").data() == f2.data());
    uint64_t fp1 = net.fingerprint({img});
    uint64_t fp2 = net.fingerprint({img});
    CHECK(fp1 == fp2);
}

TEST_CASE("classifier checkpoint round trip is bit exact") {
    auto dir = std::filesystem::temp_directory_path() / "impure_clf_test";
    SmallConvNet<D> net(tiny_config());
    net.init(11);
    net.save(dir / "clf.impt");
    auto back = SmallConvNet<D>::load(dir / "clf.impt");
    REQUIRE(back.params().count() == net.params().count());
    for (size_t i = 0; i < net.params().count(); ++i) {
        CHECK(back.params().entries()[i].name == net.params().entries()[i].name);
        CHECK(back.params().entries()[i].value.data() == net.params().entries()[i].value.data());
    }
    Image img = random_image(8, 8, 21);
    CHECK(back.logits({img}).data() == net.logits({img}).data());
}
