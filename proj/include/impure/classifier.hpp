#pragma once

#include <memory>
#include <string>
#include <vector>

#include "impure/image.hpp"
#include "impure/nn.hpp"

namespace impure {

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    Tensor<T> t({img.h, img.w, img.c});
    for (size_t i = 0; i < img.data.size(); ++i) t[static_cast<int64_t>(i)] = T(img.data[i]);
    return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
    IMPURE_CHECK(t.ndim() == 3, "tensor_to_image: expected [H,W,C]");
    Image img(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(t[static_cast<int64_t>(i)]);
    return img;
}

// Differentiable classifier handle used by the attack and evaluation code.
template <typename T>
class TargetModel {
  public:
    virtual ~TargetModel() = default;
    virtual int num_classes() const = 0;
    // [B, classes]
    virtual Tensor<T> logits(const std::vector<Image>& batch) const = 0;
    // mean cross-entropy over the batch
    virtual T loss(const std::vector<Image>& batch, const std::vector<int>& labels) const = 0;
    // d(per-image cross-entropy)/d(pixels), one [H,W,C] tensor per image
    virtual std::vector<Tensor<T>> input_gradient(const std::vector<Image>& batch,
                                                  const std::vector<int>& labels) const = 0;

    std::vector<int> predict(const std::vector<Image>& batch) const {
        Tensor<T> lg = logits(batch);
        std::vector<int> out(batch.size());
        auto m = lg.mat();
        for (int64_t r = 0; r < m.rows(); ++r) {
            int best = 0;
            for (int k = 1; k < num_classes(); ++k)
                if (m(r, k) > m(r, best)) best = k;
            out[static_cast<size_t>(r)] = best;
        }
        return out;
    }
};

// Frozen feature source for the perceptual loss: per-stage post-activation
// maps plus the pre-softmax vector.
template <typename T>
class FeatureExtractor {
  public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<std::string> layer_ids() const = 0;
    virtual Tensor<T> feature_map(const Image& img, const std::string& layer_id) const = 0;
};

struct ClassifierConfig {
    int input_h = 32, input_w = 32, channels = 3;
    std::vector<int> stage_channels{16, 32, 64, 96, 128};
    int classes = 10;

    nlohmann::json to_json() const {
        return {{"input_h", input_h},
                {"input_w", input_w},
                {"channels", channels},
                {"stage_channels", stage_channels},
                {"classes", classes}};
    }
    static ClassifierConfig from_json(const nlohmann::json& j) {
        ClassifierConfig c;
        c.input_h = j.at("input_h").get<int>();
        c.input_w = j.at("input_w").get<int>();
        c.channels = j.at("channels").get<int>();
        c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
        c.classes = j.at("classes").get<int>();
        return c;
    }
};

// VGG-flavoured stack: stage k = [maxpool2 for k>0] conv3x3 + relu, then
// global average pooling into a linear head. Stage outputs are exposed as
// "layer1".."layerN" and the logits as "pre_soft" for the perceptual loss.
template <typename T>
class SmallConvNet final : public TargetModel<T>, public FeatureExtractor<T> {
  public:
    explicit SmallConvNet(ClassifierConfig cfg) : cfg_(std::move(cfg)) {
        int cin = cfg_.channels;
        for (size_t i = 0; i < cfg_.stage_channels.size(); ++i) {
            int cout = cfg_.stage_channels[i];
            std::string prefix = "stage" + std::to_string(i + 1) + ".conv";
            params_.add(prefix + ".W", {int64_t(9) * cin, cout});
            params_.add(prefix + ".b", {cout});
            cin = cout;
        }
        params_.add("head.W", {cin, cfg_.classes});
        params_.add("head.b", {cfg_.classes});
    }

    void init(uint64_t seed) {
        Rng rng(seed, 0x636c66ull);
        int cin = cfg_.channels;
        for (size_t i = 0; i < cfg_.stage_channels.size(); ++i) {
            std::string prefix = "stage" + std::to_string(i + 1) + ".conv";
            auto& w = params_.get(prefix + ".W");
            double std = std::sqrt(2.0 / double(9 * cin));
            for (auto& v : w.data()) v = T(rng.normal() * std);
            cin = cfg_.stage_channels[i];
        }
        auto& hw = params_.get("head.W");
        double std = std::sqrt(1.0 / double(cin));
        for (auto& v : hw.data()) v = T(rng.normal() * std);
    }

    const ClassifierConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    struct Forward {
        std::vector<ag::Var<T>> stages;  // post-ReLU maps
        ag::Var<T> logits;               // [1, classes]
    };

    // Builds the network on an existing graph so callers can differentiate
    // through it (trainable=false freezes the weights but still lets
    // gradients flow to the input).
    Forward build(nn::Graph<T>& g, const ag::Var<T>& x, bool trainable) const {
        Forward f;
        ag::Var<T> h = x;
        for (size_t i = 0; i < cfg_.stage_channels.size(); ++i) {
            if (i > 0) h = ag::maxpool2(h);
            std::string prefix = "stage" + std::to_string(i + 1) + ".conv";
            auto w = g.param(params_get(prefix + ".W"), trainable);
            auto b = g.param(params_get(prefix + ".b"), trainable);
            h = ag::relu(ag::conv2d(h, w, b, 3, 3, 1, 1));
            f.stages.push_back(h);
        }
        auto pooled = ag::global_avg_pool(h);
        f.logits = ag::add_rowvec(ag::matmul(pooled, g.param(params_get("head.W"), trainable)),
                                  g.param(params_get("head.b"), trainable));
        return f;
    }

    // ---- TargetModel ----
    int num_classes() const override { return cfg_.classes; }

    Tensor<T> logits(const std::vector<Image>& batch) const override {
        Tensor<T> out({static_cast<int64_t>(batch.size()), cfg_.classes});
        for (size_t i = 0; i < batch.size(); ++i) {
            nn::Graph<T> g(false);
            auto f = build(g, g.input(image_to_tensor<T>(batch[i]), false), false);
            out.mat().row(static_cast<int64_t>(i)) = f.logits->value.mat().row(0);
        }
        return out;
    }

    T loss(const std::vector<Image>& batch, const std::vector<int>& labels) const override {
        IMPURE_CHECK(batch.size() == labels.size(), "loss: batch/label size mismatch");
        Tensor<T> lg = logits(batch);
        double acc = 0;
        auto m = lg.mat();
        for (int64_t r = 0; r < m.rows(); ++r) {
            T mx = m.row(r).maxCoeff();
            double z = 0;
            for (int k = 0; k < cfg_.classes; ++k) z += std::exp(double(m(r, k) - mx));
            acc += std::log(z) + double(mx) - double(m(r, labels[static_cast<size_t>(r)]));
        }
        return T(acc / double(m.rows()));
    }

    std::vector<Tensor<T>> input_gradient(const std::vector<Image>& batch,
                                          const std::vector<int>& labels) const override {
        IMPURE_CHECK(batch.size() == labels.size(), "input_gradient: batch/label size mismatch");
        std::vector<Tensor<T>> grads(batch.size());
        for (size_t i = 0; i < batch.size(); ++i) {
            nn::Graph<T> g(true);
            auto x = g.input(image_to_tensor<T>(batch[i]), true);
            auto f = build(g, x, false);
            auto l = ag::cross_entropy_mean(f.logits, {labels[i]});
            ag::backward(l);
            grads[i] = x->grad.defined() ? x->grad : Tensor<T>::zeros(x->value.shape());
        }
        return grads;
    }

    // ---- FeatureExtractor ----
    std::vector<std::string> layer_ids() const override {
        std::vector<std::string> ids;
        for (size_t i = 0; i < cfg_.stage_channels.size(); ++i)
            ids.push_back("layer" + std::to_string(i + 1));
        ids.push_back("pre_soft");
        return ids;
    }

    Tensor<T> feature_map(const Image& img, const std::string& layer_id) const override {
        nn::Graph<T> g(false);
        auto f = build(g, g.input(image_to_tensor<T>(img), false), false);
        return feature_of(f, layer_id)->value;
    }

    ag::Var<T> feature_of(const Forward& f, const std::string& layer_id) const {
        if (layer_id == "pre_soft") return f.logits;
        for (size_t i = 0; i < f.stages.size(); ++i)
            if (layer_id == "layer" + std::to_string(i + 1)) return f.stages[i];
        throw ContractViolation("unknown feature layer: " + layer_id);
    }

    // Value-level helper used to pin the extractor during training.
    uint64_t fingerprint(const std::vector<Image>& probes) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& img : probes) {
            for (const auto& id : layer_ids()) {
                Tensor<T> fm = feature_map(img, id);
                h = fnv1a64(fm.ptr(), fm.data().size() * sizeof(T), h);
            }
        }
        return h;
    }

    void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const {
        nn::save_checkpoint(path, "classifier", cfg_.to_json(), params_,
                            extra.is_null() ? nlohmann::json::object() : extra);
    }
    static SmallConvNet load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open checkpoint " + path.string());
        auto hdr = nn::read_checkpoint_header(in, path.string());
        in.close();
        SmallConvNet net(ClassifierConfig::from_json(hdr.config));
        nn::load_checkpoint(path, "classifier", net.params_);
        return net;
    }

  private:
    const Tensor<T>& params_get(const std::string& name) const {
        return const_cast<nn::ParamStore<T>&>(params_).get(name);
    }

    ClassifierConfig cfg_;
    nn::ParamStore<T> params_;
};

}  // namespace impure
