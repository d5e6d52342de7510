#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "impure/classifier.hpp"
#include "impure/manifest.hpp"
#include "impure/parallel.hpp"
#include "impure/riae.hpp"

namespace impure::training {

// ---- Random Combination Module ----

// Mask matrix u: one U(0,1) draw per patch cell, constant within the cell.
template <typename T>
Tensor<T> build_combine_mask(int h, int w, int patch, uint64_t seed) {
    IMPURE_CHECK(patch > 0 && h % patch == 0 && w % patch == 0,
                 "combine mask: patch must divide image dims");
    Rng rng(seed, 0x72636dull);
    const int gh = h / patch, gw = w / patch;
    std::vector<double> cell(static_cast<size_t>(gh) * gw);
    for (auto& v : cell) v = rng.uniform();
    Tensor<T> u({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            u[static_cast<int64_t>(y) * w + x] =
                T(cell[static_cast<size_t>(y / patch) * gw + x / patch]);
    return u;
}

// x' = purified .* u + adversarial .* (1 - u), with u patch-constant.
inline Image random_combine(const Image& purified, const Image& adversarial, int patch,
                            uint64_t seed) {
    IMPURE_CHECK(purified.same_shape(adversarial), "random_combine: shape mismatch");
    Tensor<float> u = build_combine_mask<float>(purified.h, purified.w, patch, seed);
    Image out(purified.h, purified.w, purified.c);
    for (int y = 0; y < purified.h; ++y)
        for (int x = 0; x < purified.w; ++x) {
            float uv = u[static_cast<int64_t>(y) * purified.w + x];
            for (int ch = 0; ch < purified.c; ++ch)
                out.at(y, x, ch) =
                    purified.at(y, x, ch) * uv + adversarial.at(y, x, ch) * (1.f - uv);
        }
    return out;
}

// ---- losses ----

// (1 / (H*W)) * sum |a - b| over all H*W*C entries
inline double pixel_loss(const Image& purified, const Image& clean) {
    IMPURE_CHECK(purified.same_shape(clean), "pixel_loss: shape mismatch");
    double acc = 0;
    for (size_t i = 0; i < purified.data.size(); ++i)
        acc += std::abs(double(purified.data[i]) - double(clean.data[i]));
    return acc / (double(purified.h) * double(purified.w));
}

struct LossTerm {
    std::string layer;
    double weight = 1.0;
};

struct LossConfig {
    std::vector<LossTerm> terms{{"layer4", 30.0}, {"layer5", 10.0}, {"pre_soft", 5.0}};

    template <typename T>
    void validate(const FeatureExtractor<T>& extractor) const {
        auto ids = extractor.layer_ids();
        for (const auto& t : terms) {
            IMPURE_CHECK(std::find(ids.begin(), ids.end(), t.layer) != ids.end(),
                         "loss layer not exposed by extractor: " << t.layer);
            IMPURE_CHECK(t.weight > 0, "loss weight must be positive for " << t.layer);
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json terms_json = nlohmann::json::array();
        for (const auto& t : terms) terms_json.push_back({{"layer", t.layer}, {"weight", t.weight}});
        return {{"terms", terms_json}};
    }
    static LossConfig from_json(const nlohmann::json& j) {
        LossConfig c;
        c.terms.clear();
        for (const auto& t : j.at("terms"))
            c.terms.push_back({t.at("layer").get<std::string>(), t.at("weight").get<double>()});
        return c;
    }
};

// (1 / (H_Fi * W_Fi)) * || F_i(clean) - F_i(combined) ||_1. The pre-softmax
// vector counts as a 1x1 map.
template <typename T>
double perceptual_loss_layer(const Image& combined, const Image& clean,
                             const FeatureExtractor<T>& extractor, const std::string& layer_id) {
    Tensor<T> fc = extractor.feature_map(combined, layer_id);
    Tensor<T> fx = extractor.feature_map(clean, layer_id);
    double acc = 0;
    for (int64_t i = 0; i < fc.numel(); ++i) acc += std::abs(double(fc[i]) - double(fx[i]));
    double hw = fc.ndim() == 3 ? double(fc.dim(0)) * double(fc.dim(1)) : 1.0;
    return acc / hw;
}

template <typename T>
double overall_loss(const Image& purified, const Image& combined, const Image& clean,
                    const FeatureExtractor<T>& extractor, const LossConfig& cfg) {
    cfg.validate(extractor);
    double acc = pixel_loss(purified, clean);
    for (const auto& t : cfg.terms)
        acc += t.weight * perceptual_loss_layer(combined, clean, extractor, t.layer);
    return acc;
}

// ---- differentiable step graph ----

// Clean-image feature references; frozen, so they are computed once.
template <typename T>
struct CleanRefs {
    Tensor<T> clean_image;                    // [H,W,C]
    std::map<std::string, Tensor<T>> feats;   // layer id -> reference map
};

template <typename T>
CleanRefs<T> make_clean_refs(const Image& clean, const SmallConvNet<T>& extractor,
                             const LossConfig& loss_cfg) {
    CleanRefs<T> refs;
    refs.clean_image = image_to_tensor<T>(clean);
    nn::Graph<T> g(false);
    auto fwd = extractor.build(g, g.input(refs.clean_image.clone(), false), false);
    for (const auto& t : loss_cfg.terms)
        if (!refs.feats.count(t.layer)) refs.feats[t.layer] = extractor.feature_of(fwd, t.layer)->value;
    return refs;
}

template <typename T>
struct StepGraph {
    ag::Var<T> overall;
    ag::Var<T> pixel;
    ag::Var<T> perceptual;  // weighted sum of the layer terms
    ag::Var<T> purified;    // [H,W,C]
    ag::Var<T> combined;    // [H,W,C]
};

// One training-step loss: purify the adversarial image, mix it with the
// adversarial image through the combination mask, and constrain pixels
// against the clean image and features against the combined image. Every
// random draw derives from `seed`, so the same seed replays the same graph.
template <typename T>
StepGraph<T> build_step_graph(nn::Graph<T>& g, const riae::Purifier<T>& purifier,
                              const SmallConvNet<T>& extractor, const LossConfig& loss_cfg,
                              const CleanRefs<T>& refs, const Image& adversarial,
                              const SubsetPartition& part, uint64_t seed) {
    StepGraph<T> out;
    auto pg = purifier.purify_graph(g, adversarial, part, seed);
    out.purified = pg.image;

    const int h = adversarial.h, w = adversarial.w, c = adversarial.c;
    Tensor<T> u2 = build_combine_mask<T>(h, w, purifier.config().patch,
                                         mix_seed(seed, 0x636f6d62696e65ull));
    Tensor<T> u({h, w, c}), inv_adv({h, w, c});
    for (int64_t p = 0; p < int64_t(h) * w; ++p)
        for (int ch = 0; ch < c; ++ch) {
            u[p * c + ch] = u2[p];
            inv_adv[p * c + ch] = (T(1) - u2[p]) * T(adversarial.data[static_cast<size_t>(p * c + ch)]);
        }
    out.combined = ag::add(ag::mul(out.purified, g.constant(std::move(u))),
                           g.constant(std::move(inv_adv)));

    out.pixel = ag::scale(ag::l1_diff(out.purified, g.constant(refs.clean_image.clone())),
                          T(1) / (T(h) * T(w)));

    auto fwd = extractor.build(g, out.combined, false);
    ag::Var<T> per;
    for (const auto& term : loss_cfg.terms) {
        auto feat = extractor.feature_of(fwd, term.layer);
        const auto& ref = refs.feats.at(term.layer);
        double hw = ref.ndim() == 3 ? double(ref.dim(0)) * double(ref.dim(1)) : 1.0;
        auto t = ag::scale(ag::l1_diff(feat, g.constant(ref.clone())), T(term.weight / hw));
        per = per ? ag::add(per, t) : t;
    }
    out.perceptual = per ? per : g.constant(Tensor<T>::scalar(T(0)));
    out.overall = ag::add(out.pixel, out.perceptual);
    return out;
}

// ---- training loop ----

struct OptimizerSettings {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    int batch_size = 16;
};

struct TrainConfig {
    riae::RIAEConfig model;
    LossConfig loss;
    OptimizerSettings opt;
    int epochs = 30;
    uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency
    std::string train_manifest;
    std::string extractor_checkpoint;
    std::string out_dir;
    std::vector<std::string> attack_tags;  // empty = every attack column

    nlohmann::json to_json() const {
        return {{"model", model.to_json()},
                {"loss", loss.to_json()},
                {"optimizer",
                 {{"lr", opt.lr},
                  {"beta1", opt.beta1},
                  {"beta2", opt.beta2},
                  {"weight_decay", opt.weight_decay},
                  {"batch_size", opt.batch_size}}},
                {"epochs", epochs},
                {"seed", seed},
                {"threads", threads},
                {"train_manifest", train_manifest},
                {"extractor_checkpoint", extractor_checkpoint},
                {"out_dir", out_dir},
                {"attack_tags", attack_tags}};
    }
    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.model = riae::RIAEConfig::from_json(j.at("model"));
        if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            c.opt.lr = o.value("lr", c.opt.lr);
            c.opt.beta1 = o.value("beta1", c.opt.beta1);
            c.opt.beta2 = o.value("beta2", c.opt.beta2);
            c.opt.weight_decay = o.value("weight_decay", c.opt.weight_decay);
            c.opt.batch_size = o.value("batch_size", c.opt.batch_size);
        }
        c.epochs = j.at("epochs").get<int>();
        c.seed = j.value("seed", uint64_t(0));
        c.threads = j.value("threads", 0);
        c.train_manifest = j.value("train_manifest", "");
        c.extractor_checkpoint = j.value("extractor_checkpoint", "");
        c.out_dir = j.value("out_dir", "");
        c.attack_tags = j.value("attack_tags", std::vector<std::string>{});
        return c;
    }
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0;
    double pixel = 0;
    double perceptual = 0;
    double overall = 0;
};

struct TrainHistory {
    std::vector<EpochMetrics> epochs;

    std::string to_csv() const {
        std::string out = "epoch,lr,pixel_loss,perceptual_loss,overall_loss\n";
        char line[192];
        for (const auto& e : epochs) {
            std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.lr,
                          e.pixel, e.perceptual, e.overall);
            out += line;
        }
        return out;
    }
};

struct TrainPair {
    Image clean;
    Image adversarial;
    int label = -1;
    std::string attack;
    std::string clean_key;  // rel path, for the feature cache
};

// Loads every (clean, adversarial) pair for the selected attack tags.
inline std::vector<TrainPair> load_pairs(const DatasetManifest& manifest,
                                         const std::vector<std::string>& tags) {
    std::vector<std::string> use = tags;
    if (use.empty())
        for (const auto& [tag, meta] : manifest.attacks) use.push_back(tag);
    std::vector<TrainPair> pairs;
    for (const auto& e : manifest.entries) {
        for (const auto& tag : use) {
            auto it = e.adv_paths.find(tag);
            if (it == e.adv_paths.end()) continue;
            TrainPair p;
            p.clean = load_image(manifest.resolve(e.rel_path), manifest.image_h, manifest.image_w);
            p.adversarial = load_image(manifest.resolve(it->second), manifest.image_h, manifest.image_w);
            p.label = e.label;
            p.attack = tag;
            p.clean_key = e.rel_path;
            pairs.push_back(std::move(p));
        }
    }
    return pairs;
}

template <typename T>
void save_train_state(const std::filesystem::path& path, const riae::Purifier<T>& purifier,
                      nn::AdamW<T>& optimizer, int next_epoch, const TrainConfig& cfg);
template <typename T>
int load_train_state(const std::filesystem::path& path, riae::Purifier<T>& purifier,
                     nn::AdamW<T>& optimizer);

// Algorithm: per step, purify the adversarial image with a random dividing,
// mix with the adversarial image, and take an AdamW step on the joint loss
// under a cosine-annealed learning rate. Deterministic for a fixed seed.
// stop_after > 0 limits how many epochs this invocation runs (the schedule
// still spans cfg.epochs); a later resume continues from the checkpoint.
template <typename T>
TrainHistory train(std::vector<TrainPair> pairs, riae::Purifier<T>& purifier,
                   const SmallConvNet<T>& extractor, const TrainConfig& cfg, bool resume = false,
                   int stop_after = -1) {
    namespace fs = std::filesystem;
    cfg.loss.validate(extractor);
    IMPURE_CHECK(cfg.epochs >= 0, "train: negative epoch count");
    IMPURE_CHECK(!pairs.empty() || cfg.epochs == 0, "train: empty dataset");
    const int threads = resolve_threads(cfg.threads);
    const fs::path out_dir = cfg.out_dir.empty() ? fs::path(".") : fs::path(cfg.out_dir);
    fs::create_directories(out_dir);

    // extractor freeze tripwire
    std::vector<Image> probes;
    for (int i = 0; i < 3; ++i) {
        Image img(8, 8, 3);
        Rng rng(0x70726f6265ull, static_cast<uint64_t>(i));
        for (auto& v : img.data) v = float(rng.uniform());
        probes.push_back(std::move(img));
    }
    const uint64_t extractor_before = extractor.fingerprint(probes);

    nn::AdamW<T> optimizer(purifier.params(), {cfg.opt.lr, cfg.opt.beta1, cfg.opt.beta2, 1e-8,
                                               cfg.opt.weight_decay});
    int start_epoch = 0;
    if (resume) start_epoch = load_train_state(out_dir / "trainstate.impt", purifier, optimizer);

    // reference features of the frozen extractor per unique clean image
    std::map<std::string, CleanRefs<T>> ref_cache;
    for (const auto& p : pairs)
        if (!ref_cache.count(p.clean_key)) ref_cache.emplace(p.clean_key, CleanRefs<T>{});
    {
        std::vector<std::pair<const std::string*, const Image*>> todo;
        for (const auto& p : pairs) {
            auto& slot = ref_cache.at(p.clean_key);
            if (!slot.clean_image.defined()) {
                slot.clean_image = Tensor<T>({1});  // reserve; filled below
                todo.push_back({&p.clean_key, &p.clean});
            }
        }
        parallel_for(static_cast<int64_t>(todo.size()), threads, [&](int64_t i) {
            ref_cache.at(*todo[static_cast<size_t>(i)].first) =
                make_clean_refs(*todo[static_cast<size_t>(i)].second, extractor, cfg.loss);
        });
    }

    TrainHistory history;
    const int64_t n_pairs = static_cast<int64_t>(pairs.size());
    const int batch = std::max(1, cfg.opt.batch_size);
    std::vector<std::vector<T>> grad_slots(static_cast<size_t>(batch));
    std::vector<std::array<double, 3>> loss_slots(static_cast<size_t>(batch));
    std::vector<T> grad_total(static_cast<size_t>(purifier.params().total_numel()));

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        if (stop_after > 0 && epoch - start_epoch >= stop_after) break;
        const double lr = nn::cosine_lr(cfg.opt.lr, epoch, cfg.epochs);
        std::vector<int64_t> order(static_cast<size_t>(n_pairs));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(cfg.seed, 0x6f72646572ull, static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order.begin(), order.end());

        double ep_pixel = 0, ep_per = 0, ep_overall = 0;
        for (int64_t b0 = 0; b0 < n_pairs; b0 += batch) {
            const int64_t bsz = std::min<int64_t>(batch, n_pairs - b0);
            parallel_for(bsz, threads, [&](int64_t bi) {
                const TrainPair& pair = pairs[static_cast<size_t>(order[static_cast<size_t>(b0 + bi)])];
                const uint64_t step_seed = mix_seed(cfg.seed, 0x73746570ull,
                                                    static_cast<uint64_t>(epoch),
                                                    static_cast<uint64_t>(order[static_cast<size_t>(b0 + bi)]));
                const int gh = pair.adversarial.h / cfg.model.patch;
                const int gw = pair.adversarial.w / cfg.model.patch;
                SubsetPartition part = make_partition(gh * gw, cfg.model.subsets,
                                                      PartitionMode::Random, step_seed, gh, gw);
                nn::Graph<T> g(true);
                auto step = build_step_graph(g, purifier, extractor, cfg.loss,
                                             ref_cache.at(pair.clean_key), pair.adversarial, part,
                                             step_seed);
                ag::backward(step.overall);
                g.harvest_grads(purifier.params(), grad_slots[static_cast<size_t>(bi)]);
                loss_slots[static_cast<size_t>(bi)] = {double(step.pixel->value[0]),
                                                       double(step.perceptual->value[0]),
                                                       double(step.overall->value[0])};
            });
            std::fill(grad_total.begin(), grad_total.end(), T(0));
            for (int64_t bi = 0; bi < bsz; ++bi) {
                const auto& slot = grad_slots[static_cast<size_t>(bi)];
                for (size_t k = 0; k < grad_total.size(); ++k) grad_total[k] += slot[k];
                if (!std::isfinite(loss_slots[static_cast<size_t>(bi)][2]))
                    throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                                         ", step " + std::to_string(b0 / batch) + ", slot " +
                                         std::to_string(bi));
                ep_pixel += loss_slots[static_cast<size_t>(bi)][0];
                ep_per += loss_slots[static_cast<size_t>(bi)][1];
                ep_overall += loss_slots[static_cast<size_t>(bi)][2];
            }
            const T inv = T(1) / T(bsz);
            for (auto& gk : grad_total) gk *= inv;
            optimizer.step(lr, grad_total);
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.pixel = ep_pixel / double(n_pairs);
        m.perceptual = ep_per / double(n_pairs);
        m.overall = ep_overall / double(n_pairs);
        history.epochs.push_back(m);

        char name[64];
        std::snprintf(name, sizeof(name), "ckpt_epoch_%03d.impt", epoch);
        purifier.save(out_dir / name, {{"epoch", epoch}});
        save_train_state(out_dir / "trainstate.impt", purifier, optimizer, epoch + 1, cfg);
        write_text_file_atomic(out_dir / "metrics.csv", history.to_csv());
    }

    IMPURE_CHECK(extractor.fingerprint(probes) == extractor_before,
                 "extractor drift detected: feature fingerprint changed during training");

    purifier.save(out_dir / "purifier.impt", {{"epochs", cfg.epochs}});
    if (history.epochs.empty()) write_text_file_atomic(out_dir / "metrics.csv", history.to_csv());
    return history;
}

// Training state = model parameters + optimizer moments + next epoch.
template <typename T>
void save_train_state(const std::filesystem::path& path, const riae::Purifier<T>& purifier,
                      nn::AdamW<T>& optimizer, int next_epoch, const TrainConfig& cfg) {
    nn::ParamStore<T> state;
    for (const auto& e : purifier.params().entries()) state.add_shared(e.name, e.value);
    auto& m = state.add("__opt.m", {static_cast<int64_t>(optimizer.moment1().size())});
    auto& v = state.add("__opt.v", {static_cast<int64_t>(optimizer.moment2().size())});
    std::copy(optimizer.moment1().begin(), optimizer.moment1().end(), m.data().begin());
    std::copy(optimizer.moment2().begin(), optimizer.moment2().end(), v.data().begin());
    nn::save_checkpoint(path, "trainstate", cfg.model.to_json(), state,
                        {{"next_epoch", next_epoch},
                         {"adam_steps", optimizer.steps_taken()},
                         {"train_config_hash", nn::config_hash_of(cfg.to_json())}});
}

template <typename T>
int load_train_state(const std::filesystem::path& path, riae::Purifier<T>& purifier,
                     nn::AdamW<T>& optimizer) {
    nn::ParamStore<T> state;
    for (const auto& e : purifier.params().entries()) state.add_shared(e.name, e.value);
    state.add("__opt.m", {static_cast<int64_t>(optimizer.moment1().size())});
    state.add("__opt.v", {static_cast<int64_t>(optimizer.moment2().size())});
    auto hdr = nn::load_checkpoint(path, "trainstate", state);
    const auto& m = state.get("__opt.m").data();
    const auto& v = state.get("__opt.v").data();
    std::copy(m.begin(), m.end(), optimizer.moment1().begin());
    std::copy(v.begin(), v.end(), optimizer.moment2().begin());
    optimizer.set_steps_taken(hdr.extra.at("adam_steps").template get<int64_t>());
    return hdr.extra.at("next_epoch").template get<int>();
}

}  // namespace impure::training
