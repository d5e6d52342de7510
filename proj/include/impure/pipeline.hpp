#pragma once

#include "impure/attacks.hpp"
#include "impure/evalharness.hpp"
#include "impure/synth.hpp"
#include "impure/training.hpp"

namespace impure::pipeline {

// Builds the adversarial cache for every (entry, attack): only entries the
// model classifies correctly are kept; adversarial images are stored as
// float32 PFM files under <out_root>/adv/<tag>/<split>/<class>/. Attacks that
// fail numerically are recorded as notes and that column is left empty.
template <typename T>
DatasetManifest build_adversarial_dataset(const DatasetManifest& manifest,
                                          const std::vector<AttackMeta>& attack_list,
                                          const TargetModel<T>& model,
                                          const std::filesystem::path& out_root, int threads = 0) {
    namespace fs = std::filesystem;
    threads = resolve_threads(threads);
    for (size_t a = 0; a < attack_list.size(); ++a) {
        IMPURE_CHECK(!attack_list[a].tag.empty(), "attack tag must not be empty");
        IMPURE_CHECK(!manifest.attacks.count(attack_list[a].tag),
                     "attack tag already in manifest: " << attack_list[a].tag);
        for (size_t b = a + 1; b < attack_list.size(); ++b)
            IMPURE_CHECK(attack_list[a].tag != attack_list[b].tag,
                         "duplicate attack tag: " << attack_list[a].tag);
    }

    struct Slot {
        bool keep = false;
        std::map<std::string, std::string> adv;
        std::vector<std::string> notes;
    };
    std::vector<Slot> slots(manifest.entries.size());

    parallel_for(static_cast<int64_t>(manifest.entries.size()), threads, [&](int64_t i) {
        const auto& e = manifest.entries[static_cast<size_t>(i)];
        Slot& slot = slots[static_cast<size_t>(i)];
        Image clean = load_image(manifest.resolve(e.rel_path), manifest.image_h, manifest.image_w);
        if (model.predict({clean})[0] != e.label) {
            slot.notes.push_back("excluded (misclassified): " + e.rel_path);
            return;
        }
        slot.keep = true;
        for (const auto& meta : attack_list) {
            attacks::AttackConfig cfg;
            cfg.epsilon = meta.epsilon;
            cfg.alpha = meta.alpha;
            cfg.steps = meta.steps;
            cfg.random_start = meta.random_start;
            cfg.momentum_decay = meta.momentum_decay;
            cfg.seed = mix_seed(meta.seed, fnv1a64(meta.tag), static_cast<uint64_t>(i));
            try {
                Image adv = attacks::run_attack(meta.method, model, {clean}, {e.label}, cfg)[0];
                float dist = linf_distance(adv, clean);
                IMPURE_CHECK(dist <= meta.epsilon + 1e-6f, "attack exceeded budget");
                fs::path rel = fs::path("adv") / meta.tag /
                               fs::path(e.rel_path).replace_extension(".pfm");
                write_pfm(out_root / rel, adv);
                slot.adv[meta.tag] = rel.generic_string();
            } catch (const std::exception& ex) {
                slot.notes.push_back("skipped " + meta.tag + " for " + e.rel_path + ": " +
                                     ex.what());
            }
        }
    });

    DatasetManifest out = manifest;
    out.root = out_root;
    out.entries.clear();
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        for (const auto& note : slots[i].notes) out.notes.push_back(note);
        if (!slots[i].keep) continue;
        ManifestEntry e = manifest.entries[i];
        for (const auto& [tag, rel] : slots[i].adv) e.adv_paths[tag] = rel;
        out.entries.push_back(std::move(e));
    }
    for (const auto& meta : attack_list) out.attacks[meta.tag] = meta;
    return out;
}

struct ClassifierTrainResult {
    double final_train_acc = 0;
    double final_val_acc = 0;
    std::vector<double> epoch_loss;
};

// Plain supervised training of the desk classifier with AdamW.
template <typename T>
ClassifierTrainResult train_classifier(SmallConvNet<T>& net, const DatasetManifest& train_manifest,
                                       const DatasetManifest* val_manifest, int epochs, double lr,
                                       int batch, uint64_t seed, int threads = 0) {
    threads = resolve_threads(threads);
    const int64_t n = static_cast<int64_t>(train_manifest.entries.size());
    IMPURE_CHECK(n > 0, "train_classifier: empty manifest");

    std::vector<Image> images(static_cast<size_t>(n));
    std::vector<int> labels(static_cast<size_t>(n));
    parallel_for(n, threads, [&](int64_t i) {
        const auto& e = train_manifest.entries[static_cast<size_t>(i)];
        images[static_cast<size_t>(i)] =
            load_image(train_manifest.resolve(e.rel_path), train_manifest.image_h,
                       train_manifest.image_w);
        labels[static_cast<size_t>(i)] = e.label;
    });

    nn::AdamW<T> optimizer(net.params(), {lr, 0.9, 0.999, 1e-8, 1e-4});
    ClassifierTrainResult result;
    std::vector<std::vector<T>> grad_slots(static_cast<size_t>(batch));
    std::vector<double> loss_slots(static_cast<size_t>(batch));
    std::vector<T> grad_total(static_cast<size_t>(net.params().total_numel()));

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(seed, 0x636c66736866ull, static_cast<uint64_t>(epoch));
        rng.shuffle(order.begin(), order.end());
        double ep_loss = 0;
        for (int64_t b0 = 0; b0 < n; b0 += batch) {
            const int64_t bsz = std::min<int64_t>(batch, n - b0);
            parallel_for(bsz, threads, [&](int64_t bi) {
                const int64_t i = order[static_cast<size_t>(b0 + bi)];
                nn::Graph<T> g(true);
                auto fwd = net.build(g, g.input(image_to_tensor<T>(images[static_cast<size_t>(i)]), false),
                                     true);
                auto loss = ag::cross_entropy_mean(fwd.logits, {labels[static_cast<size_t>(i)]});
                ag::backward(loss);
                g.harvest_grads(net.params(), grad_slots[static_cast<size_t>(bi)]);
                loss_slots[static_cast<size_t>(bi)] = double(loss->value[0]);
            });
            std::fill(grad_total.begin(), grad_total.end(), T(0));
            for (int64_t bi = 0; bi < bsz; ++bi) {
                for (size_t k = 0; k < grad_total.size(); ++k)
                    grad_total[k] += grad_slots[static_cast<size_t>(bi)][k];
                ep_loss += loss_slots[static_cast<size_t>(bi)];
            }
            const T inv = T(1) / T(bsz);
            for (auto& gk : grad_total) gk *= inv;
            optimizer.step(lr, grad_total);
        }
        result.epoch_loss.push_back(ep_loss / double(n));
    }

    result.final_train_acc = eval::top1_accuracy(net, images, labels);
    if (val_manifest && !val_manifest->entries.empty()) {
        std::vector<Image> vimages(val_manifest->entries.size());
        std::vector<int> vlabels(val_manifest->entries.size());
        parallel_for(static_cast<int64_t>(vimages.size()), threads, [&](int64_t i) {
            const auto& e = val_manifest->entries[static_cast<size_t>(i)];
            vimages[static_cast<size_t>(i)] = load_image(val_manifest->resolve(e.rel_path),
                                                         val_manifest->image_h, val_manifest->image_w);
            vlabels[static_cast<size_t>(i)] = e.label;
        });
        result.final_val_acc = eval::top1_accuracy(net, vimages, vlabels);
    }
    return result;
}

// Agnostic-attack protocol: adversarial training data comes from the seen
// attacks only; evaluation covers seen and unseen attacks with rows marked.
template <typename T>
eval::DefenseReport run_agnostic_protocol(const DatasetManifest& train_clean,
                                          const DatasetManifest& test_clean,
                                          const std::vector<AttackMeta>& seen,
                                          const std::vector<AttackMeta>& unseen,
                                          const TargetModel<T>& model,
                                          const SmallConvNet<T>& extractor,
                                          riae::Purifier<T>& purifier, training::TrainConfig cfg,
                                          const std::filesystem::path& work_dir, uint64_t seed,
                                          int threads = 0) {
    for (const auto& s : seen)
        for (const auto& u : unseen)
            IMPURE_CHECK(s.tag != u.tag, "agnostic protocol: seen/unseen tags overlap: " << s.tag);

    DatasetManifest train_adv =
        build_adversarial_dataset(train_clean, seen, model, work_dir / "train", threads);
    train_adv.save(work_dir / "train" / "train_adv_manifest.json");

    cfg.threads = threads;
    cfg.out_dir = (work_dir / "run").string();
    auto pairs = training::load_pairs(train_adv, {});
    training::train(std::move(pairs), purifier, extractor, cfg);

    std::vector<AttackMeta> all = seen;
    all.insert(all.end(), unseen.begin(), unseen.end());
    DatasetManifest test_adv =
        build_adversarial_dataset(test_clean, all, model, work_dir / "test", threads);
    test_adv.save(work_dir / "test" / "test_adv_manifest.json");

    eval::RiaePurifier<T> handle(purifier, PartitionMode::Uniform);
    auto report = eval::evaluate_defense(model, handle, test_adv, seed, threads);
    for (auto& row : report.rows) {
        row.seen = true;
        for (const auto& u : unseen)
            if (row.attack == u.tag) row.seen = false;
    }
    return report;
}

}  // namespace impure::pipeline
