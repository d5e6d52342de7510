#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "impure/classifier.hpp"
#include "impure/manifest.hpp"
#include "impure/parallel.hpp"
#include "impure/riae.hpp"

namespace impure::eval {

// Preprocessing defense plugged in front of the classifier. sample_seed is
// derived by the harness so repeated runs are reproducible.
class PurifierHandle {
  public:
    virtual ~PurifierHandle() = default;
    virtual Image purify(const Image& img, uint64_t sample_seed) const = 0;
    virtual std::string id() const = 0;
};

class IdentityPurifier final : public PurifierHandle {
  public:
    Image purify(const Image& img, uint64_t) const override { return img; }
    std::string id() const override { return "identity"; }
};

class ConstantPurifier final : public PurifierHandle {
  public:
    explicit ConstantPurifier(Image img) : img_(std::move(img)) {}
    Image purify(const Image&, uint64_t) const override { return img_; }
    std::string id() const override { return "constant"; }

  private:
    Image img_;
};

template <typename T>
class RiaePurifier final : public PurifierHandle {
  public:
    RiaePurifier(const riae::Purifier<T>& model, PartitionMode mode)
        : model_(&model), mode_(mode) {}
    Image purify(const Image& img, uint64_t sample_seed) const override {
        return model_->purify(img, mode_, sample_seed);
    }
    std::string id() const override {
        return "riae:" + model_->config_hash() + ":" + to_string(mode_);
    }

  private:
    const riae::Purifier<T>* model_;
    PartitionMode mode_;
};

template <typename T>
double top1_accuracy(const TargetModel<T>& model, const std::vector<Image>& images,
                     const std::vector<int>& labels) {
    IMPURE_CHECK(!images.empty(), "top1_accuracy: empty evaluation set");
    IMPURE_CHECK(images.size() == labels.size(), "top1_accuracy: image/label size mismatch");
    auto preds = model.predict(images);
    int64_t correct = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++correct;
    return double(correct) / double(images.size());
}

struct DefenseRow {
    std::string attack;  // "Clean" or an attack tag
    double no_defense_acc = 0;
    double defense_acc = 0;
    int n_samples = 0;
    bool seen = true;  // agnostic protocol marker
};

struct PredictionRecord {
    std::string path;
    std::string attack;
    int label = -1;
    int pred_no_defense = -1;
    int pred_defense = -1;
};

struct DefenseReport {
    std::vector<DefenseRow> rows;
    std::vector<PredictionRecord> predictions;
    std::string model_id;
    std::string purifier_id;
    std::vector<std::string> warnings;

    const DefenseRow* find(const std::string& attack) const {
        for (const auto& r : rows)
            if (r.attack == attack) return &r;
        return nullptr;
    }

    std::string rows_csv(bool with_seen_column = false) const {
        std::string out = with_seen_column ? "attack,no_defense_acc,defense_acc,n_samples,seen\n"
                                           : "attack,no_defense_acc,defense_acc,n_samples\n";
        char line[192];
        for (const auto& r : rows) {
            if (with_seen_column)
                std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%d,%s\n", r.attack.c_str(),
                              r.no_defense_acc, r.defense_acc, r.n_samples,
                              r.seen ? "seen" : "unseen");
            else
                std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%d\n", r.attack.c_str(),
                              r.no_defense_acc, r.defense_acc, r.n_samples);
            out += line;
        }
        return out;
    }

    std::string predictions_csv() const {
        std::string out = "path,attack,label,pred_no_defense,pred_defense\n";
        char line[512];
        for (const auto& p : predictions) {
            std::snprintf(line, sizeof(line), "%s,%s,%d,%d,%d\n", p.path.c_str(),
                          p.attack.c_str(), p.label, p.pred_no_defense, p.pred_defense);
            out += line;
        }
        return out;
    }
};

// Evaluates Clean plus every attack column of the manifest: top-1 accuracy on
// the raw images and on purify(image). Rows whose adversarial files are
// incomplete are skipped with a warning. Deterministic per seed.
template <typename T>
DefenseReport evaluate_defense(const TargetModel<T>& model, const PurifierHandle& purifier,
                               const DatasetManifest& manifest, uint64_t seed, int threads = 0) {
    DefenseReport report;
    report.purifier_id = purifier.id();
    threads = resolve_threads(threads);
    IMPURE_CHECK(!manifest.entries.empty(), "evaluate_defense: empty manifest");

    std::vector<std::string> row_tags{"Clean"};
    for (const auto& [tag, meta] : manifest.attacks) row_tags.push_back(tag);

    for (const auto& tag : row_tags) {
        const bool clean_row = tag == "Clean";
        std::vector<std::string> rels;
        bool complete = true;
        for (const auto& e : manifest.entries) {
            if (clean_row) {
                rels.push_back(e.rel_path);
                continue;
            }
            auto it = e.adv_paths.find(tag);
            if (it == e.adv_paths.end() || !std::filesystem::exists(manifest.resolve(it->second))) {
                complete = false;
                break;
            }
            rels.push_back(it->second);
        }
        if (!complete) {
            report.warnings.push_back("row skipped, missing adversarial files: " + tag);
            continue;
        }

        const size_t n = manifest.entries.size();
        std::vector<int> labels(n), pred_raw(n), pred_def(n);
        std::vector<Image> raw(n), purified(n);
        parallel_for(static_cast<int64_t>(n), threads, [&](int64_t i) {
            const auto& e = manifest.entries[static_cast<size_t>(i)];
            labels[static_cast<size_t>(i)] = e.label;
            Image img = load_image(manifest.resolve(rels[static_cast<size_t>(i)]),
                                   manifest.image_h, manifest.image_w);
            uint64_t sample_seed = mix_seed(seed, fnv1a64(tag), static_cast<uint64_t>(i));
            purified[static_cast<size_t>(i)] = purifier.purify(img, sample_seed);
            raw[static_cast<size_t>(i)] = std::move(img);
        });
        parallel_for(static_cast<int64_t>(n), threads, [&](int64_t i) {
            pred_raw[static_cast<size_t>(i)] =
                model.predict({raw[static_cast<size_t>(i)]})[0];
            pred_def[static_cast<size_t>(i)] =
                model.predict({purified[static_cast<size_t>(i)]})[0];
        });

        DefenseRow row;
        row.attack = tag;
        row.n_samples = static_cast<int>(n);
        int64_t ok_raw = 0, ok_def = 0;
        for (size_t i = 0; i < n; ++i) {
            if (pred_raw[i] == labels[i]) ++ok_raw;
            if (pred_def[i] == labels[i]) ++ok_def;
            report.predictions.push_back(
                {rels[i], tag, labels[i], pred_raw[i], pred_def[i]});
        }
        row.no_defense_acc = double(ok_raw) / double(n);
        row.defense_acc = double(ok_def) / double(n);
        report.rows.push_back(row);
    }
    return report;
}

// Writes report.csv, predictions.csv and meta.json under out_dir.
inline void write_report(const DefenseReport& report, const std::filesystem::path& out_dir,
                         const nlohmann::json& meta_extra = nlohmann::json::object(),
                         bool with_seen_column = false) {
    write_text_file_atomic(out_dir / "report.csv", report.rows_csv(with_seen_column));
    write_text_file_atomic(out_dir / "predictions.csv", report.predictions_csv());
    nlohmann::json meta{{"model_id", report.model_id},
                        {"purifier_id", report.purifier_id},
                        {"warnings", report.warnings}};
    for (auto& [k, v] : meta_extra.items()) meta[k] = v;
    write_text_file_atomic(out_dir / "meta.json", meta.dump(2) + "\n");
}

}  // namespace impure::eval
