#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "impure/common.hpp"

namespace impure {

// One configured attack column in a manifest.
struct AttackMeta {
    std::string tag;      // column name, e.g. "pgd" or "pgd_a1s20"
    std::string method;   // fgsm | bim | pgd | mifgsm | external
    double epsilon = 0;
    double alpha = 0;
    int steps = 0;
    bool random_start = false;
    double momentum_decay = 0;
    uint64_t seed = 0;
};

struct ManifestEntry {
    std::string rel_path;  // clean image, relative to the manifest root
    int label = -1;
    std::string class_name;
    std::map<std::string, std::string> adv_paths;  // attack tag -> relative path
};

// On-disk layout: <root>/<split>/<class_name>/<image> for clean images and
// <root>/adv/<attack_tag>/<split>/<class_name>/<image> for the adversarial
// cache. The manifest itself is a JSON file next to the data.
struct DatasetManifest {
    std::filesystem::path root;  // directory containing the manifest file
    std::string split;
    int image_h = 0, image_w = 0;
    std::vector<std::string> class_names;
    std::vector<ManifestEntry> entries;
    std::map<std::string, AttackMeta> attacks;
    std::vector<std::string> notes;  // skip reasons and other build remarks

    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }

    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);

    // Checks that every referenced file exists; returns missing paths.
    std::vector<std::string> missing_files() const;
};

}  // namespace impure
