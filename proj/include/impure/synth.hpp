#pragma once

#include "impure/image.hpp"
#include "impure/manifest.hpp"

namespace impure {

// Procedural 10-class 32x32 shape/texture dataset used as the desk-scale
// stand-in for a real image corpus. Classes are distinguished by global
// structure (shape family, stripe orientation, cell pattern) so they survive
// patch-level reconstruction.
const std::vector<std::string>& synth_class_names();

Image render_synth_sample(int class_id, uint64_t seed, int h = 32, int w = 32);

// Writes <root>/<split>/<class>/<index>.ppm for every class and a manifest at
// <root>/<split>_manifest.json; returns the manifest.
DatasetManifest build_synthetic_dataset(const std::filesystem::path& root, const std::string& split,
                                        int per_class, uint64_t seed, int h = 32, int w = 32);

}  // namespace impure
