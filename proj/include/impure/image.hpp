#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "impure/common.hpp"

namespace impure {

// RGB raster, row-major [H, W, C], float values in [0, 1].
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h_, int w_, int c_, float fill = 0.f)
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

    float& at(int y, int x, int ch) {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    float at(int y, int x, int ch) const {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    size_t numel() const { return data.size(); }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Flattened patch rows [N, P*P*C]; patch k covers grid cell
// (k / (W/P), k % (W/P)), pixels in (py, px, ch) order.
struct PatchSequence {
    int n = 0, p = 0, c = 0;
    std::vector<float> data;
    int patch_dim() const { return p * p * c; }
};

// Reads a PPM (P6/P5, 8-bit) or PFM (PF/Pf, float32) file.
Image read_image(const std::filesystem::path& path);
// read_image + bilinear resize to (target_h, target_w), values in [0, 1].
Image load_image(const std::filesystem::path& path, int target_h, int target_w);

void write_ppm(const std::filesystem::path& path, const Image& img);
void write_pfm(const std::filesystem::path& path, const Image& img);
// Dispatches on extension (.ppm / .pfm).
void write_image(const std::filesystem::path& path, const Image& img);

Image resize_bilinear(const Image& img, int target_h, int target_w);

PatchSequence to_patches(const Image& img, int patch_side);
Image from_patches(const PatchSequence& patches, int h, int w);

inline float linf_distance(const Image& a, const Image& b) {
    IMPURE_CHECK(a.same_shape(b), "linf_distance: shape mismatch");
    float m = 0.f;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace impure
