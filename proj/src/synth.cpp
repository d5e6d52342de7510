#include "impure/synth.hpp"

#include <algorithm>
#include <cmath>

#include "impure/rng.hpp"

namespace impure {

namespace {

struct Rgb {
    float r, g, b;
};

Rgb random_color(Rng& rng, float lo, float hi) {
    return {float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))};
}

// soft edge: 1 inside, 0 outside, linear ramp of ~1px around the boundary
float coverage(float signed_dist) { return std::clamp(0.5f - signed_dist, 0.f, 1.f); }

void blend(Image& img, int y, int x, const Rgb& c, float a) {
    if (a <= 0) return;
    img.at(y, x, 0) += a * (c.r - img.at(y, x, 0));
    img.at(y, x, 1) += a * (c.g - img.at(y, x, 1));
    img.at(y, x, 2) += a * (c.b - img.at(y, x, 2));
}

}  // namespace

const std::vector<std::string>& synth_class_names() {
    static const std::vector<std::string> names{"circle", "ring",    "square", "frame",
                                                "triangle", "hstripe", "vstripe", "checker",
                                                "cross",   "diagonal"};
    return names;
}

Image render_synth_sample(int class_id, uint64_t seed, int h, int w) {
    IMPURE_CHECK(class_id >= 0 && class_id < 10, "render_synth_sample: class_id out of range");
    Rng rng(seed, 0x73796e7468ull, static_cast<uint64_t>(class_id));

    // background: smooth two-color gradient, dark against a bright foreground
    Rgb bg0 = random_color(rng, 0.05f, 0.35f);
    Rgb bg1 = random_color(rng, 0.05f, 0.35f);
    Rgb fg = random_color(rng, 0.6f, 0.98f);
    bool vertical_grad = rng.uniform() < 0.5;

    Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float t = vertical_grad ? float(y) / float(h - 1) : float(x) / float(w - 1);
            img.at(y, x, 0) = bg0.r + t * (bg1.r - bg0.r);
            img.at(y, x, 1) = bg0.g + t * (bg1.g - bg0.g);
            img.at(y, x, 2) = bg0.b + t * (bg1.b - bg0.b);
        }

    const float cx = w / 2.f + float(rng.uniform(-3.0, 3.0));
    const float cy = h / 2.f + float(rng.uniform(-3.0, 3.0));

    switch (class_id) {
        case 0: {  // filled circle
            float r = float(rng.uniform(6.0, 11.0));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float d = std::hypot(x + 0.5f - cx, y + 0.5f - cy) - r;
                    blend(img, y, x, fg, coverage(d));
                }
            break;
        }
        case 1: {  // ring
            float r = float(rng.uniform(8.0, 12.0));
            float th = float(rng.uniform(2.5, 4.0));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float d = std::abs(std::hypot(x + 0.5f - cx, y + 0.5f - cy) - r) - th / 2;
                    blend(img, y, x, fg, coverage(d));
                }
            break;
        }
        case 2: {  // filled square
            float half = float(rng.uniform(5.0, 9.0));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float dx = std::abs(x + 0.5f - cx) - half;
                    float dy = std::abs(y + 0.5f - cy) - half;
                    blend(img, y, x, fg, coverage(std::max(dx, dy)));
                }
            break;
        }
        case 3: {  // square frame
            float half = float(rng.uniform(7.0, 11.0));
            float th = float(rng.uniform(2.0, 3.5));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float dx = std::abs(x + 0.5f - cx) - half;
                    float dy = std::abs(y + 0.5f - cy) - half;
                    float d = std::abs(std::max(dx, dy)) - th / 2;
                    blend(img, y, x, fg, coverage(d));
                }
            break;
        }
        case 4: {  // triangle (up or down)
            float size = float(rng.uniform(8.0, 12.0));
            float flip = rng.uniform() < 0.5 ? 1.f : -1.f;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float px = x + 0.5f - cx, py = flip * (y + 0.5f - cy);
                    // half-plane intersection for an isoceles triangle
                    float d1 = py - size * 0.6f;
                    float d2 = -py - size * 0.6f + std::abs(px) * 1.2f;
                    blend(img, y, x, fg, coverage(std::max(d1, d2)));
                }
            break;
        }
        case 5:    // horizontal stripes
        case 6: {  // vertical stripes
            int period = 6 + 2 * int(rng.index(3));  // 6, 8 or 10
            int phase = int(rng.index(static_cast<uint64_t>(period)));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    int v = class_id == 5 ? y : x;
                    if (((v + phase) / (period / 2)) % 2 == 0) blend(img, y, x, fg, 1.f);
                }
            break;
        }
        case 7: {  // checkerboard
            int cell = 5 + int(rng.index(4));  // 5..8
            int py = int(rng.index(static_cast<uint64_t>(cell)));
            int px = int(rng.index(static_cast<uint64_t>(cell)));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if ((((y + py) / cell) + ((x + px) / cell)) % 2 == 0) blend(img, y, x, fg, 1.f);
            break;
        }
        case 8: {  // plus / cross
            float arm = float(rng.uniform(10.0, 14.0));
            float th = float(rng.uniform(3.0, 5.0)) / 2;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float px = std::abs(x + 0.5f - cx), py = std::abs(y + 0.5f - cy);
                    float dh = std::max(px - arm, py - th);
                    float dv = std::max(py - arm, px - th);
                    blend(img, y, x, fg, coverage(std::min(dh, dv)));
                }
            break;
        }
        default: {  // diagonal X
            float th = float(rng.uniform(2.5, 4.0)) / 2;
            float arm = float(rng.uniform(10.0, 14.0));
            const float inv_sqrt2 = 0.70710678f;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float px = x + 0.5f - cx, py = y + 0.5f - cy;
                    float u = (px + py) * inv_sqrt2, v = (px - py) * inv_sqrt2;
                    float d1 = std::max(std::abs(u) - th, std::abs(v) - arm);
                    float d2 = std::max(std::abs(v) - th, std::abs(u) - arm);
                    blend(img, y, x, fg, coverage(std::min(d1, d2)));
                }
            break;
        }
    }

    // mild sensor-style noise
    float sigma = float(rng.uniform(0.004, 0.018));
    for (auto& v : img.data) v = std::clamp(v + sigma * float(rng.normal()), 0.f, 1.f);
    return img;
}

DatasetManifest build_synthetic_dataset(const std::filesystem::path& root, const std::string& split,
                                        int per_class, uint64_t seed, int h, int w) {
    IMPURE_CHECK(per_class >= 1, "build_synthetic_dataset: per_class must be >= 1");
    DatasetManifest m;
    m.root = root;
    m.split = split;
    m.image_h = h;
    m.image_w = w;
    m.class_names = synth_class_names();

    uint64_t split_stream = fnv1a64(split);
    for (int cls = 0; cls < 10; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            uint64_t s = mix_seed(seed, split_stream, static_cast<uint64_t>(cls),
                                  static_cast<uint64_t>(i));
            Image img = render_synth_sample(cls, s, h, w);
            char name[64];
            std::snprintf(name, sizeof(name), "%05d.ppm", i);
            std::filesystem::path rel =
                std::filesystem::path(split) / m.class_names[static_cast<size_t>(cls)] / name;
            write_ppm(root / rel, img);
            ManifestEntry e;
            e.rel_path = rel.generic_string();
            e.label = cls;
            e.class_name = m.class_names[static_cast<size_t>(cls)];
            m.entries.push_back(std::move(e));
        }
    }
    m.save(root / (split + "_manifest.json"));
    return m;
}

}  // namespace impure
