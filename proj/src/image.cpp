#include "impure/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace impure {

namespace {

// Next whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (!std::isspace(ch)) {
            tok.push_back(static_cast<char>(ch));
            break;
        }
    }
    while ((ch = in.get()) != EOF && !std::isspace(ch)) tok.push_back(static_cast<char>(ch));
    return tok;
}

int parse_int(std::istream& in, const std::string& what, const std::string& path) {
    std::string tok = next_token(in);
    try {
        size_t pos = 0;
        int v = std::stoi(tok, &pos);
        if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DecodeError("bad " + what + " in " + path);
    }
}

Image read_pnm(std::istream& in, bool gray, const std::string& path) {
    int w = parse_int(in, "width", path);
    int h = parse_int(in, "height", path);
    int maxval = parse_int(in, "maxval", path);
    if (maxval != 255) throw DecodeError("unsupported maxval " + std::to_string(maxval) + " in " + path);
    // single whitespace byte already consumed by tokenizer
    const int src_c = gray ? 1 : 3;
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * src_c);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size()) throw DecodeError("truncated pixel data in " + path);
    Image img(h, w, 3);
    for (size_t i = 0; i < static_cast<size_t>(w) * h; ++i)
        for (int ch = 0; ch < 3; ++ch)
            img.data[i * 3 + ch] = float(raw[i * src_c + (gray ? 0 : ch)]) / 255.f;
    return img;
}

Image read_pfm(std::istream& in, bool gray, const std::string& path) {
    int w = parse_int(in, "width", path);
    int h = parse_int(in, "height", path);
    std::string scale_tok = next_token(in);
    double scale = 0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        throw DecodeError("bad scale in " + path);
    }
    if (scale == 0) throw DecodeError("zero scale in " + path);
    const bool little_endian = scale < 0;
    const int src_c = gray ? 1 : 3;
    std::vector<float> raw(static_cast<size_t>(w) * h * src_c);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (static_cast<size_t>(in.gcount()) != raw.size() * 4) throw DecodeError("truncated pixel data in " + path);
    if (little_endian != (std::endian::native == std::endian::little)) {
        for (auto& v : raw) {
            uint32_t u;
            std::memcpy(&u, &v, 4);
            u = __builtin_bswap32(u);
            std::memcpy(&v, &u, 4);
        }
    }
    Image img(h, w, 3);
    // PFM stores rows bottom-to-top
    for (int y = 0; y < h; ++y) {
        const float* row = raw.data() + static_cast<size_t>(h - 1 - y) * w * src_c;
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img.at(y, x, ch) = std::clamp(row[x * src_c + (gray ? 0 : ch)], 0.f, 1.f);
    }
    return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in) throw DecodeError("empty image file " + path.string());
    if (m0 == 'P' && m1 == '6') return read_pnm(in, false, path.string());
    if (m0 == 'P' && m1 == '5') return read_pnm(in, true, path.string());
    if (m0 == 'P' && m1 == 'F') return read_pfm(in, false, path.string());
    if (m0 == 'P' && m1 == 'f') return read_pfm(in, true, path.string());
    throw DecodeError("unsupported image format in " + path.string() + " (expect PPM/PGM/PFM)");
}

Image load_image(const std::filesystem::path& path, int target_h, int target_w) {
    Image img = read_image(path);
    if (img.h == target_h && img.w == target_w) return img;
    return resize_bilinear(img, target_h, target_w);
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    IMPURE_CHECK(img.c == 3, "write_ppm: expected 3 channels");
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << img.w << ' ' << img.h << "\n255\n";
    std::vector<unsigned char> raw(img.data.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        float v = std::clamp(img.data[i], 0.f, 1.f);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.f));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("short write to " + path.string());
}

void write_pfm(const std::filesystem::path& path, const Image& img) {
    IMPURE_CHECK(img.c == 3, "write_pfm: expected 3 channels");
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    const char* scale = (std::endian::native == std::endian::little) ? "-1.0" : "1.0";
    out << "PF\n" << img.w << ' ' << img.h << "\n" << scale << "\n";
    for (int y = img.h - 1; y >= 0; --y)
        out.write(reinterpret_cast<const char*>(img.data.data() + static_cast<size_t>(y) * img.w * 3),
                  static_cast<std::streamsize>(sizeof(float) * img.w * 3));
    if (!out) throw IoError("short write to " + path.string());
}

void write_image(const std::filesystem::path& path, const Image& img) {
    auto ext = path.extension().string();
    if (ext == ".ppm")
        write_ppm(path, img);
    else if (ext == ".pfm")
        write_pfm(path, img);
    else
        throw ContractViolation("write_image: unsupported extension " + ext);
}

Image resize_bilinear(const Image& img, int target_h, int target_w) {
    Image out(target_h, target_w, img.c);
    const double sy = double(img.h) / target_h, sx = double(img.w) / target_w;
    for (int y = 0; y < target_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = std::clamp(int(std::floor(fy)), 0, img.h - 1);
        int y1 = std::min(y0 + 1, img.h - 1);
        float wy = float(std::clamp(fy - y0, 0.0, 1.0));
        for (int x = 0; x < target_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = std::clamp(int(std::floor(fx)), 0, img.w - 1);
            int x1 = std::min(x0 + 1, img.w - 1);
            float wx = float(std::clamp(fx - x0, 0.0, 1.0));
            for (int ch = 0; ch < img.c; ++ch) {
                float top = img.at(y0, x0, ch) * (1 - wx) + img.at(y0, x1, ch) * wx;
                float bot = img.at(y1, x0, ch) * (1 - wx) + img.at(y1, x1, ch) * wx;
                out.at(y, x, ch) = std::clamp(top * (1 - wy) + bot * wy, 0.f, 1.f);
            }
        }
    }
    return out;
}

PatchSequence to_patches(const Image& img, int patch_side) {
    IMPURE_CHECK(patch_side > 0 && img.h % patch_side == 0 && img.w % patch_side == 0,
                 "to_patches: " << patch_side << " does not divide " << img.h << "x" << img.w);
    const int p = patch_side, gw = img.w / p, gh = img.h / p;
    PatchSequence ps;
    ps.n = gh * gw;
    ps.p = p;
    ps.c = img.c;
    ps.data.resize(static_cast<size_t>(ps.n) * ps.patch_dim());
    size_t o = 0;
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx)
            for (int py = 0; py < p; ++py) {
                const float* src = img.data.data() +
                                   ((static_cast<size_t>(gy) * p + py) * img.w + static_cast<size_t>(gx) * p) * img.c;
                std::copy(src, src + static_cast<size_t>(p) * img.c, ps.data.begin() + o);
                o += static_cast<size_t>(p) * img.c;
            }
    return ps;
}

Image from_patches(const PatchSequence& patches, int h, int w) {
    const int p = patches.p;
    IMPURE_CHECK(p > 0 && h % p == 0 && w % p == 0 &&
                     patches.n == (h / p) * (w / p),
                 "from_patches: shape mismatch");
    const int gw = w / p;
    Image img(h, w, patches.c);
    size_t o = 0;
    for (int k = 0; k < patches.n; ++k) {
        const int gy = k / gw, gx = k % gw;
        for (int py = 0; py < p; ++py) {
            float* dst = img.data.data() +
                         ((static_cast<size_t>(gy) * p + py) * w + static_cast<size_t>(gx) * p) * img.c;
            std::copy(patches.data.begin() + o, patches.data.begin() + o + static_cast<size_t>(p) * img.c, dst);
            o += static_cast<size_t>(p) * img.c;
        }
    }
    return img;
}

}  // namespace impure
