#include <doctest.h>

#include <filesystem>
#include <set>

#include "impure/image.hpp"
#include "impure/partition.hpp"
#include "impure/rng.hpp"
#include "impure/synth.hpp"

using namespace impure;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
    auto p = fs::temp_directory_path() / "impure_imaging_test";
    fs::create_directories(p);
    return p;
}

Image random_image(int h, int w, uint64_t seed) {
    Image img(h, w, 3);
    Rng rng(seed);
    for (auto& v : img.data) v = float(rng.uniform());
    return img;
}
}  // namespace

TEST_CASE("ppm round trip and 8-bit scaling") {
    auto dir = temp_dir();
    Image img(4, 5, 3);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(i % 256) / 255.f;
    write_ppm(dir / "a.ppm", img);
    Image back = read_image(dir / "a.ppm");
    REQUIRE(back.h == 4);
    REQUIRE(back.w == 5);
    for (size_t i = 0; i < img.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-7));

    // solid black / solid white extremes
    write_ppm(dir / "black.ppm", Image(3, 3, 3, 0.f));
    write_ppm(dir / "white.ppm", Image(3, 3, 3, 1.f));
    for (float v : read_image(dir / "black.ppm").data) CHECK(v == 0.f);
    for (float v : read_image(dir / "white.ppm").data) CHECK(v == 1.f);
}

TEST_CASE("pfm stores float pixels exactly") {
    auto dir = temp_dir();
    Image img = random_image(6, 4, 7);
    write_pfm(dir / "a.pfm", img);
    Image back = read_image(dir / "a.pfm");
    CHECK(back.data == img.data);

    // identical content twice -> identical bytes
    write_pfm(dir / "b.pfm", img);
    CHECK(read_text_file(dir / "a.pfm") == read_text_file(dir / "b.pfm"));
}

TEST_CASE("load_image errors") {
    auto dir = temp_dir();
    CHECK_THROWS_AS(read_image(dir / "missing.ppm"), IoError);
    write_text_file_atomic(dir / "bad.ppm", "P6\n4 4\n255\nxx");
    CHECK_THROWS_AS(read_image(dir / "bad.ppm"), DecodeError);
    write_text_file_atomic(dir / "alien.ppm", "GIF89a...");
    CHECK_THROWS_AS(read_image(dir / "alien.ppm"), DecodeError);
}

TEST_CASE("load_image resizes to target") {
    auto dir = temp_dir();
    write_ppm(dir / "big.ppm", random_image(16, 16, 3));
    Image img = load_image(dir / "big.ppm", 8, 8);
    CHECK(img.h == 8);
    CHECK(img.w == 8);
    for (float v : img.data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}

TEST_CASE("patch round trip is bit exact") {
    for (auto [h, w, p] : {std::tuple{32, 32, 4}, {32, 32, 16}, {8, 16, 4}, {4, 4, 4}}) {
        Image img = random_image(h, w, uint64_t(h * 100 + w + p));
        PatchSequence ps = to_patches(img, p);
        CHECK(ps.n == (h / p) * (w / p));
        Image back = from_patches(ps, h, w);
        CHECK(back.data == img.data);
    }
    // 224/16 patch count from the paper-scale configuration
    Image big(224, 224, 3);
    CHECK(to_patches(big, 16).n == 196);
    // constant image -> identical patches
    Image cimg(8, 8, 3, 0.25f);
    PatchSequence cps = to_patches(cimg, 4);
    for (int k = 1; k < cps.n; ++k)
        for (int d = 0; d < cps.patch_dim(); ++d)
            CHECK(cps.data[size_t(k) * cps.patch_dim() + d] == cps.data[size_t(d)]);
    CHECK_THROWS_AS(to_patches(cimg, 3), ContractViolation);
}

TEST_CASE("patch grid order is row-major") {
    // 2x2 grid of constant 1x1-value patches with distinct values
    Image img(4, 4, 3);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = float((y / 2) * 2 + (x / 2));
    PatchSequence ps = to_patches(img, 2);
    for (int k = 0; k < 4; ++k) CHECK(ps.data[size_t(k) * ps.patch_dim()] == float(k));
}

TEST_CASE("partition validity across modes and seeds") {
    for (uint64_t seed : {0ull, 1ull, 42ull}) {
        for (auto [n, s, gh, gw] : {std::tuple{196, 4, 14, 14}, {64, 4, 8, 8}, {16, 4, 4, 4},
                                    {12, 3, 3, 4}, {64, 1, 8, 8}}) {
            for (auto mode : {PartitionMode::Random, PartitionMode::Uniform}) {
                auto part = make_partition(n, s, mode, seed, gh, gw);
                CHECK(part.subset_size() == n / s);
                std::set<int> seen;
                for (const auto& sub : part.subsets) {
                    CHECK(int(sub.size()) == n / s);
                    seen.insert(sub.begin(), sub.end());
                }
                CHECK(int(seen.size()) == n);  // disjoint cover
                for (int i = 0; i < n; ++i)
                    CHECK(part.subsets[size_t(part.assignment[size_t(i)])].end() !=
                          std::find(part.subsets[size_t(part.assignment[size_t(i)])].begin(),
                                    part.subsets[size_t(part.assignment[size_t(i)])].end(), i));
            }
        }
    }
}

TEST_CASE("partition determinism and contract errors") {
    auto a = make_partition(64, 4, PartitionMode::Random, 9, 8, 8);
    auto b = make_partition(64, 4, PartitionMode::Random, 9, 8, 8);
    CHECK(a.assignment == b.assignment);
    auto c = make_partition(64, 4, PartitionMode::Random, 10, 8, 8);
    CHECK(a.assignment != c.assignment);

    CHECK_THROWS_AS(make_partition(10, 3, PartitionMode::Random, 0), ContractViolation);
    // no (a,b) with a|3, b|5 and a*b=4
    CHECK_THROWS_AS(make_partition(15, 4, PartitionMode::Uniform, 0, 3, 5), ContractViolation);
}

TEST_CASE("uniform partition interleaves the grid") {
    // 4x4 grid, S=4 -> a=b=2; subset of (r,c) is (r%2)*2 + (c%2)
    auto part = make_partition(16, 4, PartitionMode::Uniform, 0, 4, 4);
    CHECK(part.subsets[0] == std::vector<int>{0, 2, 8, 10});
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) CHECK(part.assignment[size_t(r * 4 + c)] == (r % 2) * 2 + (c % 2));

    // S=1 degenerate: one subset holding everything
    auto whole = make_partition(16, 1, PartitionMode::Random, 3, 4, 4);
    CHECK(whole.subsets[0].size() == 16);
}

TEST_CASE("synthetic dataset renders deterministic classifiable images") {
    for (int cls = 0; cls < 10; ++cls) {
        Image a = render_synth_sample(cls, 123);
        Image b = render_synth_sample(cls, 123);
        CHECK(a.data == b.data);
        for (float v : a.data) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
    }
    CHECK(render_synth_sample(0, 1).data != render_synth_sample(0, 2).data);
}

TEST_CASE("synthetic dataset build writes manifest and files") {
    auto dir = temp_dir() / "synth";
    fs::remove_all(dir);
    auto manifest = build_synthetic_dataset(dir, "mini", 2, 77);
    CHECK(manifest.entries.size() == 20);
    CHECK(manifest.missing_files().empty());
    auto loaded = DatasetManifest::load(dir / "mini_manifest.json");
    CHECK(loaded.entries.size() == 20);
    CHECK(loaded.class_names == synth_class_names());
    CHECK(loaded.image_h == 32);
    Image img = load_image(loaded.resolve(loaded.entries[0].rel_path), 32, 32);
    CHECK(img.h == 32);
}
