#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "impure/classifier.hpp"
#include "impure/image.hpp"
#include "impure/nn.hpp"
#include "impure/partition.hpp"

namespace impure::riae {

// How a reconstruction target's information is destroyed before decoding.
enum class MaskMode { ImgOcc, ImgNoise, FeaNoise, ImgNoiseFeaNoise };

inline std::string to_string(MaskMode m) {
    switch (m) {
        case MaskMode::ImgOcc: return "ImgOcc";
        case MaskMode::ImgNoise: return "ImgNoise";
        case MaskMode::FeaNoise: return "FeaNoise";
        default: return "ImgNoise+FeaNoise";
    }
}
inline MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "ImgOcc") return MaskMode::ImgOcc;
    if (s == "ImgNoise") return MaskMode::ImgNoise;
    if (s == "FeaNoise") return MaskMode::FeaNoise;
    if (s == "ImgNoise+FeaNoise") return MaskMode::ImgNoiseFeaNoise;
    throw ContractViolation("unknown mask mode: " + s);
}

struct RIAEConfig {
    int patch = 4;
    int subsets = 4;
    int enc_dim = 192, enc_depth = 6, enc_heads = 6;
    int dec_dim = 128, dec_depth = 4, dec_heads = 4;
    int channels = 3;
    MaskMode mask_mode = MaskMode::ImgNoiseFeaNoise;
    double img_noise_lo = 0.05, img_noise_hi = 0.25;
    double fea_noise_lo = 0.05, fea_noise_hi = 0.25;
    bool clamp_output = true;

    bool occludes() const { return mask_mode == MaskMode::ImgOcc; }
    bool img_noise() const {
        return mask_mode == MaskMode::ImgNoise || mask_mode == MaskMode::ImgNoiseFeaNoise;
    }
    bool fea_noise() const {
        return mask_mode == MaskMode::FeaNoise || mask_mode == MaskMode::ImgNoiseFeaNoise;
    }

    void validate() const {
        IMPURE_CHECK(patch >= 1 && subsets >= 1, "riae: patch and subsets must be positive");
        IMPURE_CHECK(enc_dim % enc_heads == 0, "riae: enc_dim not divisible by enc_heads");
        IMPURE_CHECK(dec_dim % dec_heads == 0, "riae: dec_dim not divisible by dec_heads");
        IMPURE_CHECK(enc_dim % 4 == 0 && dec_dim % 4 == 0,
                     "riae: embedding dims must be divisible by 4 for the position table");
        IMPURE_CHECK(img_noise_lo >= 0 && img_noise_lo <= img_noise_hi, "riae: bad image sigma range");
        IMPURE_CHECK(fea_noise_lo >= 0 && fea_noise_lo <= fea_noise_hi, "riae: bad feature sigma range");
    }

    nlohmann::json to_json() const {
        return {{"patch", patch},
                {"subsets", subsets},
                {"enc_dim", enc_dim},
                {"enc_depth", enc_depth},
                {"enc_heads", enc_heads},
                {"dec_dim", dec_dim},
                {"dec_depth", dec_depth},
                {"dec_heads", dec_heads},
                {"channels", channels},
                {"mask_mode", to_string(mask_mode)},
                {"img_noise", {img_noise_lo, img_noise_hi}},
                {"fea_noise", {fea_noise_lo, fea_noise_hi}},
                {"clamp_output", clamp_output}};
    }
    static RIAEConfig from_json(const nlohmann::json& j) {
        RIAEConfig c;
        c.patch = j.at("patch").get<int>();
        c.subsets = j.at("subsets").get<int>();
        c.enc_dim = j.at("enc_dim").get<int>();
        c.enc_depth = j.at("enc_depth").get<int>();
        c.enc_heads = j.at("enc_heads").get<int>();
        c.dec_dim = j.at("dec_dim").get<int>();
        c.dec_depth = j.at("dec_depth").get<int>();
        c.dec_heads = j.at("dec_heads").get<int>();
        c.channels = j.value("channels", 3);
        c.mask_mode = mask_mode_from_string(j.at("mask_mode").get<std::string>());
        auto in = j.at("img_noise");
        c.img_noise_lo = in[0].get<double>();
        c.img_noise_hi = in[1].get<double>();
        auto fn = j.at("fea_noise");
        c.fea_noise_lo = fn[0].get<double>();
        c.fea_noise_hi = fn[1].get<double>();
        c.clamp_output = j.value("clamp_output", true);
        c.validate();
        return c;
    }
};

// Paper-scale configuration (224x224 inputs, 16px patches).
inline RIAEConfig paper_scale_config() {
    RIAEConfig c;
    c.patch = 16;
    c.enc_dim = 768;
    c.enc_depth = 12;
    c.enc_heads = 12;
    c.dec_dim = 512;
    c.dec_depth = 8;
    c.dec_heads = 16;
    return c;
}

enum class ImageMaskMode { None, ImgOcc, ImgNoise };

// Pixel-level information masking. pixel_mask has one byte per pixel (H*W).
// ImgOcc fills masked pixels with neutral gray; ImgNoise adds N(0, sigma^2)
// with one sigma per call drawn from U(sigma_lo, sigma_hi), then clamps.
inline Image apply_image_mask(const Image& img, const std::vector<uint8_t>& pixel_mask,
                              ImageMaskMode mode, double sigma_lo, double sigma_hi, uint64_t seed) {
    IMPURE_CHECK(pixel_mask.size() == static_cast<size_t>(img.h) * img.w,
                 "apply_image_mask: mask size mismatch");
    if (mode == ImageMaskMode::None) return img;
    Image out = img;
    if (mode == ImageMaskMode::ImgOcc) {
        for (size_t p = 0; p < pixel_mask.size(); ++p)
            if (pixel_mask[p])
                for (int ch = 0; ch < img.c; ++ch) out.data[p * img.c + ch] = 0.5f;
        return out;
    }
    Rng rng(seed, 0x696d676e6f697365ull);
    const float sigma = float(rng.uniform(sigma_lo, sigma_hi));
    for (size_t p = 0; p < pixel_mask.size(); ++p)
        if (pixel_mask[p])
            for (int ch = 0; ch < img.c; ++ch) {
                float& v = out.data[p * img.c + ch];
                v = std::clamp(v + sigma * float(rng.normal()), 0.f, 1.f);
            }
    return out;
}

// Pixel mask covering subset `i` of a patch partition.
inline std::vector<uint8_t> subset_pixel_mask(const SubsetPartition& part, int i, int h, int w,
                                              int patch) {
    std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
    const int gw = w / patch;
    for (int k : part.subsets.at(static_cast<size_t>(i))) {
        const int gy = k / gw, gx = k % gw;
        for (int py = 0; py < patch; ++py)
            for (int px = 0; px < patch; ++px)
                mask[static_cast<size_t>(gy * patch + py) * w + gx * patch + px] = 1;
    }
    return mask;
}

// Regional intersection autoencoder. Patches are split into subsets, each
// subset is encoded independently, and every subset is reconstructed from the
// others through the decoder; recombining the reconstructions by position
// yields the purified image.
template <typename T>
class Purifier {
  public:
    explicit Purifier(RIAEConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int64_t pd = int64_t(cfg_.patch) * cfg_.patch * cfg_.channels;
        patch_embed_ = nn::Linear<T>(params_, "patch_embed", pd, cfg_.enc_dim);
        for (int i = 0; i < cfg_.enc_depth; ++i)
            enc_blocks_.emplace_back(params_, "enc.block" + std::to_string(i), cfg_.enc_dim,
                                     cfg_.enc_heads);
        enc_norm_ = nn::LayerNorm<T>(params_, "enc.norm", cfg_.enc_dim);
        enc2dec_ = nn::Linear<T>(params_, "enc2dec", cfg_.enc_dim, cfg_.dec_dim);
        mask_token_ = params_.add("mask_token", {1, cfg_.dec_dim});
        for (int i = 0; i < cfg_.dec_depth; ++i)
            dec_blocks_.emplace_back(params_, "dec.block" + std::to_string(i), cfg_.dec_dim,
                                     cfg_.dec_heads);
        dec_norm_ = nn::LayerNorm<T>(params_, "dec.norm", cfg_.dec_dim);
        out_proj_ = nn::Linear<T>(params_, "out_proj", cfg_.dec_dim, pd);
    }

    void init(uint64_t seed) {
        Rng rng(seed, 0x72696165ull);
        patch_embed_.init(rng);
        for (auto& b : enc_blocks_) b.init(rng);
        enc2dec_.init(rng);
        for (auto& b : dec_blocks_) b.init(rng);
        out_proj_.init(rng);
        // mask token stays zero-initialized
    }

    const RIAEConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }
    std::string config_hash() const { return nn::config_hash_of(cfg_.to_json()); }

    // ---- graph builders ----

    // Patch rows -> embedded tokens (projection plus fixed position table).
    ag::Var<T> embed_graph(nn::Graph<T>& g, const Tensor<T>& patch_rows, int grid_h,
                           int grid_w) const {
        auto tokens = patch_embed_(g, g.constant(patch_rows.clone()));
        return ag::add(tokens,
                       g.constant(nn::sincos_position_table<T>(grid_h, grid_w, cfg_.enc_dim)));
    }

    // Encoder stack on one subset's tokens; no cross-subset state.
    ag::Var<T> encode_tokens_graph(nn::Graph<T>& g, const ag::Var<T>& subset_tokens) const {
        auto h = subset_tokens;
        for (auto& b : enc_blocks_) h = b(g, h);
        return enc_norm_(g, h);
    }

    // One reconstruction pass. `projected` holds the decoder-side projection
    // of every subset's features; entry `i` is the information-masked target
    // (ignored under ImgOcc, where the mask token is substituted instead).
    ag::Var<T> decode_from_projected_graph(nn::Graph<T>& g, const std::vector<ag::Var<T>>& projected,
                                           const SubsetPartition& part, int i, bool fea_noise,
                                           uint64_t seed, int grid_h, int grid_w) const {
        const int64_t n = part.n, l = part.subset_size();
        ag::Var<T> target;
        if (cfg_.occludes()) {
            target = ag::repeat_row(g.param(mask_token_), l);
        } else {
            target = projected[static_cast<size_t>(i)];
        }
        if (fea_noise) {
            Rng rng(seed, 0x6665616e6f697365ull, static_cast<uint64_t>(i));
            const T sigma = T(rng.uniform(cfg_.fea_noise_lo, cfg_.fea_noise_hi));
            Tensor<T> noise({l, cfg_.dec_dim});
            for (auto& v : noise.data()) v = sigma * T(rng.normal());
            target = ag::add(target, g.constant(std::move(noise)));
        }
        auto assembled = g.constant(Tensor<T>::zeros({n, cfg_.dec_dim}));
        for (int j = 0; j < part.s; ++j) {
            auto rows = (j == i) ? target : projected[static_cast<size_t>(j)];
            assembled = ag::scatter_rows(assembled, rows, part.subsets[static_cast<size_t>(j)]);
        }
        auto h = ag::add(assembled,
                         g.constant(nn::sincos_position_table<T>(grid_h, grid_w, cfg_.dec_dim)));
        for (auto& b : dec_blocks_) h = b(g, h);
        auto sub = ag::gather_rows(h, part.subsets[static_cast<size_t>(i)]);
        return out_proj_(g, dec_norm_(g, sub));
    }

    struct PurifyGraph {
        ag::Var<T> patches;  // [N, P*P*C] reconstruction in patch order
        ag::Var<T> image;    // [H, W, C], clamped when configured
    };

    // Full purification pass over every subset. All stochastic draws derive
    // from `seed`, so rebuilding with the same seed replays the same noise.
    PurifyGraph purify_graph(nn::Graph<T>& g, const Image& input, const SubsetPartition& part,
                             uint64_t seed) const {
        IMPURE_CHECK(input.c == cfg_.channels, "purify: channel mismatch");
        IMPURE_CHECK(input.h % cfg_.patch == 0 && input.w % cfg_.patch == 0,
                     "purify: image dims not divisible by patch size");
        const int grid_h = input.h / cfg_.patch, grid_w = input.w / cfg_.patch;
        const int n = grid_h * grid_w;
        IMPURE_CHECK(part.n == n, "purify: partition does not match patch grid");
        const int64_t pd = int64_t(cfg_.patch) * cfg_.patch * cfg_.channels;

        // clean-path context features
        auto tokens = embed_graph(g, patches_tensor(input), grid_h, grid_w);
        std::vector<ag::Var<T>> projected(static_cast<size_t>(part.s));
        for (int j = 0; j < part.s; ++j) {
            auto feats = encode_tokens_graph(
                g, ag::gather_rows(tokens, part.subsets[static_cast<size_t>(j)]));
            projected[static_cast<size_t>(j)] = enc2dec_(g, feats);
        }

        // per-target information-masked features (noise modes only)
        std::vector<ag::Var<T>> masked = projected;
        if (cfg_.img_noise()) {
            auto pos = nn::sincos_position_table<T>(grid_h, grid_w, cfg_.enc_dim);
            for (int i = 0; i < part.s; ++i) {
                Image noised = apply_image_mask(
                    input, subset_pixel_mask(part, i, input.h, input.w, cfg_.patch),
                    ImageMaskMode::ImgNoise, cfg_.img_noise_lo, cfg_.img_noise_hi,
                    mix_seed(seed, 0x696d67ull, static_cast<uint64_t>(i)));
                const auto& sub = part.subsets[static_cast<size_t>(i)];
                auto noised_patches = patches_tensor(noised);
                Tensor<T> rows({static_cast<int64_t>(sub.size()), pd});
                Tensor<T> posrows({static_cast<int64_t>(sub.size()), cfg_.enc_dim});
                for (size_t r = 0; r < sub.size(); ++r) {
                    rows.mat().row(static_cast<int64_t>(r)) =
                        noised_patches.mat().row(sub[r]);
                    posrows.mat().row(static_cast<int64_t>(r)) = pos.mat().row(sub[r]);
                }
                auto tok = ag::add(patch_embed_(g, g.constant(std::move(rows))),
                                   g.constant(std::move(posrows)));
                masked[static_cast<size_t>(i)] = enc2dec_(g, encode_tokens_graph(g, tok));
            }
        }

        auto all_patches = g.constant(Tensor<T>::zeros({n, pd}));
        for (int i = 0; i < part.s; ++i) {
            std::vector<ag::Var<T>> feats = projected;
            feats[static_cast<size_t>(i)] = masked[static_cast<size_t>(i)];
            auto rec = decode_from_projected_graph(g, feats, part, i, cfg_.fea_noise(), seed,
                                                   grid_h, grid_w);
            all_patches = ag::scatter_rows(all_patches, rec, part.subsets[static_cast<size_t>(i)]);
        }

        PurifyGraph out;
        out.patches = all_patches;
        auto img = ag::gather_flat(all_patches, patch_to_image_index(input.h, input.w),
                                   {input.h, input.w, cfg_.channels});
        out.image = cfg_.clamp_output ? ag::clamp(img, T(0), T(1)) : img;
        return out;
    }

    // ---- value-level operations ----

    Tensor<T> embed(const Image& img) const {
        IMPURE_CHECK(img.h % cfg_.patch == 0 && img.w % cfg_.patch == 0,
                     "embed: image dims not divisible by patch size");
        nn::Graph<T> g(false);
        return embed_graph(g, patches_tensor(img), img.h / cfg_.patch, img.w / cfg_.patch)->value;
    }

    // SubsetFeatures: one [L, enc_dim] matrix per subset.
    std::vector<Tensor<T>> encode_subsets(const Tensor<T>& tokens,
                                          const SubsetPartition& part) const {
        nn::Graph<T> g(false);
        std::vector<Tensor<T>> out;
        out.reserve(static_cast<size_t>(part.s));
        for (int j = 0; j < part.s; ++j) {
            auto v = encode_tokens_graph(g, ag::gather_rows(g.constant(tokens.clone()),
                                                            part.subsets[static_cast<size_t>(j)]));
            out.push_back(v->value);
        }
        return out;
    }

    // Reconstruction of subset i's patches from the given subset features.
    // Under ImgOcc the target's features are replaced by the mask token; in
    // noise modes they are used as given (information-masked upstream).
    Tensor<T> decode_subset(const std::vector<Tensor<T>>& feats, const SubsetPartition& part, int i,
                            bool fea_noise, uint64_t seed, int grid_h, int grid_w) const {
        IMPURE_CHECK(i >= 0 && i < part.s, "decode_subset: subset index out of range");
        nn::Graph<T> g(false);
        std::vector<ag::Var<T>> projected;
        projected.reserve(feats.size());
        for (const auto& f : feats) projected.push_back(enc2dec_(g, g.constant(f.clone())));
        return decode_from_projected_graph(g, projected, part, i, fea_noise, seed, grid_h, grid_w)
            ->value;
    }

    // Builds the partition (uniform at test time), runs every reconstruction
    // pass, and reassembles the purified image.
    Image purify(const Image& input, PartitionMode mode, uint64_t seed) const {
        SubsetPartition part = partition_for(input, mode, seed);
        nn::Graph<T> g(false);
        auto out = purify_graph(g, input, part, seed);
        return tensor_to_image(out.image->value);
    }

    SubsetPartition partition_for(const Image& input, PartitionMode mode, uint64_t seed) const {
        const int grid_h = input.h / cfg_.patch, grid_w = input.w / cfg_.patch;
        return make_partition(grid_h * grid_w, cfg_.subsets, mode,
                              mix_seed(seed, 0x70617274ull), grid_h, grid_w);
    }

    Tensor<T> patches_tensor(const Image& img) const {
        PatchSequence ps = to_patches(img, cfg_.patch);
        Tensor<T> t({ps.n, ps.patch_dim()});
        for (size_t i = 0; i < ps.data.size(); ++i) t[static_cast<int64_t>(i)] = T(ps.data[i]);
        return t;
    }

    void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const {
        nn::save_checkpoint(path, "purifier", cfg_.to_json(), params_,
                            extra.is_null() ? nlohmann::json::object() : extra);
    }
    static Purifier load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open checkpoint " + path.string());
        auto hdr = nn::read_checkpoint_header(in, path.string());
        in.close();
        Purifier p(RIAEConfig::from_json(hdr.config));
        nn::load_checkpoint(path, "purifier", p.params_);
        return p;
    }

  private:
    // [H,W,C] flat position -> flat position in the [N, P*P*C] patch matrix
    std::shared_ptr<const std::vector<int64_t>> patch_to_image_index(int h, int w) const {
        const int p = cfg_.patch, c = cfg_.channels, gw = w / p;
        auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(h) * w * c);
        const int64_t pd = int64_t(p) * p * c;
        size_t i = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch, ++i) {
                    int64_t k = int64_t(y / p) * gw + x / p;
                    (*idx)[i] = k * pd + (int64_t(y % p) * p + x % p) * c + ch;
                }
        return idx;
    }

    RIAEConfig cfg_;
    nn::ParamStore<T> params_;
    nn::Linear<T> patch_embed_;
    std::vector<nn::TransformerBlock<T>> enc_blocks_;
    nn::LayerNorm<T> enc_norm_;
    nn::Linear<T> enc2dec_;
    Tensor<T> mask_token_;
    std::vector<nn::TransformerBlock<T>> dec_blocks_;
    nn::LayerNorm<T> dec_norm_;
    nn::Linear<T> out_proj_;
};

}  // namespace impure::riae
