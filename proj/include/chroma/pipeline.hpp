#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "chroma/autoencoder.hpp"
#include "chroma/color_math.hpp"
#include "chroma/conditioning.hpp"
#include "chroma/config.hpp"
#include "chroma/denoiser.hpp"
#include "chroma/diffusion.hpp"
#include "chroma/random.hpp"
#include "chroma/sampler.hpp"
#include "chroma/strokes.hpp"

namespace chroma {

/// Checkpoint file names inside a model directory.
struct ModelFiles {
    static constexpr const char* kConfig = "config.json";
    static constexpr const char* kAutoencoder = "autoencoder.ckpt";
    static constexpr const char* kFeatures = "features.ckpt";
    static constexpr const char* kDenoiser = "denoiser.ckpt";
    static constexpr const char* kExemplar = "exemplar.ckpt";
    static constexpr const char* kDeformable = "deformable.ckpt";
};

struct ModelBundle {
    Config config;
    NoiseSchedule sched;
    Autoencoder ae{nullptr};
    Denoiser denoiser{nullptr};
    ExemplarEmbedder exemplar{nullptr};
    DeformableDecoder deformable{nullptr};
    HashTextEmbedder text;
    bool has_exemplar = false;
    bool has_deformable = false;
    /// Hex digest over the loaded checkpoint files; "untrained" for fresh weights.
    std::string checkpoint_hash = "untrained";

    int context_tokens() const { return config.model.text_tokens + config.model.exemplar_tokens; }
};

/// Freshly initialised networks for `cfg` (weights seeded from cfg.train.seed).
ModelBundle make_models(const Config& cfg);

/// Reads config.json and every checkpoint present. The autoencoder and the
/// denoiser are required; exemplar and deformable weights are optional.
ModelBundle load_models(const std::filesystem::path& dir);

struct ColorizeRequest {
    /// Grey or colour input; only its lightness is used for generation.
    RgbImage image;
    std::string prompt;
    /// Stroke coordinates are in input-image pixels.
    std::vector<Stroke> strokes;
    std::optional<RgbImage> exemplar;
    /// Pre-rasterised hints at input resolution, drawn under any strokes.
    std::optional<RgbImage> hint_image;
    std::optional<GrayImage> hint_mask;
    bool use_stroke_color = true;
    bool region_only = false;
    bool deformable_decoder = true;
    int num_outputs = 1;
    double guidance_scale = 7.0;
    double sag_scale = 0.05;
    int sag_ts = 600;
    std::uint64_t seed = kEvalSeed;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct ColorizeResult {
    std::vector<RgbImage> images;
    std::vector<std::uint64_t> seeds;
    bool deformable_used = false;
    int clipped_strokes = 0;
    std::vector<std::string> warnings;
};

/// Model resolution for an input: shorter side equals `short_side`, the longer
/// side scaled proportionally and rounded to the nearest multiple of `factor`.
std::array<int, 2> model_resolution(int height, int width, int short_side, int factor);

/// Unified entry point; dispatches to region colorisation when region_only is set.
ColorizeResult colorize(const ColorizeRequest& req, ModelBundle& models);
ColorizeResult region_colorize(const ColorizeRequest& req, ModelBundle& models);

/// Per-image inputs for batched latent generation at model resolution.
struct LatentJob {
    torch::Tensor gray;     // [1,3,h,w] in [-1,1]
    torch::Tensor hint;     // [1,3,h,w]
    torch::Tensor mask;     // [1,1,h,w]
    torch::Tensor context;  // [1,L,D]
    std::uint64_t seed = 0;
};

struct SampledLatents {
    torch::Tensor z0;
    StrokeCondition cond;
};

SamplerSettings sampler_settings(const ModelBundle& models, double guidance_scale, double sag_scale, int sag_ts);

/// Runs the sampler on a batch of equally sized jobs.
SampledLatents sample_jobs(ModelBundle& models, const std::vector<LatentJob>& jobs, const SamplerSettings& settings,
                           const SamplerTrace& trace = {});

/// Text tokens then exemplar tokens, [1, L, D].
torch::Tensor request_context(ModelBundle& models, const std::string& prompt, const std::optional<RgbImage>& exemplar);

}  // namespace chroma
