#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "chroma/denoiser.hpp"
#include "chroma/diffusion.hpp"
#include "chroma/sag.hpp"

namespace chroma {

/// One denoiser evaluation as seen by the sampler.
struct DenoiserCall {
    enum class Purpose { Uncond, Cond, SagUncond, SagCond };
    int t = 0;
    Purpose purpose = Purpose::Cond;
    torch::Tensor input;    // locked-branch input (4 or 9 channels)
    torch::Tensor context;
    torch::Tensor control;  // undefined when the control branch is off
};

/// Observer hooks; any may be empty.
struct SamplerTrace {
    std::function<void(const DenoiserCall&)> on_call;
    /// Fired once per step in which guidance was applied, with the mask used.
    std::function<void(int t, const torch::Tensor& mask)> on_sag;
    std::function<void(int t, const torch::Tensor& x_t)> on_step;
};

struct SamplerSettings {
    int steps = 50;
    SamplerMode mode = SamplerMode::Deterministic;
    double guidance_scale = 7.0;
    bool sag_enabled = true;
    SagConfig sag;
};

struct SamplerInputs {
    torch::Tensor context;       // [B, L, D]
    torch::Tensor null_context;  // [B, L, D]
    /// When absent the locked branch sees the plain 4-channel latent.
    std::optional<StrokeCondition> stroke;
    /// Feed z_i to the control branch (requires `stroke`).
    bool use_control = true;
};

/// Initial noise for sample k drawn from a CPU generator seeded with seeds[k].
torch::Tensor initial_noise(const std::vector<std::uint64_t>& seeds, std::array<int64_t, 3> latent_shape);

/// Reverse diffusion from x_T over `settings.steps` strided steps, with CFG
/// against the null context and SAG while t >= sag.ts. Per-sample generators
/// (seeds[k]) supply the ancestral noise, so a sample does not depend on its
/// batch neighbours.
torch::Tensor sample_latents(Denoiser& model, const NoiseSchedule& sched, const SamplerInputs& in,
                             const SamplerSettings& settings, const torch::Tensor& x_T,
                             const std::vector<std::uint64_t>& seeds, const SamplerTrace& trace = {});

}  // namespace chroma
