#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

namespace chroma {

struct SagConfig {
    double scale = 0.05;
    int ts = 600;
    int T = 1000;
    double blur_sigma = 1.0;
    int blur_kernel = 9;

    /// Rejects negative scale, ts outside [0, T] or an even kernel.
    void validate() const;
    /// Guidance runs for t in [T, ts].
    bool active(int t) const { return t >= ts; }
};

/// Saliency = attention received per key position, averaged over heads and
/// queries of the first (lowest resolution) map, reshaped to that map's grid
/// and nearest-upsampled to `target`. Returns [B,1,h,w] with 1 where saliency
/// is strictly above its spatial mean. `grid` is the map's (rows, cols).
torch::Tensor compute_attention_mask(const std::vector<torch::Tensor>& maps, std::array<int64_t, 2> grid,
                                     std::array<int64_t, 2> target);

/// Normalised 1-D Gaussian taps.
torch::Tensor gaussian_kernel1d(int size, double sigma, torch::ScalarType dtype = torch::kFloat32);

/// Separable channelwise Gaussian blur with reflect padding (edge replication
/// when a side is not larger than the radius); [B,C,h,w].
torch::Tensor gaussian_blur(const torch::Tensor& x, int kernel, double sigma);
inline torch::Tensor degrade_prediction(const torch::Tensor& x0_hat, const SagConfig& cfg) {
    return gaussian_blur(x0_hat, cfg.blur_kernel, cfg.blur_sigma);
}

/// (1 - m) * x_t_prime + m * x0_degraded, mask broadcast over channels.
torch::Tensor sag_blend(const torch::Tensor& x_t_prime, const torch::Tensor& x0_degraded, const torch::Tensor& mask);

/// eps + s * (eps - eps_prime)
torch::Tensor sag_guided_eps(const torch::Tensor& eps, const torch::Tensor& eps_prime, double s);

}  // namespace chroma
