#include "chroma/sag.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace chroma {

namespace F = torch::nn::functional;

void SagConfig::validate() const {
    std::ostringstream os;
    if (scale < 0) os << "sag scale must be >= 0, got " << scale;
    else if (ts < 0 || ts > T) os << "sag ts must lie in [0, " << T << "], got " << ts;
    else if (blur_kernel < 1 || blur_kernel % 2 == 0) os << "sag blur kernel must be odd, got " << blur_kernel;
    else if (!(blur_sigma > 0)) os << "sag blur sigma must be positive, got " << blur_sigma;
    else return;
    throw std::invalid_argument(os.str());
}

torch::Tensor compute_attention_mask(const std::vector<torch::Tensor>& maps, std::array<int64_t, 2> grid,
                                     std::array<int64_t, 2> target) {
    if (maps.empty() || !maps.front().defined()) {
        throw std::invalid_argument("compute_attention_mask: no self-attention maps captured");
    }
    const auto& a = maps.front();  // [B, heads, N, N]
    if (a.dim() != 4 || a.size(3) != grid[0] * grid[1]) {
        std::ostringstream os;
        os << "compute_attention_mask: map " << a.sizes() << " does not match grid " << grid[0] << "x" << grid[1];
        throw std::invalid_argument(os.str());
    }
    if (grid[0] > target[0] || grid[1] > target[1]) {
        throw std::invalid_argument("compute_attention_mask: map resolution exceeds the target");
    }
    auto sal = a.mean(1).mean(1).reshape({a.size(0), 1, grid[0], grid[1]});
    sal = F::interpolate(sal, F::InterpolateFuncOptions().size(std::vector<int64_t>{target[0], target[1]}).mode(torch::kNearest));
    const auto mean = sal.mean({2, 3}, true);
    return sal.gt(mean).to(a.scalar_type());
}

torch::Tensor gaussian_kernel1d(int size, double sigma, torch::ScalarType dtype) {
    const int r = size / 2;
    auto k = torch::arange(-r, r + 1, torch::kFloat64);
    k = torch::exp(-k * k / (2 * sigma * sigma));
    return (k / k.sum()).to(dtype);
}

torch::Tensor gaussian_blur(const torch::Tensor& x, int kernel, double sigma) {
    if (x.dim() != 4) throw std::invalid_argument("gaussian_blur: expected [B,C,h,w]");
    if (kernel % 2 == 0) throw std::invalid_argument("gaussian_blur: kernel must be odd");
    const int r = kernel / 2;
    // reflect needs sides > r; tiny latents fall back to edge replication
    F::PadFuncOptions pad({r, r, r, r});
    if (x.size(2) > r && x.size(3) > r) pad.mode(torch::kReflect);
    else pad.mode(torch::kReplicate);
    const auto C = x.size(1);
    const auto k = gaussian_kernel1d(kernel, sigma, x.scalar_type());
    auto kh = k.view({1, 1, 1, kernel}).expand({C, 1, 1, kernel}).contiguous();
    auto kv = k.view({1, 1, kernel, 1}).expand({C, 1, kernel, 1}).contiguous();
    auto h = F::pad(x, pad);
    h = F::conv2d(h, kh, F::Conv2dFuncOptions().groups(C));
    return F::conv2d(h, kv, F::Conv2dFuncOptions().groups(C));
}

torch::Tensor sag_blend(const torch::Tensor& x_t_prime, const torch::Tensor& x0_degraded, const torch::Tensor& mask) {
    if (!x_t_prime.sizes().equals(x0_degraded.sizes())) {
        throw std::invalid_argument("sag_blend: latent shapes differ");
    }
    if (mask.dim() != 4 || mask.size(0) != x_t_prime.size(0) || mask.size(1) != 1 ||
        mask.size(2) != x_t_prime.size(2) || mask.size(3) != x_t_prime.size(3)) {
        std::ostringstream os;
        os << "sag_blend: mask " << mask.sizes() << " does not match latent " << x_t_prime.sizes();
        throw std::invalid_argument(os.str());
    }
    return (1 - mask) * x_t_prime + mask * x0_degraded;
}

torch::Tensor sag_guided_eps(const torch::Tensor& eps, const torch::Tensor& eps_prime, double s) {
    if (!eps.sizes().equals(eps_prime.sizes())) throw std::invalid_argument("sag_guided_eps: shape mismatch");
    return eps + s * (eps - eps_prime);
}

}  // namespace chroma
