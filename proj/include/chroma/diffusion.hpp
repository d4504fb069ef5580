#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace chroma {

/// Steps are 1-based: entry t-1 of each table belongs to step t. Step 0 is the
/// clean signal (alpha_bar = 1).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    double alpha_bar(int t) const;
    /// Per-element alpha_bar lookup for a [B] int64 tensor of steps.
    torch::Tensor alpha_bar(const torch::Tensor& t, torch::ScalarType dtype = torch::kFloat32) const;
};

/// Linear beta schedule. Rejects T < 1 or betas outside 0 < start <= end < 1.
NoiseSchedule build_schedule(int T, double beta_start, double beta_end);
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
torch::Tensor forward_noise(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& sched);
torch::Tensor forward_noise(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& sched);

/// x0_hat = (x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)
torch::Tensor predict_x0(const torch::Tensor& x_t, const torch::Tensor& eps, int t, const NoiseSchedule& sched);
torch::Tensor predict_x0(const torch::Tensor& x_t, const torch::Tensor& eps, const torch::Tensor& t,
                         const NoiseSchedule& sched);

/// eps_u + w (eps_c - eps_u)
torch::Tensor cfg_combine(const torch::Tensor& eps_uncond, const torch::Tensor& eps_cond, double w);

enum class SamplerMode { Ancestral, Deterministic };
SamplerMode parse_sampler_mode(const std::string& s);

/// One reverse step from t to t_prev (< t). Ancestral uses the DDPM posterior
/// for the (possibly strided) pair and adds sqrt(var) * noise; the variance is
/// zero when t_prev is 0. Deterministic is the eta = 0 DDIM update and ignores
/// `noise`.
torch::Tensor sample_step(const torch::Tensor& x_t, const torch::Tensor& eps, int t, int t_prev,
                          const NoiseSchedule& sched, const torch::Tensor& noise, SamplerMode mode);
inline torch::Tensor sample_step(const torch::Tensor& x_t, const torch::Tensor& eps, int t, const NoiseSchedule& sched,
                                 const torch::Tensor& noise, SamplerMode mode) {
    return sample_step(x_t, eps, t, t - 1, sched, noise, mode);
}

/// Descending steps T = t_0 > t_1 > ... > t_{n-1} >= 1, evenly strided.
std::vector<int> sampling_timesteps(int T, int n);

}  // namespace chroma
