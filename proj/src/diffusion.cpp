#include "chroma/diffusion.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace chroma {

namespace {

void check_step(const NoiseSchedule& s, int t, const char* who) {
    if (t < 1 || t > s.T) {
        std::ostringstream os;
        os << who << ": step " << t << " outside [1, " << s.T << "]";
        throw std::invalid_argument(os.str());
    }
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
    if (!a.sizes().equals(b.sizes())) {
        std::ostringstream os;
        os << who << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
        throw std::invalid_argument(os.str());
    }
}

// [B] -> [B,1,1,...] matching x.
torch::Tensor per_sample(const torch::Tensor& v, const torch::Tensor& x) {
    std::vector<int64_t> shape(x.dim(), 1);
    shape[0] = v.size(0);
    return v.view(shape);
}

}  // namespace

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_step(*this, t, "alpha_bar");
    return alpha_bars[static_cast<std::size_t>(t - 1)];
}

torch::Tensor NoiseSchedule::alpha_bar(const torch::Tensor& t, torch::ScalarType dtype) const {
    auto table = torch::tensor(alpha_bars, torch::kFloat64);
    auto idx = t.to(torch::kLong);
    if (idx.numel() > 0 && (idx.min().item<int64_t>() < 1 || idx.max().item<int64_t>() > T)) {
        throw std::invalid_argument("alpha_bar: step tensor outside [1, T]");
    }
    return table.index_select(0, idx - 1).to(dtype);
}

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
    if (betas.empty()) throw std::invalid_argument("schedule: need at least one step");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.betas = betas;
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("schedule: every beta must lie in (0,1)");
        s.alphas.push_back(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bars.push_back(prod);
    }
    return s;
}

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("build_schedule: require 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
        betas[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
    }
    return schedule_from_betas(betas);
}

torch::Tensor forward_noise(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& sched) {
    check_same_shape(x0, eps, "forward_noise");
    check_step(sched, t, "forward_noise");
    const double ab = sched.alpha_bar(t);
    return x0 * std::sqrt(ab) + eps * std::sqrt(1.0 - ab);
}

torch::Tensor forward_noise(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& sched) {
    check_same_shape(x0, eps, "forward_noise");
    const auto ab = per_sample(sched.alpha_bar(t, torch::kFloat64), x0);
    return x0 * ab.sqrt().to(x0.scalar_type()) + eps * (1.0 - ab).sqrt().to(x0.scalar_type());
}

torch::Tensor predict_x0(const torch::Tensor& x_t, const torch::Tensor& eps, int t, const NoiseSchedule& sched) {
    check_same_shape(x_t, eps, "predict_x0");
    check_step(sched, t, "predict_x0");
    const double ab = sched.alpha_bar(t);
    if (ab <= 0.0) throw std::invalid_argument("predict_x0: alpha_bar is zero");
    return (x_t - eps * std::sqrt(1.0 - ab)) / std::sqrt(ab);
}

torch::Tensor predict_x0(const torch::Tensor& x_t, const torch::Tensor& eps, const torch::Tensor& t,
                         const NoiseSchedule& sched) {
    check_same_shape(x_t, eps, "predict_x0");
    const auto ab = per_sample(sched.alpha_bar(t, torch::kFloat64), x_t);
    if (ab.min().item<double>() <= 0.0) throw std::invalid_argument("predict_x0: alpha_bar is zero");
    return (x_t - eps * (1.0 - ab).sqrt().to(x_t.scalar_type())) / ab.sqrt().to(x_t.scalar_type());
}

torch::Tensor cfg_combine(const torch::Tensor& eps_uncond, const torch::Tensor& eps_cond, double w) {
    check_same_shape(eps_uncond, eps_cond, "cfg_combine");
    return eps_uncond + (eps_cond - eps_uncond) * w;
}

SamplerMode parse_sampler_mode(const std::string& s) {
    if (s == "ancestral") return SamplerMode::Ancestral;
    if (s == "deterministic") return SamplerMode::Deterministic;
    throw std::invalid_argument("unknown sampler mode '" + s + "'");
}

torch::Tensor sample_step(const torch::Tensor& x_t, const torch::Tensor& eps, int t, int t_prev,
                          const NoiseSchedule& sched, const torch::Tensor& noise, SamplerMode mode) {
    check_same_shape(x_t, eps, "sample_step");
    check_step(sched, t, "sample_step");
    if (t_prev < 0 || t_prev >= t) throw std::invalid_argument("sample_step: t_prev must lie in [0, t)");
    const double ab_t = sched.alpha_bar(t);
    const double ab_p = sched.alpha_bar(t_prev);
    const torch::Tensor x0 = predict_x0(x_t, eps, t, sched);
    if (mode == SamplerMode::Deterministic) return x0 * std::sqrt(ab_p) + eps * std::sqrt(1.0 - ab_p);

    const double alpha = ab_t / ab_p;
    const double beta = 1.0 - alpha;
    const double c0 = std::sqrt(ab_p) * beta / (1.0 - ab_t);
    const double ct = std::sqrt(alpha) * (1.0 - ab_p) / (1.0 - ab_t);
    const double var = beta * (1.0 - ab_p) / (1.0 - ab_t);
    torch::Tensor mean = x0 * c0 + x_t * ct;
    if (t_prev == 0 || var <= 0.0) return mean;
    check_same_shape(x_t, noise, "sample_step");
    return mean + noise * std::sqrt(var);
}

std::vector<int> sampling_timesteps(int T, int n) {
    if (n < 1 || n > T) throw std::invalid_argument("sampling_timesteps: need 1 <= n <= T");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) ts.push_back(T - static_cast<int>(static_cast<long long>(k) * T / n));
    return ts;
}

}  // namespace chroma
