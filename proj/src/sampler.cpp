#include "chroma/sampler.hpp"

#include <stdexcept>

namespace chroma {

namespace {

using Purpose = DenoiserCall::Purpose;

struct Guided {
    torch::Tensor eps;
    DenoiseOutput maps_source;
};

}  // namespace

torch::Tensor initial_noise(const std::vector<std::uint64_t>& seeds, std::array<int64_t, 3> shape) {
    std::vector<torch::Tensor> xs;
    for (auto s : seeds) {
        auto gen = at::detail::createCPUGenerator(s);
        xs.push_back(torch::randn({shape[0], shape[1], shape[2]}, gen));
    }
    return torch::stack(xs);
}

torch::Tensor sample_latents(Denoiser& model, const NoiseSchedule& sched, const SamplerInputs& in,
                             const SamplerSettings& settings, const torch::Tensor& x_T,
                             const std::vector<std::uint64_t>& seeds, const SamplerTrace& trace) {
    const auto B = x_T.size(0);
    if (static_cast<int64_t>(seeds.size()) != B) throw std::invalid_argument("sample_latents: one seed per sample");
    if (in.context.size(0) != B || !in.context.sizes().equals(in.null_context.sizes())) {
        throw std::invalid_argument("sample_latents: context and null context must be [B, L, D] alike");
    }
    if (in.use_control && !in.stroke) throw std::invalid_argument("sample_latents: control requires a stroke condition");
    if (settings.sag_enabled) settings.sag.validate();
    torch::NoGradGuard no_grad;

    std::vector<at::Generator> gens;
    for (auto s : seeds) gens.push_back(at::detail::createCPUGenerator(s ^ 0x5bd1e995ULL));
    const bool skip_cond = torch::equal(in.context, in.null_context);
    const auto control = (in.stroke && in.use_control) ? in.stroke->z_i : torch::Tensor();

    auto run = [&](const torch::Tensor& x, const torch::Tensor& tt, int t, Purpose p, const torch::Tensor& ctx,
                   bool capture) {
        const auto input = in.stroke ? in.stroke->locked_input(x) : x;
        if (trace.on_call) trace.on_call({t, p, input, ctx, control});
        return model->forward(input, tt, ctx, control, capture);
    };
    auto guided = [&](const torch::Tensor& x, const torch::Tensor& tt, int t, bool sag_pass, bool capture) {
        auto u = run(x, tt, t, sag_pass ? Purpose::SagUncond : Purpose::Uncond, in.null_context, capture && skip_cond);
        if (skip_cond) return Guided{u.eps, std::move(u)};
        auto c = run(x, tt, t, sag_pass ? Purpose::SagCond : Purpose::Cond, in.context, capture);
        return Guided{cfg_combine(u.eps, c.eps, settings.guidance_scale), std::move(c)};
    };

    const auto steps = sampling_timesteps(sched.T, settings.steps);
    auto x = x_T;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const int t = steps[i];
        const int t_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
        const auto tt = torch::full({B}, t, torch::kLong);
        const bool sag_on = settings.sag_enabled && settings.sag.active(t);

        auto g = guided(x, tt, t, false, sag_on);
        auto eps = g.eps;
        if (sag_on) {
            const auto mask = compute_attention_mask(g.maps_source.attention_maps,
                                                     g.maps_source.attention_grids.front(), {x.size(2), x.size(3)});
            const auto x0 = predict_x0(x, eps, t, sched);
            const auto degraded = degrade_prediction(x0, settings.sag);
            const auto x_prime = sag_blend(forward_noise(x0, t, eps, sched), degraded, mask);
            const auto eps_prime = guided(x_prime, tt, t, true, false).eps;
            eps = sag_guided_eps(eps, eps_prime, settings.sag.scale);
            if (trace.on_sag) trace.on_sag(t, mask);
        }

        torch::Tensor noise;
        if (settings.mode == SamplerMode::Ancestral) {
            std::vector<torch::Tensor> ns;
            for (auto& gen : gens) ns.push_back(torch::randn({x.size(1), x.size(2), x.size(3)}, gen));
            noise = torch::stack(ns);
        }
        x = sample_step(x, eps, t, t_prev, sched, noise, settings.mode);
        if (trace.on_step) trace.on_step(t, x);
    }
    return x;
}

}  // namespace chroma
