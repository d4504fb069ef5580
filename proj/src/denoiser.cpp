#include "chroma/denoiser.hpp"

#include <sstream>
#include <stdexcept>

#include "chroma/tensor_image.hpp"

namespace chroma {

namespace F = torch::nn::functional;

namespace {

int heads_for(int channels) { return std::max(1, channels / 32); }

void append(std::vector<torch::Tensor>& out, torch::nn::Module& m) {
    for (auto& p : m.parameters()) out.push_back(p);
}

}  // namespace

UNetEncoderImpl::UNetEncoderImpl(int w, int latent_channels, int context_dim, int temb_dim) {
    conv_in = register_module("conv_in", conv3x3(latent_channels, w));
    enc1 = register_module("enc1", ResBlock(w, w, temb_dim));
    enc1_x = register_module("enc1_x", CrossAttention(w, context_dim, heads_for(w)));
    down = register_module("down", conv3x3(w, w, 2));
    enc2 = register_module("enc2", ResBlock(w, 2 * w, temb_dim));
    enc2_x = register_module("enc2_x", CrossAttention(2 * w, context_dim, heads_for(2 * w)));
    mid1 = register_module("mid1", ResBlock(2 * w, 2 * w, temb_dim));
    mid_s = register_module("mid_s", SelfAttention(2 * w, heads_for(2 * w)));
    mid_x = register_module("mid_x", CrossAttention(2 * w, context_dim, heads_for(2 * w)));
    mid2 = register_module("mid2", ResBlock(2 * w, 2 * w, temb_dim));
}

UNetEncoderImpl::Features UNetEncoderImpl::forward(const torch::Tensor& h0, const torch::Tensor& temb,
                                                    const torch::Tensor& context, bool capture) {
    Features f;
    f.s1 = enc1_x(enc1(h0, temb), context);
    f.s2 = enc2_x(enc2(down(f.s1), temb), context);
    auto m = mid1(f.s2, temb);
    m = mid_s(m, capture ? &f.attn : nullptr);
    f.mid = mid2(mid_x(m, context), temb);
    return f;
}

DenoiserImpl::DenoiserImpl(DenoiserOptions o) : opts(o) {
    const int w = o.width, c = o.latent_channels, temb = 4 * w;
    time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(w, temb), torch::nn::SiLU(),
                                                                 torch::nn::Linear(temb, temb)));
    encoder = register_module("encoder", UNetEncoder(w, c, o.context_dim, temb));
    conv_in_stroke = register_module("conv_in_stroke", conv3x3(c + 1, w, 1, false));
    dec2 = register_module("dec2", ResBlock(4 * w, 2 * w, temb));
    dec2_x = register_module("dec2_x", CrossAttention(2 * w, o.context_dim, heads_for(2 * w)));
    up = register_module("up", conv3x3(2 * w, w));
    dec1 = register_module("dec1", ResBlock(2 * w, w, temb));
    dec1_x = register_module("dec1_x", CrossAttention(w, o.context_dim, heads_for(w)));
    out_norm = register_module("out_norm", group_norm(w));
    out_conv = register_module("out_conv", conv3x3(w, c));

    control = register_module("control", UNetEncoder(w, c, o.context_dim, temb));
    control_hint = register_module("control_hint", conv3x3(c, w));
    zc1 = register_module("zc1", zero_conv(w, w));
    zc2 = register_module("zc2", zero_conv(2 * w, 2 * w));
    zc_mid = register_module("zc_mid", zero_conv(2 * w, 2 * w));
    torch::NoGradGuard g;
    conv_in_stroke->weight.zero_();
    control_hint->weight.zero_();
    control_hint->bias.zero_();
}

DenoiseOutput DenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& context,
                                    const torch::Tensor& control_input, bool capture_attention) {
    const int c = opts.latent_channels;
    if (x.dim() != 4 || (x.size(1) != c && x.size(1) != 2 * c + 1)) {
        std::ostringstream os;
        os << "denoiser: input must have " << c << " or " << 2 * c + 1 << " channels, got " << x.sizes();
        throw std::invalid_argument(os.str());
    }
    if (context.dim() != 3 || context.size(2) != opts.context_dim || context.size(0) != x.size(0)) {
        std::ostringstream os;
        os << "denoiser: context must be [" << x.size(0) << ", L, " << opts.context_dim << "], got " << context.sizes();
        throw std::invalid_argument(os.str());
    }
    const auto temb = time_mlp->forward(timestep_embedding(t, opts.width));
    const auto x_t = x.narrow(1, 0, c);
    auto h0 = encoder->conv_in(x_t);
    if (x.size(1) > c) h0 = h0 + conv_in_stroke(x.narrow(1, c, c + 1));

    auto f = encoder->forward(h0, temb, context, capture_attention);
    if (control_input.defined()) {
        auto c0 = control->conv_in(x_t) + control_hint(control_input);
        auto cf = control->forward(c0, temb, context, false);
        f.s1 = f.s1 + zc1(cf.s1);
        f.s2 = f.s2 + zc2(cf.s2);
        f.mid = f.mid + zc_mid(cf.mid);
    }
    auto h = dec2_x(dec2(torch::cat({f.mid, f.s2}, 1), temb), context);
    // sized to the skip so odd latent sides survive the stride-2 round trip
    h = up(F::interpolate(h, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{f.s1.size(2), f.s1.size(3)})
                                 .mode(torch::kNearest)));
    h = dec1_x(dec1(torch::cat({h, f.s1}, 1), temb), context);
    DenoiseOutput out;
    out.eps = out_conv(F::silu(out_norm(h)));
    if (capture_attention) {
        out.attention_maps.push_back(f.attn);
        out.attention_grids.push_back({f.s2.size(2), f.s2.size(3)});
    }
    return out;
}

void DenoiserImpl::init_control_from_locked() {
    torch::NoGradGuard g;
    auto src = encoder->named_parameters(true);
    auto dst = control->named_parameters(true);
    for (const auto& item : src) dst[item.key()].copy_(item.value());
}

std::vector<torch::Tensor> DenoiserImpl::locked_parameters() {
    std::vector<torch::Tensor> out;
    append(out, *time_mlp);
    append(out, *encoder);
    for (auto* m : std::vector<torch::nn::Module*>{dec2.get(), dec2_x.get(), up.get(), dec1.get(), dec1_x.get(),
                                                   out_norm.get(), out_conv.get()}) {
        append(out, *m);
    }
    return out;
}

std::vector<torch::Tensor> DenoiserImpl::control_parameters() {
    std::vector<torch::Tensor> out;
    append(out, *control);
    for (auto* m : std::vector<torch::nn::Module*>{control_hint.get(), zc1.get(), zc2.get(), zc_mid.get()}) {
        append(out, *m);
    }
    return out;
}

std::vector<torch::Tensor> DenoiserImpl::stroke_parameters() { return conv_in_stroke->parameters(); }

torch::Tensor downsample_mask_nearest(const torch::Tensor& mask, int factor) {
    const auto H = mask.size(-2), W = mask.size(-1);
    check_divisible(static_cast<int>(H), static_cast<int>(W), factor, "downsample_mask_nearest");
    auto rows = torch::arange(H / factor, torch::kLong) * factor + factor / 2;
    auto cols = torch::arange(W / factor, torch::kLong) * factor + factor / 2;
    return mask.index_select(-2, rows).index_select(-1, cols);
}

StrokeCondition encode_stroke_condition(Autoencoder& ae, const torch::Tensor& gray, const torch::Tensor& hint,
                                        const torch::Tensor& mask) {
    if (!gray.sizes().equals(hint.sizes()) || mask.size(-2) != gray.size(-2) || mask.size(-1) != gray.size(-1)) {
        throw std::invalid_argument("encode_stroke_condition: gray, hint and mask must share H x W");
    }
    check_divisible(static_cast<int>(gray.size(2)), static_cast<int>(gray.size(3)), AutoencoderImpl::kFactor,
                    "encode_stroke_condition");
    torch::NoGradGuard g;
    StrokeCondition c;
    c.z_i = ae->encode(gray);
    c.z_s = ae->encode(hint);
    c.z_m = downsample_mask_nearest(mask, AutoencoderImpl::kFactor).gt(0.5).to(torch::kFloat32);
    return c;
}

StrokeCondition encode_stroke_condition(Autoencoder& ae, const GrayImage& gray, const RgbImage& hint,
                                        const GrayImage& mask) {
    if (gray.height != hint.height || gray.width != hint.width || gray.height != mask.height ||
        gray.width != mask.width) {
        std::ostringstream os;
        os << "encode_stroke_condition: gray " << gray.height << "x" << gray.width << ", hint " << hint.height << "x"
           << hint.width << ", mask " << mask.height << "x" << mask.width << " differ";
        throw std::invalid_argument(os.str());
    }
    return encode_stroke_condition(ae, image_to_tensor(gray_to_rgb(gray)).unsqueeze(0),
                                   image_to_tensor(hint).unsqueeze(0), plane_to_tensor(mask).unsqueeze(0));
}

torch::Tensor control_training_loss(const torch::Tensor& eps_pred, const torch::Tensor& eps_true) {
    if (!eps_pred.sizes().equals(eps_true.sizes())) throw std::invalid_argument("control_training_loss: shape mismatch");
    return (eps_pred - eps_true).pow(2).mean();
}

}  // namespace chroma
