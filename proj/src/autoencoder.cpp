#include "chroma/autoencoder.hpp"

#include <sstream>
#include <stdexcept>

#include "chroma/conditioning.hpp"
#include "chroma/tensor_image.hpp"

namespace chroma {

namespace F = torch::nn::functional;

namespace {

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace

void check_divisible(int height, int width, int factor, const char* who) {
    if (height % factor == 0 && width % factor == 0) return;
    const int ph = (factor - height % factor) % factor, pw = (factor - width % factor) % factor;
    std::ostringstream os;
    os << who << ": " << height << "x" << width << " is not divisible by " << factor << "; pad by " << ph
       << " rows and " << pw << " columns";
    throw std::invalid_argument(os.str());
}

AutoencoderImpl::AutoencoderImpl(int width_, int latent_channels_) : width(width_), latent_channels(latent_channels_) {
    const int w = width, w2 = 2 * width, w4 = 4 * width;
    enc_in = register_module("enc_in", conv3x3(3, w));
    enc_b1 = register_module("enc_b1", ResBlock(w, w, 0));
    enc_d1 = register_module("enc_d1", conv3x3(w, w2, 2));
    enc_b2 = register_module("enc_b2", ResBlock(w2, w2, 0));
    enc_d2 = register_module("enc_d2", conv3x3(w2, w4, 2));
    enc_b3 = register_module("enc_b3", ResBlock(w4, w4, 0));
    enc_d3 = register_module("enc_d3", conv3x3(w4, w4, 2));
    enc_mid = register_module("enc_mid", ResBlock(w4, w4, 0));
    enc_norm = register_module("enc_norm", group_norm(w4));
    enc_out = register_module("enc_out", conv3x3(w4, latent_channels));

    dec_in = register_module("dec_in", conv3x3(latent_channels, w4));
    dec_mid = register_module("dec_mid", ResBlock(w4, w4, 0));
    dec_b1 = register_module("dec_b1", ResBlock(w4, w4, 0));
    dec_u1 = register_module("dec_u1", conv3x3(w4, w4));
    dec_b2 = register_module("dec_b2", ResBlock(w4, w2, 0));
    dec_u2 = register_module("dec_u2", conv3x3(w2, w2));
    dec_b3 = register_module("dec_b3", ResBlock(w2, w, 0));
    dec_u3 = register_module("dec_u3", conv3x3(w, w));
    dec_b4 = register_module("dec_b4", ResBlock(w, w, 0));
    dec_norm = register_module("dec_norm", group_norm(w));
    dec_out = register_module("dec_out", conv3x3(w, 3));
    scale = register_buffer("scale", torch::ones({1}));
}

std::array<int, 3> AutoencoderImpl::block_channels() const { return {4 * width, 2 * width, width}; }

torch::Tensor AutoencoderImpl::encode(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != 3) throw std::invalid_argument("encode: expected [B,3,H,W]");
    check_divisible(static_cast<int>(x.size(2)), static_cast<int>(x.size(3)), kFactor, "encode");
    torch::Tensor none;
    auto h = enc_in(x);
    h = enc_d1(enc_b1(h, none));
    h = enc_d2(enc_b2(h, none));
    h = enc_d3(enc_b3(h, none));
    h = enc_out(F::silu(enc_norm(enc_mid(h, none))));
    return h * scale;
}

torch::Tensor AutoencoderImpl::decode_with(const torch::Tensor& z,
                                           const std::function<torch::Tensor(int, const torch::Tensor&)>& after) {
    if (z.dim() != 4 || z.size(1) != latent_channels) {
        std::ostringstream os;
        os << "decode: expected " << latent_channels << " latent channels, got shape " << z.sizes();
        throw std::invalid_argument(os.str());
    }
    torch::Tensor none;
    auto h = dec_mid(dec_in(z / scale), none);
    h = dec_u1(upsample2(dec_b1(h, none)));
    if (after) h = after(0, h);
    h = dec_u2(upsample2(dec_b2(h, none)));
    if (after) h = after(1, h);
    h = dec_u3(upsample2(dec_b3(h, none)));
    if (after) h = after(2, h);
    h = dec_b4(h, none);
    return dec_out(F::silu(dec_norm(h)));
}

torch::Tensor AutoencoderImpl::decode(const torch::Tensor& z) { return decode_with(z, {}); }

torch::Tensor encode_image(Autoencoder& ae, const RgbImage& img) {
    torch::NoGradGuard g;
    return ae->encode(image_to_tensor(img).unsqueeze(0));
}

RgbImage decode_latent(Autoencoder& ae, const torch::Tensor& z) {
    torch::NoGradGuard g;
    return tensor_to_image(ae->decode(z.dim() == 3 ? z.unsqueeze(0) : z));
}

torch::Tensor deform_conv2d(const torch::Tensor& x, const torch::Tensor& offsets, const torch::Tensor& weight,
                            const torch::Tensor& bias) {
    const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    if (H < 2 || W < 2) throw std::invalid_argument("deform_conv2d: need at least 2x2 features");
    if (offsets.size(1) != 18 || offsets.size(2) != H || offsets.size(3) != W) {
        throw std::invalid_argument("deform_conv2d: offsets must be [B,18,H,W]");
    }
    const auto opts = x.options();
    auto ys = torch::arange(H, opts).view({1, 1, H, 1});
    auto xs = torch::arange(W, opts).view({1, 1, 1, W});
    auto tap = torch::arange(9, opts.dtype(torch::kLong));
    auto dy = (tap.div(3, "floor") - 1).to(x.scalar_type()).view({1, 9, 1, 1});
    auto dx = (tap.remainder(3) - 1).to(x.scalar_type()).view({1, 9, 1, 1});
    auto off = offsets.view({B, 9, 2, H, W});
    auto py = ys + dy + off.select(2, 0);  // [B,9,H,W]
    auto px = xs + dx + off.select(2, 1);
    // bilinear sampling in pixel space so integer positions are read exactly
    auto y0 = py.floor(), x0 = px.floor();
    auto wy = py - y0, wx = px - x0;
    auto flat = x.reshape({B, C, H * W});
    auto sampled = torch::zeros({B, C, 9 * H * W}, opts);
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            auto yy = y0 + a, xx = x0 + b;
            auto w = (a ? wy : 1 - wy) * (b ? wx : 1 - wx);
            auto valid = (yy >= 0) & (yy <= H - 1) & (xx >= 0) & (xx <= W - 1);
            auto idx = (yy.clamp(0, H - 1) * W + xx.clamp(0, W - 1)).to(torch::kLong).view({B, 1, 9 * H * W});
            auto v = flat.gather(2, idx.expand({B, C, 9 * H * W}));
            sampled = sampled + v * (w * valid.to(w.scalar_type())).view({B, 1, 9 * H * W});
        }
    }
    auto cols = sampled.view({B, C * 9, H * W});
    auto out = torch::matmul(weight.reshape({weight.size(0), C * 9}), cols).view({B, weight.size(0), H, W});
    return bias.defined() ? out + bias.view({1, -1, 1, 1}) : out;
}

DeformLayerImpl::DeformLayerImpl(int channels, int guide_channels, double max_offset_) : max_offset(max_offset_) {
    offset_pred = register_module("offset_pred", conv3x3(channels + guide_channels, 18));
    auto w = torch::zeros({channels, channels, 3, 3});
    {
        torch::NoGradGuard g;
        offset_pred->weight.zero_();
        offset_pred->bias.zero_();
        for (int c = 0; c < channels; ++c) w[c][c][1][1] = 1.0;
    }
    weight = register_parameter("weight", w);
    bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor DeformLayerImpl::offsets(const torch::Tensor& x, const torch::Tensor& guide) {
    auto g = F::interpolate(guide, F::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{x.size(2), x.size(3)})
                                       .mode(torch::kBilinear)
                                       .align_corners(false));
    return offset_pred(torch::cat({x, g}, 1)).clamp(-max_offset, max_offset);
}

torch::Tensor DeformLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& guide, bool zero_offsets) {
    auto off = zero_offsets ? torch::zeros({x.size(0), 18, x.size(2), x.size(3)}, x.options()) : offsets(x, guide);
    return deform_conv2d(x, off, weight, bias);
}

DeformableDecoderImpl::DeformableDecoderImpl(std::array<int, 3> channels, int guide_channels) {
    l1 = register_module("l1", DeformLayer(channels[0], guide_channels));
    l2 = register_module("l2", DeformLayer(channels[1], guide_channels));
    l3 = register_module("l3", DeformLayer(channels[2], guide_channels));
}

torch::Tensor decode_deformable(Autoencoder& ae, DeformableDecoder& def, const torch::Tensor& z,
                                const torch::Tensor& gray_guidance, bool zero_offsets) {
    if (!gray_guidance.sizes().equals(z.sizes())) {
        std::ostringstream os;
        os << "decode_deformable: guidance shape " << gray_guidance.sizes() << " differs from latent " << z.sizes();
        throw std::invalid_argument(os.str());
    }
    return ae->decode_with(z, [&](int i, const torch::Tensor& h) {
        return def->layer(i)->forward(h, gray_guidance, zero_offsets);
    });
}

torch::Tensor decode_plain_kernels(Autoencoder& ae, DeformableDecoder& def, const torch::Tensor& z) {
    return ae->decode_with(z, [&](int i, const torch::Tensor& h) {
        auto layer = def->layer(i);
        return F::conv2d(h, layer->weight, F::Conv2dFuncOptions().bias(layer->bias).padding(1));
    });
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int width) {
    c1 = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, width, 4).stride(2).padding(1)));
    c2 = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 2 * width, 4).stride(2).padding(1)));
    n2 = register_module("n2", group_norm(2 * width));
    c3 = register_module("c3", conv3x3(2 * width, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
    auto h = F::leaky_relu(c1(x), F::LeakyReLUFuncOptions().negative_slope(0.2));
    h = F::leaky_relu(n2(c2(h)), F::LeakyReLUFuncOptions().negative_slope(0.2));
    return c3(h);
}

DeformableTrainer::DeformableTrainer(Autoencoder ae_, DeformableDecoder def_, std::shared_ptr<FeatureExtractorImpl> fx_,
                                     double lr, int adversarial_start_, double adversarial_weight_)
    : ae(std::move(ae_)),
      def(std::move(def_)),
      disc(PatchDiscriminator()),
      fx(std::move(fx_)),
      adversarial_start(adversarial_start_),
      adversarial_weight(adversarial_weight_) {
    set_requires_grad(*ae, false);
    set_requires_grad(*fx, false);
    opt_g = std::make_unique<torch::optim::AdamW>(def->parameters(),
                                                  torch::optim::AdamWOptions(lr).betas({0.5, 0.999}).weight_decay(0));
    opt_d = std::make_unique<torch::optim::AdamW>(disc->parameters(),
                                                  torch::optim::AdamWOptions(lr).betas({0.5, 0.999}).weight_decay(0));
}

DeformableLossRecord DeformableTrainer::step(int step_index, const DeformableBatch& batch) {
    DeformableLossRecord rec;
    rec.step = step_index;
    rec.adversarial_active = step_index >= adversarial_start;
    torch::Tensor z, guide;
    {
        torch::NoGradGuard g;
        z = ae->encode(batch.deformed);
        guide = ae->encode(batch.gray);
    }
    auto out = decode_deformable(ae, def, z, guide);
    auto perceptual = perceptual_loss(*fx, out, batch.clean);
    auto total = perceptual;
    if (rec.adversarial_active) {
        auto gen = -disc->forward(out).mean();
        total = perceptual + adversarial_weight * gen;
        rec.adversarial = gen.item<double>();
    }
    opt_g->zero_grad();
    total.backward();
    opt_g->step();
    rec.perceptual = perceptual.item<double>();
    rec.total = total.item<double>();

    if (rec.adversarial_active) {
        auto real = disc->forward(batch.clean);
        auto fake = disc->forward(out.detach());
        auto d_loss = torch::relu(1.0 - real).mean() + torch::relu(1.0 + fake).mean();
        opt_d->zero_grad();
        d_loss.backward();
        opt_d->step();
        rec.discriminator = d_loss.item<double>();
    }
    return rec;
}

}  // namespace chroma
