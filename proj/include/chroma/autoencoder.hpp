#pragma once

#include <torch/torch.h>

#include "chroma/color_math.hpp"
#include "chroma/layers.hpp"

namespace chroma {

struct FeatureExtractorImpl;

/// Factor-8 image codec. Images are [B,3,H,W] in [-1,1]; latents are
/// [B,C,H/8,W/8] and already multiplied by the stored scale factor.
struct AutoencoderImpl : torch::nn::Module {
    static constexpr int kFactor = 8;

    explicit AutoencoderImpl(int width = 16, int latent_channels = 4);

    torch::Tensor encode(const torch::Tensor& x);
    torch::Tensor decode(const torch::Tensor& z);
    /// Runs the decoder trunk; `after_block(i, h)` may replace the features
    /// after each of the first three upsampling blocks (i = 0,1,2).
    torch::Tensor decode_with(const torch::Tensor& z,
                              const std::function<torch::Tensor(int, const torch::Tensor&)>& after_block);
    /// Channel counts after decoder blocks 0..2.
    std::array<int, 3> block_channels() const;

    int width, latent_channels;
    torch::Tensor scale;  // buffer

    // encoder
    torch::nn::Conv2d enc_in{nullptr};
    ResBlock enc_b1{nullptr}, enc_b2{nullptr}, enc_b3{nullptr}, enc_mid{nullptr};
    torch::nn::Conv2d enc_d1{nullptr}, enc_d2{nullptr}, enc_d3{nullptr};
    torch::nn::GroupNorm enc_norm{nullptr};
    torch::nn::Conv2d enc_out{nullptr};
    // decoder
    torch::nn::Conv2d dec_in{nullptr};
    ResBlock dec_mid{nullptr}, dec_b1{nullptr}, dec_b2{nullptr}, dec_b3{nullptr}, dec_b4{nullptr};
    torch::nn::Conv2d dec_u1{nullptr}, dec_u2{nullptr}, dec_u3{nullptr};
    torch::nn::GroupNorm dec_norm{nullptr};
    torch::nn::Conv2d dec_out{nullptr};
};
TORCH_MODULE(Autoencoder);

/// Rejects sizes that are not multiples of the factor, reporting the padding needed.
void check_divisible(int height, int width, int factor, const char* who);

torch::Tensor encode_image(Autoencoder& ae, const RgbImage& img);
RgbImage decode_latent(Autoencoder& ae, const torch::Tensor& z);

/// Bilinear deformable 3x3 convolution (stride 1, padding 1, one offset group).
/// offsets: [B,18,H,W] laid out as (dy, dx) per tap in row-major tap order.
torch::Tensor deform_conv2d(const torch::Tensor& x, const torch::Tensor& offsets, const torch::Tensor& weight,
                            const torch::Tensor& bias);

/// Deformable layer whose offsets come from the features concatenated with the
/// resolution-matched guidance latent. Kernels start as the identity and the
/// offset predictor at zero.
struct DeformLayerImpl : torch::nn::Module {
    DeformLayerImpl(int channels, int guide_channels, double max_offset = 4.0);
    torch::Tensor offsets(const torch::Tensor& x, const torch::Tensor& guide);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& guide, bool zero_offsets = false);

    double max_offset;
    torch::nn::Conv2d offset_pred{nullptr};
    torch::Tensor weight, bias;
};
TORCH_MODULE(DeformLayer);

struct DeformableDecoderImpl : torch::nn::Module {
    DeformableDecoderImpl(std::array<int, 3> channels, int guide_channels);
    DeformLayer l1{nullptr}, l2{nullptr}, l3{nullptr};
    DeformLayer layer(int i) const { return i == 0 ? l1 : i == 1 ? l2 : l3; }
};
TORCH_MODULE(DeformableDecoder);

/// Decoder pass with a deformable layer after each of the first three blocks.
torch::Tensor decode_deformable(Autoencoder& ae, DeformableDecoder& def, const torch::Tensor& z,
                                const torch::Tensor& gray_guidance, bool zero_offsets = false);

/// Same pass but each deformable layer replaced by a plain convolution with
/// the layer's kernels.
torch::Tensor decode_plain_kernels(Autoencoder& ae, DeformableDecoder& def, const torch::Tensor& z);

struct PatchDiscriminatorImpl : torch::nn::Module {
    explicit PatchDiscriminatorImpl(int width = 32);
    torch::Tensor forward(const torch::Tensor& x);
    torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
    torch::nn::GroupNorm n2{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct DeformableBatch {
    torch::Tensor deformed;  // [B,3,H,W] in [-1,1]
    torch::Tensor clean;
    torch::Tensor gray;
};

struct DeformableLossRecord {
    int step = 0;
    double perceptual = 0;
    double adversarial = 0;      // generator hinge term
    double discriminator = 0;    // critic hinge loss
    double total = 0;
    bool adversarial_active = false;
};

struct DeformableTrainer {
    DeformableTrainer(Autoencoder ae, DeformableDecoder def, std::shared_ptr<FeatureExtractorImpl> fx, double lr,
                      int adversarial_start = 500, double adversarial_weight = 0.025);

    /// Perceptual loss before `adversarial_start`, then perceptual plus weighted
    /// generator hinge loss; the critic trains from the same step on.
    DeformableLossRecord step(int step_index, const DeformableBatch& batch);

    Autoencoder ae;
    DeformableDecoder def;
    PatchDiscriminator disc;
    std::shared_ptr<FeatureExtractorImpl> fx;
    int adversarial_start;
    double adversarial_weight;
    std::unique_ptr<torch::optim::AdamW> opt_g, opt_d;
};

}  // namespace chroma
