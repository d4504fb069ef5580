#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "chroma/autoencoder.hpp"
#include "chroma/color_math.hpp"
#include "chroma/layers.hpp"

namespace chroma {

struct DenoiseOutput {
    torch::Tensor eps;
    /// Post-softmax self-attention maps [B, heads, N, N], coarsest block first.
    std::vector<torch::Tensor> attention_maps;
    /// (rows, cols) of the token grid behind each map.
    std::vector<std::array<int64_t, 2>> attention_grids;
};

/// The encoder half shared by the locked network and its trainable copy.
struct UNetEncoderImpl : torch::nn::Module {
    UNetEncoderImpl(int width, int latent_channels, int context_dim, int temb_dim);

    struct Features {
        torch::Tensor s1, s2, mid;
        torch::Tensor attn;
    };
    Features forward(const torch::Tensor& h0, const torch::Tensor& temb, const torch::Tensor& context, bool capture);

    torch::nn::Conv2d conv_in{nullptr}, down{nullptr};
    ResBlock enc1{nullptr}, enc2{nullptr}, mid1{nullptr}, mid2{nullptr};
    CrossAttention enc1_x{nullptr}, enc2_x{nullptr}, mid_x{nullptr};
    SelfAttention mid_s{nullptr};
};
TORCH_MODULE(UNetEncoder);

struct DenoiserOptions {
    int latent_channels = 4;
    int width = 64;
    int context_dim = 64;
};

/// Two-level U-Net (full latent resolution and half) with self-attention at
/// the lower level and cross-attention in every block, plus a trainable copy
/// of its encoder whose features enter through zero-initialised 1x1 convs.
///
/// The locked input is either the 4-channel noisy latent or the 9-channel
/// (x_t, z_m, z_s) stack; the extra five channels go through a separate
/// zero-initialised convolution that is summed with the base input conv.
struct DenoiserImpl : torch::nn::Module {
    explicit DenoiserImpl(DenoiserOptions opts = {});

    /// `control_input` (z_i) may be undefined, in which case the control branch
    /// is skipped. Rejects context of the wrong dimension.
    DenoiseOutput forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& context,
                          const torch::Tensor& control_input, bool capture_attention = false);

    /// Copies the locked encoder weights into the control branch.
    void init_control_from_locked();

    std::vector<torch::Tensor> locked_parameters();
    std::vector<torch::Tensor> control_parameters();  // copy, hint conv, connectors
    std::vector<torch::Tensor> stroke_parameters();   // the five extra input channels

    DenoiserOptions opts;
    torch::nn::Sequential time_mlp{nullptr};
    UNetEncoder encoder{nullptr};
    torch::nn::Conv2d conv_in_stroke{nullptr};
    ResBlock dec2{nullptr}, dec1{nullptr};
    CrossAttention dec2_x{nullptr}, dec1_x{nullptr};
    torch::nn::Conv2d up{nullptr};
    torch::nn::GroupNorm out_norm{nullptr};
    torch::nn::Conv2d out_conv{nullptr};

    UNetEncoder control{nullptr};
    torch::nn::Conv2d control_hint{nullptr};
    torch::nn::Conv2d zc1{nullptr}, zc2{nullptr}, zc_mid{nullptr};
};
TORCH_MODULE(Denoiser);

// ---------------------------------------------------------------------------

struct StrokeCondition {
    torch::Tensor z_i;  // [B,4,h,w]
    torch::Tensor z_m;  // [B,1,h,w] in {0,1}
    torch::Tensor z_s;  // [B,4,h,w]
    /// (z_i, z_m, z_s) along channels.
    torch::Tensor z_tilde() const { return torch::cat({z_i, z_m, z_s}, 1); }
    /// The locked network input at step t: z_tilde with z_i replaced by x_t.
    torch::Tensor locked_input(const torch::Tensor& x_t) const { return torch::cat({x_t, z_m, z_s}, 1); }
};

/// Nearest-neighbour downsampling of a [B,1,H,W] mask by `factor`: latent cell
/// (i,j) takes pixel (floor((i+0.5)f), floor((j+0.5)f)), i.e. the cell centre.
torch::Tensor downsample_mask_nearest(const torch::Tensor& mask, int factor);

/// Batched form: gray/hint [B,3,H,W] in [-1,1], mask [B,1,H,W].
StrokeCondition encode_stroke_condition(Autoencoder& ae, const torch::Tensor& gray, const torch::Tensor& hint,
                                        const torch::Tensor& mask);
StrokeCondition encode_stroke_condition(Autoencoder& ae, const GrayImage& gray, const RgbImage& hint,
                                        const GrayImage& mask);

/// Mean squared error between true and predicted noise.
torch::Tensor control_training_loss(const torch::Tensor& eps_pred, const torch::Tensor& eps_true);

}  // namespace chroma
