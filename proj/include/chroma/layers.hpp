#pragma once

#include <torch/torch.h>

namespace chroma {

/// Sinusoidal embedding of integer steps; [B] -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int dim, double max_period = 10000.0);

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1, bool bias = true);
/// 1x1 convolution with weight and bias set to exactly zero.
torch::nn::Conv2d zero_conv(int in, int out);
torch::nn::GroupNorm group_norm(int channels);

/// Pre-norm residual block; temb_dim 0 builds it without a time input.
struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int in, int out, int temb_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Linear temb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Multi-head attention over spatial positions. When `maps` is given the
/// post-softmax similarity [B, heads, N, N] is written to it.
struct SelfAttentionImpl : torch::nn::Module {
    SelfAttentionImpl(int channels, int heads);
    torch::Tensor forward(const torch::Tensor& x, torch::Tensor* maps = nullptr);

    int heads;
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv2d qkv{nullptr}, proj{nullptr};
};
TORCH_MODULE(SelfAttention);

/// Spatial queries attend over a context sequence [B, L, context_dim].
struct CrossAttentionImpl : torch::nn::Module {
    CrossAttentionImpl(int channels, int context_dim, int heads);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

    int heads;
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv2d q{nullptr}, proj{nullptr};
    torch::nn::Linear k{nullptr}, v{nullptr};
};
TORCH_MODULE(CrossAttention);

/// softmax(q k^T / sqrt(d)) v over [B, heads, N, d] tensors.
torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                        torch::Tensor* maps = nullptr);

void set_requires_grad(torch::nn::Module& module, bool flag);
void set_requires_grad(const std::vector<torch::Tensor>& params, bool flag);

}  // namespace chroma
