#include "chroma/layers.hpp"

#include <cmath>

namespace chroma {

namespace F = torch::nn::functional;

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim, double max_period) {
    const int half = dim / 2;
    auto freqs = torch::exp(-std::log(max_period) * torch::arange(half, torch::kFloat32) / half);
    auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
    if (dim % 2) emb = torch::cat({emb, torch::zeros({emb.size(0), 1})}, 1);
    return emb;
}

torch::nn::Conv2d conv3x3(int in, int out, int stride, bool bias) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(bias));
}

torch::nn::Conv2d zero_conv(int in, int out) {
    torch::nn::Conv2d c(torch::nn::Conv2dOptions(in, out, 1));
    torch::NoGradGuard g;
    c->weight.zero_();
    c->bias.zero_();
    return c;
}

torch::nn::GroupNorm group_norm(int channels) { return torch::nn::GroupNorm(torch::nn::GroupNormOptions(8, channels)); }

ResBlockImpl::ResBlockImpl(int in, int out, int temb_dim) {
    norm1 = register_module("norm1", group_norm(in));
    conv1 = register_module("conv1", conv3x3(in, out));
    if (temb_dim > 0) temb_proj = register_module("temb_proj", torch::nn::Linear(temb_dim, out));
    norm2 = register_module("norm2", group_norm(out));
    conv2 = register_module("conv2", conv3x3(out, out));
    if (in != out) skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1(F::silu(norm1(x)));
    if (temb_proj && temb.defined()) h = h + temb_proj(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(F::silu(norm2(h)));
    return (skip ? skip(x) : x) + h;
}

torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v, torch::Tensor* maps) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
    auto w = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
    if (maps) *maps = w;
    return torch::matmul(w, v);
}

SelfAttentionImpl::SelfAttentionImpl(int channels, int heads_) : heads(heads_) {
    norm = register_module("norm", group_norm(channels));
    qkv = register_module("qkv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 3 * channels, 1)));
    proj = register_module("proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x, torch::Tensor* maps) {
    const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const auto d = C / heads;
    auto parts = qkv(norm(x)).reshape({B, 3, heads, d, H * W}).transpose(-2, -1).unbind(1);
    auto out = attention(parts[0], parts[1], parts[2], maps);  // [B, heads, N, d]
    out = out.transpose(-2, -1).reshape({B, C, H, W});
    return x + proj(out);
}

CrossAttentionImpl::CrossAttentionImpl(int channels, int context_dim, int heads_) : heads(heads_) {
    norm = register_module("norm", group_norm(channels));
    q = register_module("q", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
    k = register_module("k", torch::nn::Linear(context_dim, channels));
    v = register_module("v", torch::nn::Linear(context_dim, channels));
    proj = register_module("proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
    const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const auto d = C / heads;
    const auto L = context.size(1);
    auto qh = q(norm(x)).reshape({B, heads, d, H * W}).transpose(-2, -1);
    auto kh = k(context).reshape({B, L, heads, d}).transpose(1, 2);
    auto vh = v(context).reshape({B, L, heads, d}).transpose(1, 2);
    auto out = attention(qh, kh, vh).transpose(-2, -1).reshape({B, C, H, W});
    return x + proj(out);
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
    for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

void set_requires_grad(const std::vector<torch::Tensor>& params, bool flag) {
    for (auto p : params) p.set_requires_grad(flag);
}

}  // namespace chroma
