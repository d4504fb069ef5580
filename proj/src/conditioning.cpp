#include "chroma/conditioning.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>

#include "chroma/random.hpp"

namespace chroma {

namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace

std::vector<std::string> tokenize_prompt(const std::string& prompt) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : prompt) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

float token_component(const std::string& token, int k) {
    const std::uint64_t bits = splitmix64(fnv1a64(token) + static_cast<std::uint64_t>(k)) >> 11;
    const double u = static_cast<double>(bits) * 0x1.0p-53;
    return static_cast<float>(2.0 * u - 1.0);
}

torch::Tensor HashTextEmbedder::embed(const std::string& prompt) const {
    auto out = torch::zeros({tokens, dim});
    auto acc = out.accessor<float, 2>();
    const auto toks = tokenize_prompt(prompt);
    for (std::size_t i = 0; i < toks.size(); ++i) {
        const int row = std::min<int>(static_cast<int>(i), tokens - 1);
        for (int k = 0; k < dim; ++k) acc[row][k] += token_component(toks[i], k);
    }
    return out;
}

torch::Tensor HashTextEmbedder::null_embedding() const { return torch::zeros({tokens, dim}); }

ExemplarEmbedderImpl::ExemplarEmbedderImpl(int tokens_, int dim_, int width) : tokens(tokens_), dim(dim_) {
    c1 = register_module("c1", conv3x3(3, width, 2));
    c2 = register_module("c2", conv3x3(width, 2 * width, 2));
    c3 = register_module("c3", conv3x3(2 * width, 2 * width, 2));
    proj = register_module("proj", torch::nn::Linear(2 * width, dim));
    torch::NoGradGuard g;
    proj->weight.zero_();
    proj->bias.zero_();
}

torch::Tensor ExemplarEmbedderImpl::forward(const torch::Tensor& img) {
    auto h = lrelu(c3(lrelu(c2(lrelu(c1(img))))));
    // tokens laid out on a square grid of pooled cells
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens))));
    if (side * side != tokens) throw std::invalid_argument("ExemplarEmbedder: token count must be a square");
    h = F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions({side, side}));
    h = h.flatten(2).transpose(1, 2);  // [B, tokens, C]
    return proj(h);
}

torch::Tensor build_context(const torch::Tensor& text, const torch::Tensor& exemplar, int exemplar_tokens) {
    auto ex = exemplar.defined() ? exemplar : torch::zeros({text.size(0), exemplar_tokens, text.size(2)}, text.options());
    if (ex.size(1) != exemplar_tokens || ex.size(2) != text.size(2)) {
        throw std::invalid_argument("build_context: exemplar tokens have the wrong shape");
    }
    return torch::cat({text, ex}, 1);
}

FeatureExtractorImpl::FeatureExtractorImpl(int w) {
    b1 = register_module("b1", conv3x3(3, w));
    b2 = register_module("b2", conv3x3(w, 2 * w, 2));
    b3 = register_module("b3", conv3x3(2 * w, 4 * w, 2));
    b4 = register_module("b4", conv3x3(4 * w, 4 * w, 2));
    b5 = register_module("b5", conv3x3(4 * w, 8 * w, 2));
    u1 = register_module("u1", conv3x3(8 * w, 4 * w));
    u2 = register_module("u2", conv3x3(4 * w, 4 * w));
    u3 = register_module("u3", conv3x3(4 * w, 2 * w));
    u4 = register_module("u4", conv3x3(2 * w, w));
    u_out = register_module("u_out", conv3x3(w, 3));
}

std::array<torch::Tensor, 3> FeatureExtractorImpl::features(const torch::Tensor& img) {
    auto h = lrelu(b2(lrelu(b1(img))));
    auto f3 = lrelu(b3(h));
    auto f4 = lrelu(b4(f3));
    auto f5 = lrelu(b5(f4));
    return {f3, f4, f5};
}

torch::Tensor FeatureExtractorImpl::reconstruct(const torch::Tensor& img) {
    auto h = features(img)[2];
    h = lrelu(u1(upsample2(h)));
    h = lrelu(u2(upsample2(h)));
    h = lrelu(u3(upsample2(h)));
    h = lrelu(u4(upsample2(h)));
    return torch::tanh(u_out(h));
}

torch::Tensor flatten_features(const torch::Tensor& f) { return f.flatten(1).transpose(0, 1); }

torch::Tensor cosine_distance(const torch::Tensor& gen, const torch::Tensor& ex) {
    auto ng = gen.norm(2, 1, true), ne = ex.norm(2, 1, true);
    if (ng.min().item<double>() == 0.0 || ne.min().item<double>() == 0.0) {
        throw std::invalid_argument("contextual_loss: zero feature vector, cosine undefined");
    }
    return 1.0 - torch::matmul(gen / ng, (ex / ne).transpose(0, 1));
}

torch::Tensor normalize_distance(const torch::Tensor& d, double eps) {
    return d / (std::get<0>(d.min(1, true)) + eps);
}

torch::Tensor contextual_term_from_normalized(const torch::Tensor& dtilde, double h) {
    auto a = torch::softmax((1.0 - dtilde) / h, 1);
    return -torch::log(std::get<0>(a.max(1)).mean());
}

torch::Tensor contextual_term(const torch::Tensor& gen, const torch::Tensor& ex, double h) {
    return contextual_term_from_normalized(normalize_distance(cosine_distance(gen, ex)), h);
}

torch::Tensor contextual_loss(FeatureExtractorImpl& fx, const torch::Tensor& exemplar, const torch::Tensor& generated) {
    if (exemplar.size(0) != generated.size(0)) throw std::invalid_argument("contextual_loss: batch mismatch");
    const auto fe = fx.features(exemplar);
    const auto fg = fx.features(generated);
    torch::Tensor total = torch::zeros({}, generated.options());
    for (int64_t b = 0; b < generated.size(0); ++b) {
        for (std::size_t l = 0; l < kFeatureLayers.size(); ++l) {
            total = total + kContextualWeights[l] * contextual_term(flatten_features(fg[l][b]), flatten_features(fe[l][b]));
        }
    }
    return total / static_cast<double>(generated.size(0));
}

torch::Tensor grayscale_loss(const torch::Tensor& a, const torch::Tensor& b) {
    if (!a.sizes().equals(b.sizes())) {
        std::ostringstream os;
        os << "grayscale_loss: size mismatch " << a.sizes() << " vs " << b.sizes();
        throw std::invalid_argument(os.str());
    }
    auto diff = (a.mean(1) - b.mean(1)).flatten(1);
    return torch::linalg_vector_norm(diff, 2, {1}, false, c10::nullopt).mean();
}

ExemplarLoss exemplar_loss(FeatureExtractorImpl& fx, const torch::Tensor& exemplar, const torch::Tensor& recon,
                           const torch::Tensor& generated, double gray_weight) {
    ExemplarLoss out;
    out.context = contextual_loss(fx, exemplar, generated);
    out.gray = grayscale_loss(recon, generated);
    out.total = out.context + gray_weight * out.gray;
    return out;
}

DecodedPredictions decode_predictions(Autoencoder& ae, const torch::Tensor& input, const torch::Tensor& x_t,
                                      const torch::Tensor& eps, const torch::Tensor& t, const NoiseSchedule& sched) {
    DecodedPredictions out;
    {
        torch::NoGradGuard g;
        out.recon = ae->decode(ae->encode(input));
    }
    out.generated = ae->decode(predict_x0(x_t, eps, t, sched));
    return out;
}

torch::Tensor perceptual_loss(FeatureExtractorImpl& fx, const torch::Tensor& a, const torch::Tensor& b) {
    auto loss = (a - b).abs().mean();
    const auto fa = fx.features(a);
    const auto fb = fx.features(b);
    for (std::size_t l = 0; l < fa.size(); ++l) loss = loss + F::mse_loss(fa[l], fb[l]);
    return loss;
}

}  // namespace chroma
