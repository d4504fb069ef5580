#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "chroma/autoencoder.hpp"
#include "chroma/diffusion.hpp"

namespace chroma {

// ---------------------------------------------------------------------------
// Text

/// Lower-cased alphanumeric runs.
std::vector<std::string> tokenize_prompt(const std::string& prompt);

/// Value k of a token's hash vector: 2 * u - 1 with u the top 53 bits of
/// splitmix64(fnv1a64(token) + k) scaled to [0,1).
float token_component(const std::string& token, int k);

/// Toy hashing embedder. Token i fills row i; tokens past the last row are
/// summed into it. Unused rows and the empty prompt are zero.
struct HashTextEmbedder {
    int tokens = 8;
    int dim = 64;

    torch::Tensor embed(const std::string& prompt) const;  // [tokens, dim]
    torch::Tensor null_embedding() const;
    std::string identity() const { return "toy-hash"; }
};

// ---------------------------------------------------------------------------
// Exemplar image encoder

/// Small CNN producing `tokens` context vectors from an image in [-1,1]. The
/// output projection starts at zero so an untrained encoder is silent.
struct ExemplarEmbedderImpl : torch::nn::Module {
    ExemplarEmbedderImpl(int tokens = 4, int dim = 64, int width = 32);
    torch::Tensor forward(const torch::Tensor& img);  // [B, tokens, dim]

    int tokens, dim;
    torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
    torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(ExemplarEmbedder);

/// [B, text_tokens + exemplar_tokens, dim]; missing exemplar tokens are zero.
torch::Tensor build_context(const torch::Tensor& text, const torch::Tensor& exemplar, int exemplar_tokens);

// ---------------------------------------------------------------------------
// Feature extractor

inline constexpr std::array<int, 3> kFeatureLayers = {3, 4, 5};

/// Five strided blocks; features of blocks 3, 4 and 5 are exposed. A small
/// decoder from block 5 is only used for its autoencoding pretraining.
struct FeatureExtractorImpl : torch::nn::Module {
    explicit FeatureExtractorImpl(int width = 16);
    std::array<torch::Tensor, 3> features(const torch::Tensor& img);  // [B,C,h,w] each
    torch::Tensor reconstruct(const torch::Tensor& img);

    torch::nn::Conv2d b1{nullptr}, b2{nullptr}, b3{nullptr}, b4{nullptr}, b5{nullptr};
    torch::nn::Conv2d u1{nullptr}, u2{nullptr}, u3{nullptr}, u4{nullptr}, u_out{nullptr};
};
TORCH_MODULE(FeatureExtractor);

/// [C,h,w] -> [h*w, C]
torch::Tensor flatten_features(const torch::Tensor& f);

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kContextualBandwidth = 0.01;
inline constexpr double kContextualEpsilon = 1e-5;
/// Weights for layers 3, 4, 5.
inline constexpr std::array<double, 3> kContextualWeights = {2.0, 4.0, 8.0};
inline constexpr double kExemplarGrayWeight = 1000.0;

/// Cosine distances [N, M] between generated rows and exemplar rows. Rejects
/// zero-norm feature vectors.
torch::Tensor cosine_distance(const torch::Tensor& gen, const torch::Tensor& ex);
/// Row-min normalisation d / (min_j d + eps).
torch::Tensor normalize_distance(const torch::Tensor& d, double eps = kContextualEpsilon);
/// -log(mean_i max_j softmax_j((1 - dtilde) / h)).
torch::Tensor contextual_term_from_normalized(const torch::Tensor& dtilde, double h = kContextualBandwidth);
torch::Tensor contextual_term(const torch::Tensor& gen, const torch::Tensor& ex, double h = kContextualBandwidth);

/// Weighted sum over layers 3-5, averaged over the batch. Images [B,3,H,W].
torch::Tensor contextual_loss(FeatureExtractorImpl& fx, const torch::Tensor& exemplar, const torch::Tensor& generated);

/// Per image: L2 norm over pixels of the difference of channel means; batch mean.
torch::Tensor grayscale_loss(const torch::Tensor& a, const torch::Tensor& b);

struct ExemplarLoss {
    torch::Tensor total, context, gray;
};
ExemplarLoss exemplar_loss(FeatureExtractorImpl& fx, const torch::Tensor& exemplar, const torch::Tensor& recon,
                           const torch::Tensor& generated, double gray_weight = kExemplarGrayWeight);

struct DecodedPredictions {
    torch::Tensor recon;      // decode(encode(input))
    torch::Tensor generated;  // decode(predict_x0(x_t, eps, t))
};
DecodedPredictions decode_predictions(Autoencoder& ae, const torch::Tensor& input, const torch::Tensor& x_t,
                                      const torch::Tensor& eps, const torch::Tensor& t, const NoiseSchedule& sched);

/// Pixel L1 plus feature MSE on layers 3-5.
torch::Tensor perceptual_loss(FeatureExtractorImpl& fx, const torch::Tensor& a, const torch::Tensor& b);

}  // namespace chroma
