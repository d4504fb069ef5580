#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <torch/torch.h>

#include "chroma/autoencoder.hpp"
#include "chroma/checkpoint.hpp"
#include "chroma/conditioning.hpp"
#include "chroma/denoiser.hpp"
#include "chroma/layers.hpp"

using namespace chroma;
namespace F = torch::nn::functional;

// ---------------------------------------------------------------------------
// denoiser

TEST_CASE("untrained control branch leaves the output bitwise unchanged") {
    torch::manual_seed(1);
    Denoiser d(DenoiserOptions{4, 16, 16});
    d->eval();
    torch::NoGradGuard g;
    const auto x = torch::randn({2, 4, 8, 8});
    const auto t = torch::tensor({10, 900}, torch::kLong);
    const auto ctx = torch::randn({2, 5, 16});
    const auto zi = torch::randn({2, 4, 8, 8});
    const auto plain = d->forward(x, t, ctx, torch::Tensor()).eps;
    CHECK(torch::equal(d->forward(x, t, ctx, zi).eps, plain));
    d->init_control_from_locked();
    CHECK(torch::equal(d->forward(x, t, ctx, zi).eps, plain));
    // the five extra input channels start silent too
    const auto x9 = torch::cat({x, torch::rand({2, 1, 8, 8}).round(), torch::randn({2, 4, 8, 8})}, 1);
    CHECK(torch::equal(d->forward(x9, t, ctx, zi).eps, plain));
}

TEST_CASE("zero connectors still receive gradient") {
    torch::manual_seed(2);
    Denoiser d(DenoiserOptions{4, 16, 16});
    const auto out = d->forward(torch::randn({1, 4, 8, 8}), torch::tensor({500}, torch::kLong), torch::randn({1, 3, 16}),
                                torch::randn({1, 4, 8, 8}));
    out.eps.pow(2).sum().backward();
    CHECK(d->zc_mid->weight.grad().abs().sum().item<double>() > 0);
    CHECK(d->zc1->weight.grad().abs().sum().item<double>() > 0);
}

TEST_CASE("denoiser shapes, odd latent sizes and attention maps") {
    torch::manual_seed(3);
    Denoiser d(DenoiserOptions{4, 16, 16});
    torch::NoGradGuard g;
    const auto out = d->forward(torch::randn({1, 4, 7, 9}), torch::tensor({3}, torch::kLong), torch::zeros({1, 2, 16}),
                                torch::Tensor(), true);
    CHECK(out.eps.sizes() == torch::IntArrayRef({1, 4, 7, 9}));
    REQUIRE(!out.attention_maps.empty());
    const auto& m = out.attention_maps.front();
    const auto grid = out.attention_grids.front();
    CHECK(m.size(2) == grid[0] * grid[1]);
    CHECK(torch::allclose(m.sum(-1), torch::ones_like(m.sum(-1)), 1e-5, 1e-5));
    CHECK_THROWS(d->forward(torch::randn({1, 5, 8, 8}), torch::tensor({3}, torch::kLong), torch::zeros({1, 2, 16}),
                            torch::Tensor()));
    CHECK_THROWS(d->forward(torch::randn({1, 4, 8, 8}), torch::tensor({3}, torch::kLong), torch::zeros({1, 2, 8}),
                            torch::Tensor()));
}

TEST_CASE("control loss and mask downsampling") {
    // mean of 0.2^2
    CHECK(control_training_loss(torch::full({2, 2}, 0.2, torch::kFloat64), torch::zeros({2, 2}, torch::kFloat64))
              .item<double>() == doctest::Approx(0.04).epsilon(1e-12));
    CHECK_THROWS(control_training_loss(torch::zeros({2}), torch::zeros({3})));

    // cell (i, j) reads pixel (8i + 4, 8j + 4)
    auto mask = torch::zeros({1, 1, 16, 16});
    mask[0][0][4][12] = 1.0f;
    mask[0][0][3][3] = 1.0f;
    const auto z = downsample_mask_nearest(mask, 8);
    CHECK(z.sizes() == torch::IntArrayRef({1, 1, 2, 2}));
    CHECK(z[0][0][0][1].item<float>() == 1.0f);
    CHECK(z[0][0][0][0].item<float>() == 0.0f);
    CHECK(z.sum().item<float>() == 1.0f);
}

// ---------------------------------------------------------------------------
// deformable convolution

TEST_CASE("zero offsets reproduce plain convolution") {
    torch::manual_seed(4);
    const auto x = torch::randn({2, 5, 6, 7});
    const auto w = torch::randn({3, 5, 3, 3});
    const auto b = torch::randn({3});
    const auto ref = F::conv2d(x, w, F::Conv2dFuncOptions().bias(b).padding(1));
    CHECK(torch::allclose(deform_conv2d(x, torch::zeros({2, 18, 6, 7}), w, b), ref, 1e-5, 1e-5));
}

TEST_CASE("integer and fractional offsets sample the shifted input") {
    torch::manual_seed(5);
    const auto x = torch::randn({1, 1, 5, 5}, torch::kFloat64);
    // centre tap only, unit weight
    auto w = torch::zeros({1, 1, 3, 3}, torch::kFloat64);
    w[0][0][1][1] = 1.0;
    auto off = torch::zeros({1, 18, 5, 5}, torch::kFloat64);
    off[0][9].fill_(1.0);  // centre tap: channel 8 is dy, 9 is dx
    const auto out = deform_conv2d(x, off, w, torch::Tensor());
    // out(y, x) = in(y, x + 1), zero past the right edge
    CHECK(torch::allclose(out[0][0].slice(1, 0, 4), x[0][0].slice(1, 1, 5), 0, 1e-12));
    CHECK(out[0][0].select(1, 4).abs().max().item<double>() == doctest::Approx(0.0));

    off[0][8].fill_(0.25);  // dy = +0.25
    off[0][9].fill_(0.5);   // dx = +0.5
    const auto frac = deform_conv2d(x, off, w, torch::Tensor());
    const auto X = x[0][0];
    auto bil = [&](int y, int xx) {
        const double a = X[y][xx].item<double>(), bq = X[y][xx + 1].item<double>();
        const double c = X[y + 1][xx].item<double>(), d = X[y + 1][xx + 1].item<double>();
        return 0.75 * (0.5 * a + 0.5 * bq) + 0.25 * (0.5 * c + 0.5 * d);
    };
    CHECK(frac[0][0][1][2].item<double>() == doctest::Approx(bil(1, 2)).epsilon(1e-12));
    CHECK(frac[0][0][3][0].item<double>() == doctest::Approx(bil(3, 0)).epsilon(1e-12));
}

TEST_CASE("deformable decoder at initialisation") {
    torch::manual_seed(6);
    Autoencoder ae(8, 4);
    DeformableDecoder def(ae->block_channels(), 4);
    torch::NoGradGuard g;
    const auto z = torch::randn({2, 4, 4, 4});
    const auto guide = torch::randn({2, 4, 4, 4});
    const auto plain = ae->decode(z);
    CHECK(torch::allclose(decode_deformable(ae, def, z, guide), plain, 1e-5, 1e-5));
    CHECK(torch::allclose(decode_deformable(ae, def, z, guide, true), decode_plain_kernels(ae, def, z), 1e-5, 1e-5));
    CHECK_THROWS(decode_deformable(ae, def, z, torch::randn({2, 4, 2, 2})));
}

TEST_CASE("autoencoder geometry") {
    Autoencoder ae(8, 4);
    torch::NoGradGuard g;
    const auto z = ae->encode(torch::zeros({1, 3, 16, 24}));
    CHECK(z.sizes() == torch::IntArrayRef({1, 4, 2, 3}));
    CHECK(ae->decode(z).sizes() == torch::IntArrayRef({1, 3, 16, 24}));
    CHECK_THROWS_AS(check_divisible(20, 16, 8, "test"), std::invalid_argument);
}

TEST_CASE("adversarial term switches on at the configured step") {
    torch::manual_seed(7);
    Autoencoder ae(8, 4);
    set_requires_grad(*ae, false);
    DeformableDecoder def(ae->block_channels(), 4);
    auto fx = std::make_shared<FeatureExtractorImpl>(8);
    set_requires_grad(*fx, false);
    DeformableTrainer tr(ae, def, fx, 1e-4, 2, 0.025);
    DeformableBatch b{torch::rand({2, 3, 32, 32}) * 2 - 1, torch::rand({2, 3, 32, 32}) * 2 - 1, torch::zeros({2, 3, 32, 32})};
    const auto ae_sum = module_checksum(*ae);
    CHECK_FALSE(tr.step(0, b).adversarial_active);
    const auto r1 = tr.step(1, b);
    CHECK_FALSE(r1.adversarial_active);
    CHECK(r1.total == doctest::Approx(r1.perceptual));
    const auto r2 = tr.step(2, b);
    CHECK(r2.adversarial_active);
    CHECK(r2.total == doctest::Approx(r2.perceptual + 0.025 * r2.adversarial).epsilon(1e-5));
    CHECK(module_checksum(*ae) == ae_sum);
}

// ---------------------------------------------------------------------------
// conditioning and losses

TEST_CASE("hash text embedder") {
    HashTextEmbedder e{4, 8};
    CHECK(torch::equal(e.embed(""), torch::zeros({4, 8})));
    CHECK(torch::equal(e.embed("A red  Ball"), e.embed("a red ball")));
    CHECK(tokenize_prompt("A red-ball, 2x!") == std::vector<std::string>{"a", "red", "ball", "2x"});
    // independent re-derivation of one component
    auto fnv = [](const std::string& s) {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    };
    auto mix = [](std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    };
    const double u = static_cast<double>(mix(fnv("red") + 3) >> 11) / 9007199254740992.0;
    CHECK(token_component("red", 3) == doctest::Approx(2 * u - 1).epsilon(1e-7));
    CHECK(e.embed("red")[0][3].item<float>() == doctest::Approx(2 * u - 1).epsilon(1e-7));
}

TEST_CASE("context assembly") {
    const auto text = torch::ones({2, 3, 4});
    const auto c = build_context(text, torch::Tensor(), 2);
    CHECK(c.sizes() == torch::IntArrayRef({2, 5, 4}));
    CHECK(c.slice(1, 3, 5).abs().sum().item<float>() == 0.0f);
    const auto ex = torch::full({2, 2, 4}, 2.0f);
    CHECK(torch::equal(build_context(text, ex, 2).slice(1, 3, 5), ex));
}

TEST_CASE("contextual loss: single feature is zero, hand case and cosine oracle") {
    const auto a = torch::tensor({{0.3, -1.2, 2.0}}, torch::kFloat64);
    const auto b = torch::tensor({{1.0, 0.5, 0.1}}, torch::kFloat64);
    CHECK(contextual_term(a, b).item<double>() == doctest::Approx(0.0).epsilon(1e-6));

    const auto d = cosine_distance(a, torch::cat({a, b}));
    const double cab = (0.3 * 1.0 - 1.2 * 0.5 + 2.0 * 0.1) /
                       (std::sqrt(0.09 + 1.44 + 4.0) * std::sqrt(1.0 + 0.25 + 0.01));
    CHECK(d[0][0].item<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d[0][1].item<double>() == doctest::Approx(1 - cab).epsilon(1e-12));
    CHECK_THROWS(cosine_distance(torch::zeros({1, 3}, torch::kFloat64), b));

    // rows (1, 1.5) and (1, 1) with h = 0.1: softmax maxima 1/(1+e^-5) and 1/2
    const auto dt = torch::tensor({{1.0, 1.5}, {1.0, 1.0}}, torch::kFloat64);
    const double m1 = 1.0 / (1.0 + std::exp(-5.0));
    CHECK(contextual_term_from_normalized(dt, 0.1).item<double>() ==
          doctest::Approx(-std::log((m1 + 0.5) / 2)).epsilon(1e-12));

    const auto nd = normalize_distance(torch::tensor({{0.2, 0.4}}, torch::kFloat64), 0.0);
    CHECK(nd[0][1].item<double>() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("contextual term gradient matches finite differences") {
    torch::manual_seed(8);
    auto gen = torch::randn({4, 6}, torch::kFloat64).requires_grad_(true);
    const auto ex = torch::randn({5, 6}, torch::kFloat64);
    const double h = 0.5;  // wide bandwidth keeps the softmax smooth
    contextual_term(gen, ex, h).backward();
    const auto grad = gen.grad().clone();
    torch::NoGradGuard g;
    const double step = 1e-6;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 6; j += 2) {
            auto p = gen.detach().clone(), m = gen.detach().clone();
            p[i][j] += step;
            m[i][j] -= step;
            const double fd = (contextual_term(p, ex, h).item<double>() - contextual_term(m, ex, h).item<double>()) / (2 * step);
            CHECK(grad[i][j].item<double>() == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("grayscale loss") {
    auto a = torch::zeros({1, 3, 1, 2}, torch::kFloat64);
    auto b = a.clone();
    CHECK(grayscale_loss(a, b).item<double>() == 0.0);
    b[0].select(2, 0).select(1, 0).fill_(1.0);  // channel mean 1 at the first pixel
    CHECK(grayscale_loss(a, b).item<double>() == doctest::Approx(1.0).epsilon(1e-12));
    b.fill_(1.0);
    CHECK(grayscale_loss(a, b).item<double>() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK_THROWS(grayscale_loss(a, torch::zeros({1, 3, 2, 2}, torch::kFloat64)));
}

TEST_CASE("exemplar loss is the weighted component sum") {
    torch::manual_seed(9);
    FeatureExtractorImpl fx(8);
    torch::NoGradGuard g;
    const auto ex = torch::rand({2, 3, 32, 32}) * 2 - 1;
    const auto rec = torch::rand({2, 3, 32, 32}) * 2 - 1;
    const auto gen = torch::rand({2, 3, 32, 32}) * 2 - 1;
    const auto l = exemplar_loss(fx, ex, rec, gen);
    const double expect = l.context.item<double>() + 1000.0 * l.gray.item<double>();
    CHECK(std::abs(l.total.item<double>() - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
    CHECK(kExemplarGrayWeight == 1000.0);
    CHECK(kContextualWeights == std::array<double, 3>{2.0, 4.0, 8.0});
}

// ---------------------------------------------------------------------------
// checkpoints

TEST_CASE("checkpoint round trip and architecture guard") {
    const auto dir = std::filesystem::temp_directory_path() / "chroma_ckpt_test";
    std::filesystem::create_directories(dir);
    torch::manual_seed(10);
    Denoiser a(DenoiserOptions{4, 16, 16});
    save_checkpoint(dir / "d.ckpt", *a, "denoiser", nlohmann::json{{"optimizer", {{"beta1", 0.9}}}});
    torch::manual_seed(11);
    Denoiser b(DenoiserOptions{4, 16, 16});
    CHECK(module_checksum(*a) != module_checksum(*b));
    const auto meta = load_checkpoint(dir / "d.ckpt", *b, "denoiser");
    CHECK(module_checksum(*a) == module_checksum(*b));
    CHECK(meta["optimizer"]["beta1"] == 0.9);
    Denoiser wide(DenoiserOptions{4, 32, 16});
    CHECK_THROWS(load_checkpoint(dir / "d.ckpt", *wide, "denoiser"));
    CHECK_THROWS(load_checkpoint(dir / "d.ckpt", *b, "autoencoder"));
    std::filesystem::remove_all(dir);
}
