#include "chroma/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace chroma {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_match(const RgbImage& a, const RgbImage& b) {
    if (a.height != b.height || a.width != b.width) {
        std::ostringstream os;
        os << "fidelity_metrics: size mismatch " << a.height << "x" << a.width << " vs " << b.height << "x" << b.width;
        throw std::invalid_argument(os.str());
    }
}

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> g{};
    double sum = 0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w) {
    static const auto g = gaussian_taps();
    const int oh = h - kWindow + 1, ow = w - kWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < kWindow; ++k) acc += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < kWindow; ++k) acc += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

}  // namespace

double psnr(const RgbImage& pred, const RgbImage& truth) {
    require_match(pred, truth);
    double se = 0;
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const double d = static_cast<double>(pred.pixels[i]) - truth.pixels[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(pred.pixels.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const RgbImage& pred, const RgbImage& truth) {
    require_match(pred, truth);
    if (pred.height < kWindow || pred.width < kWindow) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    }
    const int h = pred.height, w = pred.width;
    const std::size_t n = pred.pixel_count();
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = pred.pixels[3 * i + c];
            y[i] = truth.pixels[3 * i + c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
        const auto sxx = filter_valid(xx, h, w), syy = filter_valid(yy, h, w), sxy = filter_valid(xy, h, w);
        double acc = 0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
            acc += ((2 * mx[i] * my[i] + kC1) * (2 * cxy + kC2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / 3.0;
}

Fidelity fidelity_metrics(const RgbImage& pred, const RgbImage& truth) {
    return {psnr(pred, truth), ssim(pred, truth)};
}

}  // namespace chroma
