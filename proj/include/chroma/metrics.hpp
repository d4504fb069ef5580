#pragma once

#include "chroma/color_math.hpp"

namespace chroma {

/// Reported in place of +inf for identical images.
inline constexpr double kPsnrCap = 100.0;

struct Fidelity {
    double psnr = 0.0;
    double ssim = 0.0;
};

/// PSNR with peak 1 over all three channels.
double psnr(const RgbImage& pred, const RgbImage& truth);

/// Mean SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, data
/// range 1, valid-region windows, averaged over channels.
double ssim(const RgbImage& pred, const RgbImage& truth);

Fidelity fidelity_metrics(const RgbImage& pred, const RgbImage& truth);

}  // namespace chroma
