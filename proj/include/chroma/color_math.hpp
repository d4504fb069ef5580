#pragma once

#include <cstddef>
#include <vector>

namespace chroma {

/// sRGB image, row-major interleaved (H x W x 3), components in [0,1].
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    RgbImage() = default;
    RgbImage(int h, int w, float fill = 0.0f);

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

    /// Throws std::invalid_argument on empty dimensions, size mismatch or out-of-range values.
    void validate() const;
};

/// CIELAB planes: L in [0,100], a/b roughly in [-128,127].
struct LabImage {
    int height = 0;
    int width = 0;
    std::vector<float> L, a, b;

    LabImage() = default;
    LabImage(int h, int w);
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
};

/// Lightness rescaled to [0,1] (L / 100).
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    GrayImage() = default;
    GrayImage(int h, int w, float fill = 0.0f);
    float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
};

struct Rgb {
    double r = 0, g = 0, b = 0;
};
struct Lab {
    double L = 0, a = 0, b = 0;
};

Lab srgb_to_lab(Rgb c);
/// No clamping; may leave [0,1] for out-of-gamut inputs.
Rgb lab_to_srgb_unclamped(Lab c);

struct GamutDiagnostics {
    std::size_t clamped_pixels = 0;
};

LabImage rgb_to_lab(const RgbImage& img);
RgbImage lab_to_rgb(const LabImage& img, GamutDiagnostics* diagnostics = nullptr);

GrayImage extract_l(const RgbImage& img);
RgbImage gray_to_rgb(const GrayImage& gray);

/// Keeps the chroma of `output` and the lightness of `original_l`. Pixels whose
/// recombined colour falls outside the sRGB gamut have their chroma scaled down
/// (hue kept) until they fit, so the lightness is preserved exactly.
RgbImage replace_l_channel(const RgbImage& output, const GrayImage& original_l);

/// Hasler-Suesstrunk colourfulness on the 8-bit scale.
double colorfulness(const RgbImage& img);

/// Mean over channel pairs of the population variance of the pairwise difference
/// image, on the 8-bit scale.
double mean_pairwise_channel_variance(const RgbImage& img);

/// Mean CIE76 distance restricted to the a/b plane.
double mean_ab_error(const RgbImage& pred, const RgbImage& truth);

}  // namespace chroma
