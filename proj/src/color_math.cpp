#include "chroma/color_math.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace chroma {

namespace {

// D65 reference white.
constexpr double kXn = 0.95047;
constexpr double kYn = 1.0;
constexpr double kZn = 1.08883;
constexpr double kDelta = 6.0 / 29.0;

double srgb_decode(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double srgb_encode(double v) {
    if (v <= 0.0031308) return 12.92 * v;
    return 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
    return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) {
    return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

bool in_gamut(const Rgb& c, double tol) {
    return c.r >= -tol && c.r <= 1.0 + tol && c.g >= -tol && c.g <= 1.0 + tol && c.b >= -tol &&
           c.b <= 1.0 + tol;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void require_same_size(int h0, int w0, int h1, int w1, const char* what) {
    if (h0 != h1 || w0 != w1) {
        std::ostringstream os;
        os << what << ": size mismatch " << h0 << "x" << w0 << " vs " << h1 << "x" << w1;
        throw std::invalid_argument(os.str());
    }
}

}  // namespace

RgbImage::RgbImage(int h, int w, float fill)
    : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

void RgbImage::validate() const {
    if (height < 1 || width < 1) throw std::invalid_argument("RgbImage: empty dimensions");
    if (pixels.size() != pixel_count() * 3) throw std::invalid_argument("RgbImage: buffer size mismatch");
    for (float v : pixels) {
        if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("RgbImage: component outside [0,1]");
    }
}

LabImage::LabImage(int h, int w)
    : height(h),
      width(w),
      L(static_cast<std::size_t>(h) * w),
      a(static_cast<std::size_t>(h) * w),
      b(static_cast<std::size_t>(h) * w) {}

GrayImage::GrayImage(int h, int w, float fill)
    : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

Lab srgb_to_lab(Rgb c) {
    const double r = srgb_decode(c.r), g = srgb_decode(c.g), b = srgb_decode(c.b);
    const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    const double fx = lab_f(x / kXn), fy = lab_f(y / kYn), fz = lab_f(z / kZn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

Rgb lab_to_srgb_unclamped(Lab c) {
    const double fy = (c.L + 16.0) / 116.0;
    const double fx = fy + c.a / 500.0;
    const double fz = fy - c.b / 200.0;
    const double x = kXn * lab_f_inv(fx), y = kYn * lab_f_inv(fy), z = kZn * lab_f_inv(fz);
    const double r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    const double g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    const double b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    // Negative linear values are mirrored so out-of-gamut colours stay finite.
    auto enc = [](double v) { return v < 0 ? -srgb_encode(-v) : srgb_encode(v); };
    return {enc(r), enc(g), enc(b)};
}

LabImage rgb_to_lab(const RgbImage& img) {
    LabImage out(img.height, img.width);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const Lab lab = srgb_to_lab({img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]});
        out.L[i] = static_cast<float>(lab.L);
        out.a[i] = static_cast<float>(lab.a);
        out.b[i] = static_cast<float>(lab.b);
    }
    return out;
}

RgbImage lab_to_rgb(const LabImage& img, GamutDiagnostics* diagnostics) {
    RgbImage out(img.height, img.width);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const Rgb c = lab_to_srgb_unclamped({img.L[i], img.a[i], img.b[i]});
        if (diagnostics && !in_gamut(c, 1e-6)) ++diagnostics->clamped_pixels;
        out.pixels[3 * i] = static_cast<float>(clamp01(c.r));
        out.pixels[3 * i + 1] = static_cast<float>(clamp01(c.g));
        out.pixels[3 * i + 2] = static_cast<float>(clamp01(c.b));
    }
    return out;
}

GrayImage extract_l(const RgbImage& img) {
    GrayImage out(img.height, img.width);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const Lab lab = srgb_to_lab({img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]});
        out.values[i] = static_cast<float>(std::clamp(lab.L / 100.0, 0.0, 1.0));
    }
    return out;
}

RgbImage gray_to_rgb(const GrayImage& gray) {
    RgbImage out(gray.height, gray.width);
    for (std::size_t i = 0; i < gray.pixel_count(); ++i) {
        out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = gray.values[i];
    }
    return out;
}

RgbImage replace_l_channel(const RgbImage& output, const GrayImage& original_l) {
    require_same_size(output.height, output.width, original_l.height, original_l.width, "replace_l_channel");
    RgbImage out(output.height, output.width);
    for (std::size_t i = 0; i < output.pixel_count(); ++i) {
        const Lab src = srgb_to_lab({output.pixels[3 * i], output.pixels[3 * i + 1], output.pixels[3 * i + 2]});
        const double L = 100.0 * original_l.values[i];
        Rgb c = lab_to_srgb_unclamped({L, src.a, src.b});
        if (!in_gamut(c, 1e-9)) {
            // Bisection on the chroma scale; scale 0 is the neutral grey of
            // lightness L, which is always representable.
            double lo = 0.0, hi = 1.0;
            for (int it = 0; it < 40; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (in_gamut(lab_to_srgb_unclamped({L, src.a * mid, src.b * mid}), 0.0)) lo = mid;
                else hi = mid;
            }
            c = lab_to_srgb_unclamped({L, src.a * lo, src.b * lo});
        }
        out.pixels[3 * i] = static_cast<float>(clamp01(c.r));
        out.pixels[3 * i + 1] = static_cast<float>(clamp01(c.g));
        out.pixels[3 * i + 2] = static_cast<float>(clamp01(c.b));
    }
    return out;
}

double colorfulness(const RgbImage& img) {
    const std::size_t n = img.pixel_count();
    if (n == 0) return 0.0;
    // Welford accumulation of the two opponent channels.
    double mean_rg = 0, mean_yb = 0, m2_rg = 0, m2_yb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = 255.0 * img.pixels[3 * i], g = 255.0 * img.pixels[3 * i + 1],
                     b = 255.0 * img.pixels[3 * i + 2];
        const double rg = r - g;
        const double yb = 0.5 * (r + g) - b;
        const double k = static_cast<double>(i + 1);
        const double d_rg = rg - mean_rg;
        mean_rg += d_rg / k;
        m2_rg += d_rg * (rg - mean_rg);
        const double d_yb = yb - mean_yb;
        mean_yb += d_yb / k;
        m2_yb += d_yb * (yb - mean_yb);
    }
    const double var_rg = m2_rg / static_cast<double>(n);
    const double var_yb = m2_yb / static_cast<double>(n);
    return std::sqrt(var_rg + var_yb) + 0.3 * std::sqrt(mean_rg * mean_rg + mean_yb * mean_yb);
}

double mean_pairwise_channel_variance(const RgbImage& img) {
    const std::size_t n = img.pixel_count();
    if (n == 0) return 0.0;
    constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    double total = 0.0;
    for (const auto& p : pairs) {
        double mean = 0, m2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = 255.0 * (static_cast<double>(img.pixels[3 * i + p[0]]) - img.pixels[3 * i + p[1]]);
            const double delta = d - mean;
            mean += delta / static_cast<double>(i + 1);
            m2 += delta * (d - mean);
        }
        total += m2 / static_cast<double>(n);
    }
    return total / 3.0;
}

double mean_ab_error(const RgbImage& pred, const RgbImage& truth) {
    require_same_size(pred.height, pred.width, truth.height, truth.width, "mean_ab_error");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
        const Lab p = srgb_to_lab({pred.pixels[3 * i], pred.pixels[3 * i + 1], pred.pixels[3 * i + 2]});
        const Lab t = srgb_to_lab({truth.pixels[3 * i], truth.pixels[3 * i + 1], truth.pixels[3 * i + 2]});
        sum += std::hypot(p.a - t.a, p.b - t.b);
    }
    return pred.pixel_count() ? sum / static_cast<double>(pred.pixel_count()) : 0.0;
}

}  // namespace chroma
