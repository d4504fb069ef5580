#include "chroma/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace chroma {

namespace {

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

struct ReadCursor {
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t count) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + count > cur->bytes->size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, cur->bytes->data() + cur->offset, count);
    cur->offset += count;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t count) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + count);
}

void flush_noop(png_structp) {}

// Per-output-sample tap list for one axis.
struct Taps {
    std::vector<int> start;
    std::vector<std::vector<double>> weights;
};

Taps make_taps(int in_size, int out_size) {
    Taps taps;
    taps.start.resize(out_size);
    taps.weights.resize(out_size);
    const double scale = static_cast<double>(in_size) / out_size;
    const double support = std::max(1.0, scale);
    for (int i = 0; i < out_size; ++i) {
        const double center = (i + 0.5) * scale - 0.5;
        const int lo = static_cast<int>(std::floor(center - support));
        const int hi = static_cast<int>(std::ceil(center + support));
        std::vector<double> w;
        double sum = 0.0;
        int first = -1;
        for (int j = lo; j <= hi; ++j) {
            const double v = 1.0 - std::abs((j - center) / support);
            if (v <= 0.0) continue;
            if (first < 0) first = j;
            w.push_back(v);
            sum += v;
        }
        if (first < 0) {  // degenerate: take the nearest sample
            first = std::clamp(static_cast<int>(std::lround(center)), 0, in_size - 1);
            w = {1.0};
            sum = 1.0;
        }
        for (double& v : w) v /= sum;
        taps.start[i] = first;
        taps.weights[i] = std::move(w);
    }
    return taps;
}

// Resamples a planar-or-interleaved float buffer with `channels` interleaved channels.
std::vector<float> resample(const std::vector<float>& src, int h, int w, int channels, int oh, int ow) {
    const Taps tx = make_taps(w, ow), ty = make_taps(h, oh);
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow * channels, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (std::size_t k = 0; k < tx.weights[x].size(); ++k) {
                const int sx = std::clamp(tx.start[x] + static_cast<int>(k), 0, w - 1);
                for (int c = 0; c < channels; ++c) {
                    tmp[(static_cast<std::size_t>(y) * ow + x) * channels + c] +=
                        tx.weights[x][k] * src[(static_cast<std::size_t>(y) * w + sx) * channels + c];
                }
            }
        }
    }
    std::vector<float> out(static_cast<std::size_t>(oh) * ow * channels, 0.0f);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < ty.weights[y].size(); ++k) {
                    const int sy = std::clamp(ty.start[y] + static_cast<int>(k), 0, h - 1);
                    acc += ty.weights[y][k] * tmp[(static_cast<std::size_t>(sy) * ow + x) * channels + c];
                }
                out[(static_cast<std::size_t>(y) * ow + x) * channels + c] =
                    static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
        }
    }
    return out;
}

}  // namespace

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw std::runtime_error("decode_png: not a PNG stream");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) throw std::runtime_error("decode_png: libpng init failed");
    RgbImage img;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("decode_png: malformed PNG");
    }
    ReadCursor cursor{&bytes, 0};
    png_set_read_fn(png, &cursor, read_from_memory);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    raw.resize(stride * h);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = raw.data() + stride * y;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    img = RgbImage(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = raw[stride * y + 3 * x + c] / 255.0f;
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    if (img.height < 1 || img.width < 1) throw std::invalid_argument("encode_png: empty image");
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> raw(img.pixel_count() * 3);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.pixels[i]);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * img.width * 3;

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) throw std::runtime_error("encode_png: libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("encode_png: libpng error");
    }
    png_set_write_fn(png, &out, write_to_memory, flush_noop);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

RgbImage read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_png: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
    const auto bytes = encode_png(img);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_png: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RgbImage resize(const RgbImage& img, int height, int width) {
    if (height < 1 || width < 1) throw std::invalid_argument("resize: target must be positive");
    if (height == img.height && width == img.width) return img;
    RgbImage out;
    out.height = height;
    out.width = width;
    out.pixels = resample(img.pixels, img.height, img.width, 3, height, width);
    return out;
}

GrayImage resize(const GrayImage& img, int height, int width) {
    if (height < 1 || width < 1) throw std::invalid_argument("resize: target must be positive");
    if (height == img.height && width == img.width) return img;
    GrayImage out;
    out.height = height;
    out.width = width;
    out.values = resample(img.values, img.height, img.width, 1, height, width);
    return out;
}

RgbImage quantize8(const RgbImage& img) {
    RgbImage out = img;
    for (float& v : out.pixels) v = to_byte(v) / 255.0f;
    return out;
}

}  // namespace chroma
