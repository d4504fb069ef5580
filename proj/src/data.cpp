#include "chroma/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "chroma/image_io.hpp"
#include "chroma/log.hpp"

namespace chroma {

namespace fs = std::filesystem;

namespace {

std::string sanitize_field(std::string s) {
    for (char& c : s) {
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::vector<DatasetRecord> read_manifest(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + manifest.string());
    const fs::path base = manifest.parent_path();
    std::vector<DatasetRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto f = split_tabs(line);
        if (f.size() != 4) {
            throw std::runtime_error("read_manifest: line " + std::to_string(line_no) + " needs 4 tab-separated fields");
        }
        DatasetRecord r;
        r.id = f[0];
        r.path = fs::path(f[1]).is_absolute() ? fs::path(f[1]) : base / f[1];
        r.caption = f[2];
        r.label = std::stoi(f[3]);
        out.push_back(std::move(r));
    }
    return out;
}

void write_manifest(const fs::path& manifest, const std::vector<DatasetRecord>& records) {
    if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
    std::ofstream out(manifest);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + manifest.string());
    // paths are written relative to the manifest when they lie below it
    const fs::path base = fs::absolute(manifest).parent_path();
    out << "# id\tpath\tcaption\tlabel\n";
    for (const auto& r : records) {
        fs::path p = fs::absolute(r.path).lexically_normal();
        const auto rel = p.lexically_relative(base);
        if (!rel.empty() && rel.native()[0] != '.') p = rel;
        out << sanitize_field(r.id) << '\t' << p.string() << '\t' << sanitize_field(r.caption) << '\t' << r.label
            << '\n';
    }
}

void write_embeddings(const fs::path& file, const std::vector<DatasetRecord>& records) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("write_embeddings: cannot open " + file.string());
    for (const auto& r : records) {
        nlohmann::json j{{"id", r.id}, {"embedding", r.embedding}};
        out << j.dump() << '\n';
    }
}

void attach_embeddings(const fs::path& file, std::vector<DatasetRecord>& records) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("attach_embeddings: cannot open " + file.string());
    std::unordered_map<std::string, std::vector<float>> by_id;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        by_id[j.at("id").get<std::string>()] = j.at("embedding").get<std::vector<float>>();
    }
    for (auto& r : records) {
        auto it = by_id.find(r.id);
        if (it != by_id.end()) r.embedding = it->second;
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct NamedColor {
    const char* name;
    float r, g, b;
};

constexpr std::array<NamedColor, 14> kPalette = {{
    {"red", 0.86f, 0.12f, 0.12f},
    {"orange", 0.96f, 0.55f, 0.10f},
    {"yellow", 0.95f, 0.88f, 0.16f},
    {"green", 0.16f, 0.68f, 0.22f},
    {"blue", 0.12f, 0.30f, 0.86f},
    {"purple", 0.55f, 0.22f, 0.72f},
    {"pink", 0.96f, 0.52f, 0.72f},
    {"brown", 0.52f, 0.32f, 0.16f},
    {"cyan", 0.12f, 0.80f, 0.86f},
    {"teal", 0.08f, 0.50f, 0.50f},
    {"olive", 0.50f, 0.52f, 0.12f},
    {"white", 0.94f, 0.94f, 0.92f},
    {"gray", 0.50f, 0.50f, 0.52f},
    {"black", 0.08f, 0.08f, 0.09f},
}};

bool inside_shape(int cls, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (cls) {
        case 0: return dx * dx + dy * dy <= r * r;
        case 1: return ax <= 0.8 * r && ay <= 0.8 * r;
        case 2: return dy <= 0.8 * r && dy >= -r && ax <= (dy + r) / 1.8;
        case 3: {
            const double d = std::sqrt(dx * dx + dy * dy);
            return d <= r && d >= 0.55 * r;
        }
        case 4: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
        case 5: return ax + ay <= r;
        case 6: return (dx / r) * (dx / r) + (dy / (0.55 * r)) * (dy / (0.55 * r)) <= 1.0;
        case 7: {
            const double h = 0.5 * r;
            return (dx + h) * (dx + h) + dy * dy <= h * h || (dx - h) * (dx - h) + dy * dy <= h * h;
        }
        case 8: {
            const double m = std::max(ax, ay);
            return m <= 0.85 * r && m >= 0.55 * r;
        }
        case 9: return ax <= 0.85 * r && ay <= 0.85 * r;
        default: return false;
    }
}

}  // namespace

const std::vector<std::string>& corpus_class_names() {
    static const std::vector<std::string> names = {"circle", "square", "triangle", "ring",   "cross",
                                                   "diamond", "ellipse", "pair of discs", "frame", "striped square"};
    return names;
}

std::pair<RgbImage, DatasetRecord> synthesize_image(const CorpusOptions& opts, int index) {
    Rng rng(derive_seed(opts.seed, "corpus/" + std::to_string(index)));
    const int n = opts.size;
    const int cls = uniform_int(rng, 0, kCorpusClasses - 1);
    const int obj_idx = uniform_int(rng, 0, static_cast<int>(kPalette.size()) - 1);
    int bg_idx = uniform_int(rng, 0, static_cast<int>(kPalette.size()) - 1);
    if (bg_idx == obj_idx) bg_idx = (bg_idx + 3) % static_cast<int>(kPalette.size());
    const NamedColor obj = kPalette[obj_idx];
    const NamedColor bg = kPalette[bg_idx];
    const NamedColor accent = kPalette[uniform_int(rng, 0, static_cast<int>(kPalette.size()) - 1)];

    auto jit = [&](float v) { return std::clamp(v + static_cast<float>(uniform01(rng) * 0.1 - 0.05), 0.0f, 1.0f); };
    const float oc[3] = {jit(obj.r), jit(obj.g), jit(obj.b)};
    const float bc[3] = {jit(bg.r), jit(bg.g), jit(bg.b)};
    const float ac[3] = {jit(accent.r), jit(accent.g), jit(accent.b)};

    const double r = n * (0.16 + 0.18 * uniform01(rng));
    const double cx = r + uniform01(rng) * (n - 2 * r);
    const double cy = r + uniform01(rng) * (n - 2 * r);
    const bool with_blob = uniform01(rng) < 0.3;
    const double br = n * (0.05 + 0.05 * uniform01(rng));
    const double bx = br + uniform01(rng) * (n - 2 * br);
    const double by = br + uniform01(rng) * (n - 2 * br);
    const double grad_dir = uniform01(rng) < 0.5 ? 1.0 : -1.0;
    std::normal_distribution<float> noise(0.0f, 0.015f);

    RgbImage img(n, n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            // 2x2 supersampling for soft edges.
            float acc[3] = {0, 0, 0};
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const double px = x + 0.25 + 0.5 * sx, py = y + 0.25 + 0.5 * sy;
                    const float shade = static_cast<float>(0.85 + 0.3 * (grad_dir > 0 ? py / n : 1.0 - py / n));
                    float c[3] = {bc[0] * shade, bc[1] * shade, bc[2] * shade};
                    if (inside_shape(cls, px - cx, py - cy, r)) {
                        const float light = static_cast<float>(1.08 - 0.16 * ((px - cx + py - cy) / (2 * r) + 0.5));
                        const bool stripe = cls == 9 && static_cast<int>(std::floor((py - cy + r) / (r / 3.0))) % 2;
                        for (int k = 0; k < 3; ++k) c[k] = (stripe ? 0.55f * oc[k] : oc[k]) * light;
                    }
                    if (with_blob && (px - bx) * (px - bx) + (py - by) * (py - by) <= br * br) {
                        for (int k = 0; k < 3; ++k) c[k] = ac[k];
                    }
                    for (int k = 0; k < 3; ++k) acc[k] += 0.25f * c[k];
                }
            }
            for (int k = 0; k < 3; ++k) img.at(y, x, k) = std::clamp(acc[k] + noise(rng), 0.0f, 1.0f);
        }
    }

    const bool grayscale = uniform01(rng) < opts.grayscale_fraction;
    const std::string& shape = corpus_class_names()[cls];
    std::string caption;
    if (grayscale) {
        img = gray_to_rgb(extract_l(img));
        // Neutral grey of the right lightness rather than raw L replication.
        for (std::size_t i = 0; i < img.pixel_count(); ++i) {
            const Rgb c = lab_to_srgb_unclamped({100.0 * img.pixels[3 * i], 0.0, 0.0});
            img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] =
                static_cast<float>(std::clamp(c.r, 0.0, 1.0));
        }
        caption = "a black and white photo of a " + shape;
    } else {
        const double u = uniform01(rng);
        if (u < 0.55) caption = std::string("a ") + obj.name + " " + shape + " on a " + bg.name + " background";
        else if (u < 0.75) caption = std::string("a ") + obj.name + " " + shape;
        else if (u < 0.95) caption = "a photo of a " + shape;
        else caption = "";
    }

    DatasetRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "img%06d", index);
    rec.id = id;
    rec.caption = caption;
    rec.label = cls;
    return {std::move(img), std::move(rec)};
}

fs::path generate_corpus(const fs::path& dir, const CorpusOptions& opts) {
    fs::create_directories(dir / "images");
    std::vector<DatasetRecord> records;
    records.reserve(opts.count);
    for (int i = 0; i < opts.count; ++i) {
        auto [img, rec] = synthesize_image(opts, i);
        rec.path = fs::path("images") / (rec.id + ".png");
        write_png(dir / rec.path, img);
        rec.path = dir / rec.path;
        records.push_back(std::move(rec));
    }
    const fs::path manifest = dir / "manifest.tsv";
    write_manifest(manifest, records);
    return manifest;
}

// ---------------------------------------------------------------------------

std::vector<DatasetRecord> filter_colorful(const std::vector<DatasetRecord>& records, double threshold,
                                           const ImageLoader& loader) {
    std::vector<DatasetRecord> kept;
    for (const auto& r : records) {
        try {
            const RgbImage img = loader ? loader(r) : read_png(r.path);
            if (mean_pairwise_channel_variance(img) >= threshold) kept.push_back(r);
        } catch (const std::exception& e) {
            log_warn("filter_colorful: skipping ", r.id, ": ", e.what());
        }
    }
    return kept;
}

// ---------------------------------------------------------------------------
// SLIC

LabelMap slic_superpixels(const RgbImage& img, const SlicOptions& opts) {
    const int H = img.height, W = img.width;
    const std::size_t N = img.pixel_count();
    if (opts.n_segments < 1) throw std::invalid_argument("slic_superpixels: n_segments must be positive");
    if (static_cast<std::size_t>(opts.n_segments) > N) {
        throw std::invalid_argument("slic_superpixels: n_segments exceeds pixel count");
    }
    const LabImage lab = rgb_to_lab(img);

    const int ny = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(opts.n_segments) * H / W))));
    const int nx = std::max(1, static_cast<int>(std::lround(static_cast<double>(opts.n_segments) / ny)));
    const double step_y = static_cast<double>(H) / ny, step_x = static_cast<double>(W) / nx;
    const double S = std::sqrt(static_cast<double>(N) / (nx * ny));

    auto idx = [W](int y, int x) { return static_cast<std::size_t>(y) * W + x; };
    auto gradient = [&](int y, int x) {
        const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, W - 1);
        const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, H - 1);
        auto d2 = [&](std::size_t a, std::size_t b) {
            const double dl = lab.L[a] - lab.L[b], da = lab.a[a] - lab.a[b], db = lab.b[a] - lab.b[b];
            return dl * dl + da * da + db * db;
        };
        return d2(idx(y, x1), idx(y, x0)) + d2(idx(y1, x), idx(y0, x));
    };

    struct Center {
        double L, a, b, y, x;
    };
    std::vector<Center> centers;
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            double cy = (j + 0.5) * step_y - 0.5, cx = (i + 0.5) * step_x - 0.5;
            // Move to the lowest-gradient neighbour only when it is strictly better.
            const int ry = std::clamp(static_cast<int>(std::lround(cy)), 0, H - 1);
            const int rx = std::clamp(static_cast<int>(std::lround(cx)), 0, W - 1);
            double best = gradient(ry, rx);
            int by = -1, bx = -1;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = ry + dy, xx = rx + dx;
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                    const double g = gradient(yy, xx);
                    if (g < best) {
                        best = g;
                        by = yy;
                        bx = xx;
                    }
                }
            }
            if (by >= 0) {
                cy = by;
                cx = bx;
            }
            const std::size_t p = idx(std::clamp(static_cast<int>(std::lround(cy)), 0, H - 1),
                                      std::clamp(static_cast<int>(std::lround(cx)), 0, W - 1));
            centers.push_back({lab.L[p], lab.a[p], lab.b[p], cy, cx});
        }
    }

    std::vector<int> label(N, -1);
    std::vector<double> dist(N);
    const double m2_over_s2 = (opts.compactness * opts.compactness) / (S * S);
    for (int iter = 0; iter < opts.iterations; ++iter) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const Center& c = centers[k];
            const int y0 = std::max(0, static_cast<int>(std::floor(c.y - 2 * S)));
            const int y1 = std::min(H - 1, static_cast<int>(std::ceil(c.y + 2 * S)));
            const int x0 = std::max(0, static_cast<int>(std::floor(c.x - 2 * S)));
            const int x1 = std::min(W - 1, static_cast<int>(std::ceil(c.x + 2 * S)));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const std::size_t p = idx(y, x);
                    const double dl = lab.L[p] - c.L, da = lab.a[p] - c.a, db = lab.b[p] - c.b;
                    const double sy = y - c.y, sx = x - c.x;
                    const double d = dl * dl + da * da + db * db + (sy * sy + sx * sx) * m2_over_s2;
                    if (d < dist[p]) {
                        dist[p] = d;
                        label[p] = static_cast<int>(k);
                    }
                }
            }
        }
        std::vector<Center> sums(centers.size(), Center{0, 0, 0, 0, 0});
        std::vector<std::size_t> counts(centers.size(), 0);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const std::size_t p = idx(y, x);
                const int k = label[p];
                if (k < 0) continue;
                sums[k].L += lab.L[p];
                sums[k].a += lab.a[p];
                sums[k].b += lab.b[p];
                sums[k].y += y;
                sums[k].x += x;
                ++counts[k];
            }
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (counts[k] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[k]);
            centers[k] = {sums[k].L * inv, sums[k].a * inv, sums[k].b * inv, sums[k].y * inv, sums[k].x * inv};
        }
    }
    // Pixels outside every search window (possible for tiny n_segments) take the nearest centre.
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t p = idx(y, x);
            if (label[p] >= 0) continue;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < centers.size(); ++k) {
                const double sy = y - centers[k].y, sx = x - centers[k].x;
                const double d = sy * sy + sx * sx;
                if (d < best) {
                    best = d;
                    label[p] = static_cast<int>(k);
                }
            }
        }
    }

    LabelMap out{H, W, 0, std::vector<int>(N, -1)};
    const int min_size = opts.enforce_connectivity
                             ? std::max(1, static_cast<int>(N / centers.size() / 4))
                             : 1;
    constexpr int dy4[4] = {-1, 0, 1, 0}, dx4[4] = {0, -1, 0, 1};
    int next = 0;
    std::vector<std::size_t> stack, component;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t start = idx(y, x);
            if (out.labels[start] >= 0) continue;
            int adjacent = -1;
            for (int d = 0; d < 4; ++d) {
                const int yy = y + dy4[d], xx = x + dx4[d];
                if (yy >= 0 && yy < H && xx >= 0 && xx < W && out.labels[idx(yy, xx)] >= 0) {
                    adjacent = out.labels[idx(yy, xx)];
                }
            }
            component.clear();
            stack.assign(1, start);
            out.labels[start] = next;
            while (!stack.empty()) {
                const std::size_t p = stack.back();
                stack.pop_back();
                component.push_back(p);
                const int py = static_cast<int>(p / W), px = static_cast<int>(p % W);
                for (int d = 0; d < 4; ++d) {
                    const int yy = py + dy4[d], xx = px + dx4[d];
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                    const std::size_t q = idx(yy, xx);
                    if (out.labels[q] < 0 && label[q] == label[start]) {
                        out.labels[q] = next;
                        stack.push_back(q);
                    }
                }
            }
            if (opts.enforce_connectivity && static_cast<int>(component.size()) < min_size && adjacent >= 0) {
                for (std::size_t p : component) out.labels[p] = adjacent;
            } else {
                ++next;
            }
        }
    }
    out.count = next;
    return out;
}

RgbImage superpixel_mean_image(const RgbImage& img, const LabelMap& labels) {
    if (img.height != labels.height || img.width != labels.width) {
        throw std::invalid_argument("superpixel_mean_image: label map size mismatch");
    }
    std::vector<std::array<double, 3>> sums(labels.count, {0, 0, 0});
    std::vector<std::size_t> counts(labels.count, 0);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const int k = labels.labels[i];
        for (int c = 0; c < 3; ++c) sums[k][c] += img.pixels[3 * i + c];
        ++counts[k];
    }
    RgbImage out(img.height, img.width);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const int k = labels.labels[i];
        for (int c = 0; c < 3; ++c) out.pixels[3 * i + c] = static_cast<float>(sums[k][c] / counts[k]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hints

RgbImage color_jitter(const RgbImage& img, double hue_shift, double saturation_scale) {
    RgbImage out(img.height, img.width);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const double r = img.pixels[3 * i], g = img.pixels[3 * i + 1], b = img.pixels[3 * i + 2];
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        const double v = mx, d = mx - mn;
        double s = mx > 0 ? d / mx : 0.0;
        double h = 0.0;
        if (d > 0) {
            if (mx == r) h = std::fmod((g - b) / d, 6.0);
            else if (mx == g) h = (b - r) / d + 2.0;
            else h = (r - g) / d + 4.0;
            h /= 6.0;
        }
        h = h + hue_shift;
        h -= std::floor(h);
        s = std::clamp(s * saturation_scale, 0.0, 1.0);
        const double c = v * s;
        const double hp = h * 6.0;
        const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
        double rr = 0, gg = 0, bb = 0;
        switch (static_cast<int>(hp) % 6) {
            case 0: rr = c, gg = x; break;
            case 1: rr = x, gg = c; break;
            case 2: gg = c, bb = x; break;
            case 3: gg = x, bb = c; break;
            case 4: rr = x, bb = c; break;
            default: rr = c, bb = x; break;
        }
        const double m = v - c;
        out.pixels[3 * i] = static_cast<float>(std::clamp(rr + m, 0.0, 1.0));
        out.pixels[3 * i + 1] = static_cast<float>(std::clamp(gg + m, 0.0, 1.0));
        out.pixels[3 * i + 2] = static_cast<float>(std::clamp(bb + m, 0.0, 1.0));
    }
    return out;
}

HintSample sample_hint_regions(const RgbImage& img, const LabelMap& labels, Rng& rng, const HintOptions& opts) {
    if (img.height < opts.min_side || img.width < opts.min_side) {
        throw std::invalid_argument("sample_hint_regions: image smaller than the minimum hint side");
    }
    if (labels.height != img.height || labels.width != img.width) {
        throw std::invalid_argument("sample_hint_regions: label map size mismatch");
    }
    HintSample out;
    const int count = uniform_int(rng, opts.min_regions, opts.max_regions);
    out.jittered = uniform01(rng) < opts.jitter_probability;
    if (out.jittered) {
        const double shift = (2.0 * uniform01(rng) - 1.0) * opts.hue_shift;
        const double sat = opts.saturation_lo + uniform01(rng) * (opts.saturation_hi - opts.saturation_lo);
        out.target = color_jitter(img, shift, sat);
    } else {
        out.target = img;
    }
    const RgbImage sp_mean = superpixel_mean_image(out.target, labels);
    out.hint_image = gray_to_rgb(extract_l(out.target));
    out.mask = GrayImage(img.height, img.width, 0.0f);

    for (int k = 0; k < count; ++k) {
        HintRegion r;
        r.h = uniform_int(rng, opts.min_side, std::min(opts.max_side, img.height));
        r.w = uniform_int(rng, opts.min_side, std::min(opts.max_side, img.width));
        r.y = uniform_int(rng, 0, img.height - r.h);
        r.x = uniform_int(rng, 0, img.width - r.w);
        r.source = uniform01(rng) < opts.ground_truth_probability ? HintRegion::Source::GroundTruth
                                                                  : HintRegion::Source::Superpixel;
        const RgbImage& src = r.source == HintRegion::Source::GroundTruth ? out.target : sp_mean;
        for (int y = r.y; y < r.y + r.h; ++y) {
            for (int x = r.x; x < r.x + r.w; ++x) {
                for (int c = 0; c < 3; ++c) out.hint_image.at(y, x, c) = src.at(y, x, c);
                out.mask.at(y, x) = 1.0f;
            }
        }
        out.regions.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Captions

ColorWords load_color_words(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("load_color_words: cannot open " + file.string());
    ColorWords words;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        if (line.empty()) continue;
        std::transform(line.begin(), line.end(), line.begin(), [](unsigned char c) { return std::tolower(c); });
        words.insert(line);
    }
    return words;
}

fs::path default_color_words_path() {
    if (const char* env = std::getenv("CHROMA_DATA_DIR")) return fs::path(env) / "color_words.txt";
#ifdef CHROMA_SOURCE_DIR
    return fs::path(CHROMA_SOURCE_DIR) / "data" / "color_words.txt";
#else
    return fs::path("data") / "color_words.txt";
#endif
}

bool mentions_color(const std::string& caption, const ColorWords& words) {
    std::string token;
    auto check = [&](const std::string& tok) {
        if (tok.empty()) return false;
        if (words.count(tok)) return true;
        // Hyphenated compounds ("blue-green") count if any part is a colour word.
        std::size_t start = 0;
        while (start <= tok.size()) {
            const std::size_t dash = tok.find('-', start);
            const std::string part = tok.substr(start, dash == std::string::npos ? std::string::npos : dash - start);
            if (!part.empty() && words.count(part)) return true;
            if (dash == std::string::npos) break;
            start = dash + 1;
        }
        return false;
    };
    for (char ch : caption) {
        const unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '-') {
            token.push_back(static_cast<char>(std::tolower(c)));
        } else {
            if (check(token)) return true;
            token.clear();
        }
    }
    return check(token);
}

bool describes_black_and_white(const std::string& caption) {
    static const std::regex pattern(R"(black[\s-]+(and|&)[\s-]+white|gr[ae]yscale)", std::regex::icase);
    return std::regex_search(caption, pattern);
}

std::string caption_policy(const std::string& caption, const ColorWords& words, Rng& rng,
                           const CaptionPolicy& policy) {
    if (policy.stroke_stage) return {};
    if (!describes_black_and_white(caption) && mentions_color(caption, words)) return caption;
    return uniform01(rng) < policy.empty_probability ? std::string{} : caption;
}

// ---------------------------------------------------------------------------

std::vector<float> thumbnail_embedding(const RgbImage& img, int grid) {
    if (img.height < grid || img.width < grid) throw std::invalid_argument("thumbnail_embedding: image smaller than grid");
    const LabImage lab = rgb_to_lab(img);
    std::vector<double> acc(static_cast<std::size_t>(3 * grid * grid), 0.0);
    std::vector<int> count(static_cast<std::size_t>(grid * grid), 0);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const int cell = (y * grid / img.height) * grid + x * grid / img.width;
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            acc[3 * cell] += lab.L[i] / 100.0;
            acc[3 * cell + 1] += lab.a[i] / 128.0;
            acc[3 * cell + 2] += lab.b[i] / 128.0;
            ++count[cell];
        }
    }
    std::vector<float> out(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k] / count[k / 3]);
    return out;
}

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

const DatasetRecord& retrieve_exemplar(const DatasetRecord& target, const std::vector<DatasetRecord>& pool) {
    if (target.embedding.empty()) throw std::invalid_argument("retrieve_exemplar: target has no embedding");
    const DatasetRecord* best = nullptr;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (const auto& r : pool) {
        if (r.label != target.label || r.id == target.id) continue;
        if (r.embedding.empty()) throw std::invalid_argument("retrieve_exemplar: pool record " + r.id + " has no embedding");
        const double s = cosine_similarity(target.embedding, r.embedding);
        if (s > best_sim || (s == best_sim && best && r.id < best->id)) {
            best_sim = s;
            best = &r;
        }
    }
    if (!best) throw std::invalid_argument("retrieve_exemplar: no candidate in the target's class");
    return *best;
}

}  // namespace chroma
