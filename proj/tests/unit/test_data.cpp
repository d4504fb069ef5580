#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <filesystem>
#include <limits>
#include <map>
#include <set>

#include "chroma/data.hpp"
#include "chroma/image_io.hpp"

using namespace chroma;
namespace fs = std::filesystem;

namespace {

RgbImage two_tone(int h, int w, int split_col) {
    RgbImage img(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool left = x < split_col;
            img.at(y, x, 0) = left ? 0.9f : 0.1f;
            img.at(y, x, 1) = left ? 0.2f : 0.3f;
            img.at(y, x, 2) = left ? 0.1f : 0.9f;
        }
    }
    return img;
}

// Full-scan 2-means in (L,a,b,x,y) with SLIC's distance and the same seeds.
std::vector<int> oracle_two_means(const RgbImage& img, double compactness, std::vector<std::array<double, 2>> seeds) {
    const LabImage lab = rgb_to_lab(img);
    const int H = img.height, W = img.width;
    const double S = std::sqrt(static_cast<double>(H * W) / seeds.size());
    struct C {
        double L, a, b, y, x;
    };
    std::vector<C> centers;
    for (auto s : seeds) {
        const std::size_t p = static_cast<std::size_t>(std::lround(s[0])) * W + static_cast<std::size_t>(std::lround(s[1]));
        centers.push_back({lab.L[p], lab.a[p], lab.b[p], s[0], s[1]});
    }
    std::vector<int> label(H * W);
    for (int iter = 0; iter < 10; ++iter) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * W + x;
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < centers.size(); ++k) {
                    const double dl = lab.L[p] - centers[k].L, da = lab.a[p] - centers[k].a, db = lab.b[p] - centers[k].b;
                    const double dy = y - centers[k].y, dx = x - centers[k].x;
                    const double d = dl * dl + da * da + db * db + (dy * dy + dx * dx) * compactness * compactness / (S * S);
                    if (d < best) {
                        best = d;
                        label[p] = static_cast<int>(k);
                    }
                }
            }
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            C sum{0, 0, 0, 0, 0};
            int n = 0;
            for (int p = 0; p < H * W; ++p) {
                if (label[p] != static_cast<int>(k)) continue;
                sum.L += lab.L[p];
                sum.a += lab.a[p];
                sum.b += lab.b[p];
                sum.y += p / W;
                sum.x += p % W;
                ++n;
            }
            if (n) centers[k] = {sum.L / n, sum.a / n, sum.b / n, sum.y / n, sum.x / n};
        }
    }
    return label;
}

// Two label maps describe the same partition.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    std::map<int, int> ab, ba;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto [it1, ins1] = ab.emplace(a[i], b[i]);
        auto [it2, ins2] = ba.emplace(b[i], a[i]);
        if (it1->second != b[i] || it2->second != a[i]) return false;
    }
    return true;
}

RgbImage corpus_image(int index) {
    CorpusOptions opts;
    opts.count = 1;
    return synthesize_image(opts, index).first;
}

}  // namespace

TEST_CASE("manifest round trip") {
    const fs::path dir = fs::temp_directory_path() / "chroma_manifest_test";
    fs::create_directories(dir);
    std::vector<DatasetRecord> recs = {{"a", dir / "a.png", "a red car", 3, {}}, {"b", dir / "b.png", "", 1, {}}};
    write_manifest(dir / "m.tsv", recs);
    const auto back = read_manifest(dir / "m.tsv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "a");
    CHECK(back[0].caption == "a red car");
    CHECK(back[0].label == 3);
    CHECK(back[0].path.lexically_normal() == (dir / "a.png").lexically_normal());
    CHECK(back[1].caption.empty());
    fs::remove_all(dir);
}

TEST_CASE("filter_colorful") {
    const DatasetRecord rec{"x", "", "", 0, {}};
    SUBCASE("exact grayscale is removed") {
        const RgbImage gray = gray_to_rgb(GrayImage(8, 8, 0.4f));
        const auto kept = filter_colorful({rec}, kColorfulThreshold, [&](const DatasetRecord&) { return gray; });
        CHECK(kept.empty());
    }
    SUBCASE("an image at exactly the threshold is kept") {
        // 8-bit pixels whose pair-difference variances average exactly 12.
        RgbImage img(2, 2);
        const int px[4][3] = {{94, 100, 94}, {98, 100, 106}, {100, 100, 100}, {100, 100, 100}};
        for (int i = 0; i < 4; ++i) {
            for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = px[i][c] / 255.0f;
        }
        const double v = mean_pairwise_channel_variance(img);
        CHECK(std::abs(v - 12.0) < 1e-3);
        auto loader = [&](const DatasetRecord&) { return img; };
        CHECK(filter_colorful({rec}, v, loader).size() == 1);
        CHECK(filter_colorful({rec}, std::nextafter(v, 100.0), loader).empty());
    }
    SUBCASE("unreadable files are skipped, not fatal") {
        const DatasetRecord missing{"m", "/nonexistent/file.png", "", 0, {}};
        CHECK(filter_colorful({missing}).empty());
    }
}

TEST_CASE("slic_superpixels") {
    SUBCASE("constant image splits into seeded tiles") {
        const RgbImage img(16, 16, 0.6f);
        const LabelMap lm = slic_superpixels(img, {4, 10.0, 10, true});
        CHECK(lm.count == 4);
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const int expected = (y / 8) * 2 + (x / 8);
                CHECK(lm.at(y, x) == expected);
            }
        }
    }
    SUBCASE("labels form a contiguous partition") {
        const RgbImage img = corpus_image(3);
        const LabelMap lm = slic_superpixels(img, {});
        std::set<int> seen(lm.labels.begin(), lm.labels.end());
        CHECK(*seen.begin() == 0);
        CHECK(*seen.rbegin() == lm.count - 1);
        CHECK(static_cast<int>(seen.size()) == lm.count);
    }
    SUBCASE("two-tone image matches brute-force 2-means") {
        const RgbImage img = two_tone(16, 16, 5);
        const LabelMap lm = slic_superpixels(img, {2, 0.5, 10, true});
        const auto oracle = oracle_two_means(img, 0.5, {{7.5, 3.5}, {7.5, 11.5}});
        CHECK(same_partition(lm.labels, oracle));
        for (int y = 0; y < 16; ++y) {
            CHECK(lm.at(y, 4) != lm.at(y, 5));
        }
    }
    SUBCASE("too many segments is rejected") {
        CHECK_THROWS_AS(slic_superpixels(RgbImage(4, 4, 0.1f), {17, 10.0, 10, true}), std::invalid_argument);
    }
}

TEST_CASE("sample_hint_regions") {
    const RgbImage img = corpus_image(11);
    const LabelMap lm = slic_superpixels(img, {});
    SUBCASE("seeded determinism") {
        Rng a(42), b(42);
        const HintSample s1 = sample_hint_regions(img, lm, a);
        const HintSample s2 = sample_hint_regions(img, lm, b);
        CHECK(s1.hint_image.pixels == s2.hint_image.pixels);
        CHECK(s1.mask.values == s2.mask.values);
        CHECK(s1.regions.size() == s2.regions.size());
    }
    SUBCASE("mask is the region union and the rest is the grey image") {
        Rng rng(9);
        for (int trial = 0; trial < 50; ++trial) {
            const HintSample s = sample_hint_regions(img, lm, rng);
            GrayImage expect(img.height, img.width, 0.0f);
            for (const auto& r : s.regions) {
                CHECK(r.h >= 5);
                CHECK(r.h <= 50);
                CHECK(r.w >= 5);
                CHECK(r.w <= 50);
                for (int y = r.y; y < r.y + r.h; ++y) {
                    for (int x = r.x; x < r.x + r.w; ++x) expect.at(y, x) = 1.0f;
                }
            }
            CHECK(s.mask.values == expect.values);
            const GrayImage l = extract_l(s.target);
            bool consistent = true;
            for (int y = 0; y < img.height; ++y) {
                for (int x = 0; x < img.width; ++x) {
                    if (s.mask.at(y, x) == 0.0f) {
                        for (int c = 0; c < 3; ++c) consistent &= s.hint_image.at(y, x, c) == l.at(y, x);
                    }
                }
            }
            CHECK(consistent);
            CHECK(s.regions.size() >= 1);
            CHECK(s.regions.size() <= 100);
        }
    }
    SUBCASE("too small images are rejected") {
        const RgbImage tiny(4, 4, 0.5f);
        Rng rng(1);
        CHECK_THROWS_AS(sample_hint_regions(tiny, slic_superpixels(tiny, {4, 10, 10, true}), rng), std::invalid_argument);
    }
}

TEST_CASE("caption policy") {
    const ColorWords words = load_color_words(default_color_words_path());
    CHECK(words.size() == 235);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) CHECK(caption_policy("a red car on the street", words, rng) == "a red car on the street");
    CHECK(describes_black_and_white("a black and white photo of a dog"));
    CHECK_FALSE(describes_black_and_white("a black cat on a white sofa"));

    int empty = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        if (caption_policy("a black and white photo of a dog", words, rng).empty()) ++empty;
    }
    const double frac = static_cast<double>(empty) / trials;
    CHECK(frac >= 0.585);
    CHECK(frac <= 0.615);

    CHECK(caption_policy("a red car", words, rng, {0.6, true}).empty());

    Rng r1(77), r2(77);
    for (int i = 0; i < 20; ++i) CHECK(caption_policy("a dog", words, r1) == caption_policy("a dog", words, r2));
}

TEST_CASE("retrieve_exemplar") {
    DatasetRecord target{"t", "", "", 1, {1, 0}};
    SUBCASE("pool of one") {
        std::vector<DatasetRecord> pool = {{"a", "", "", 1, {0.2f, 0.7f}}, target};
        CHECK(retrieve_exemplar(target, pool).id == "a");
    }
    SUBCASE("hand cosine") {
        std::vector<DatasetRecord> pool = {{"B", "", "", 1, {0, 1}}, {"A", "", "", 1, {1, 0}}, {"C", "", "", 2, {1, 0}}};
        CHECK(retrieve_exemplar(target, pool).id == "A");
    }
    SUBCASE("ties go to the smallest id") {
        std::vector<DatasetRecord> pool = {{"z", "", "", 1, {2, 0}}, {"m", "", "", 1, {1, 0}}};
        CHECK(retrieve_exemplar(target, pool).id == "m");
    }
    SUBCASE("linear-scan oracle on a 100-record pool") {
        Rng rng(3);
        std::normal_distribution<float> n(0.0f, 1.0f);
        std::vector<DatasetRecord> pool;
        for (int i = 0; i < 100; ++i) {
            DatasetRecord r{"r" + std::to_string(1000 + i), "", "", i % 3, {}};
            for (int k = 0; k < 8; ++k) r.embedding.push_back(n(rng));
            pool.push_back(r);
        }
        for (int q = 0; q < 100; ++q) {
            const DatasetRecord& t = pool[q];
            std::string best;
            double best_sim = -2;
            for (const auto& r : pool) {
                if (r.label != t.label || r.id == t.id) continue;
                double dot = 0, na = 0, nb = 0;
                for (int k = 0; k < 8; ++k) {
                    dot += t.embedding[k] * r.embedding[k];
                    na += t.embedding[k] * t.embedding[k];
                    nb += r.embedding[k] * r.embedding[k];
                }
                const double s = dot / std::sqrt(na * nb);
                if (s > best_sim) {
                    best_sim = s;
                    best = r.id;
                }
            }
            const auto& got = retrieve_exemplar(t, pool);
            CHECK(got.id == best);
            CHECK(got.id != t.id);
        }
    }
    SUBCASE("empty pool is rejected") {
        CHECK_THROWS_AS(retrieve_exemplar(target, {}), std::invalid_argument);
    }
}

TEST_CASE("synthetic corpus is deterministic and mostly colourful") {
    CorpusOptions opts;
    const auto a = synthesize_image(opts, 17);
    const auto b = synthesize_image(opts, 17);
    CHECK(a.first.pixels == b.first.pixels);
    CHECK(a.second.caption == b.second.caption);
    int colourful = 0;
    for (int i = 0; i < 100; ++i) {
        if (mean_pairwise_channel_variance(synthesize_image(opts, i).first) >= kColorfulThreshold) ++colourful;
    }
    CHECK(colourful > 70);
    CHECK(colourful < 100);
}
