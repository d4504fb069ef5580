#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "chroma/color_math.hpp"
#include "chroma/random.hpp"

namespace chroma {

struct DatasetRecord {
    std::string id;
    std::filesystem::path path;
    std::string caption;
    int label = 0;
    std::vector<float> embedding;
};

/// Tab-separated manifest: id, path, caption, label. Relative paths resolve
/// against the manifest's directory.
std::vector<DatasetRecord> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<DatasetRecord>& records);

/// One JSON object per line: {"id": ..., "embedding": [...]}.
void write_embeddings(const std::filesystem::path& file, const std::vector<DatasetRecord>& records);
void attach_embeddings(const std::filesystem::path& file, std::vector<DatasetRecord>& records);

// ---------------------------------------------------------------------------
// Synthetic desk corpus: ten shape classes on textured backgrounds.

struct CorpusOptions {
    int count = 6000;
    int size = 64;
    std::uint64_t seed = 1;
    double grayscale_fraction = 0.08;
};

inline constexpr int kCorpusClasses = 10;
const std::vector<std::string>& corpus_class_names();

/// Deterministic in (seed, index).
std::pair<RgbImage, DatasetRecord> synthesize_image(const CorpusOptions& opts, int index);

/// Writes PNGs plus manifest.tsv into `dir`; returns the manifest path.
std::filesystem::path generate_corpus(const std::filesystem::path& dir, const CorpusOptions& opts);

// ---------------------------------------------------------------------------

inline constexpr double kColorfulThreshold = 12.0;

using ImageLoader = std::function<RgbImage(const DatasetRecord&)>;

/// Keeps records whose mean pairwise channel variance is >= threshold.
/// Unreadable records are skipped with a warning.
std::vector<DatasetRecord> filter_colorful(const std::vector<DatasetRecord>& records,
                                           double threshold = kColorfulThreshold,
                                           const ImageLoader& loader = {});

// ---------------------------------------------------------------------------

struct LabelMap {
    int height = 0;
    int width = 0;
    int count = 0;
    std::vector<int> labels;
    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

struct SlicOptions {
    int n_segments = 100;
    double compactness = 10.0;
    int iterations = 10;
    bool enforce_connectivity = true;
};

LabelMap slic_superpixels(const RgbImage& img, const SlicOptions& opts = {});

/// Per-pixel colour of the segment mean.
RgbImage superpixel_mean_image(const RgbImage& img, const LabelMap& labels);

// ---------------------------------------------------------------------------

struct HintRegion {
    enum class Source { GroundTruth, Superpixel };
    int y = 0, x = 0, h = 0, w = 0;
    Source source = Source::Superpixel;
};

struct HintSample {
    RgbImage hint_image;  ///< grey L image with coloured regions overlaid
    GrayImage mask;       ///< 1 exactly on the union of regions
    std::vector<HintRegion> regions;
    RgbImage target;      ///< ground truth, colour-jittered together with the hints when jitter fired
    bool jittered = false;
};

struct HintOptions {
    int min_regions = 1;
    int max_regions = 100;
    int min_side = 5;
    int max_side = 50;
    double ground_truth_probability = 0.2;
    double jitter_probability = 0.2;
    double hue_shift = 0.1;              ///< fraction of the hue circle, symmetric
    double saturation_lo = 0.7;
    double saturation_hi = 1.3;
};

HintSample sample_hint_regions(const RgbImage& img, const LabelMap& labels, Rng& rng,
                               const HintOptions& opts = {});

/// Hue rotation by `hue_shift` turns and saturation scaling in HSV.
RgbImage color_jitter(const RgbImage& img, double hue_shift, double saturation_scale);

// ---------------------------------------------------------------------------

using ColorWords = std::unordered_set<std::string>;

ColorWords load_color_words(const std::filesystem::path& file);
/// Locates data/color_words.txt relative to the source tree or CHROMA_DATA_DIR.
std::filesystem::path default_color_words_path();

bool mentions_color(const std::string& caption, const ColorWords& words);
bool describes_black_and_white(const std::string& caption);

struct CaptionPolicy {
    double empty_probability = 0.6;
    bool stroke_stage = false;
};

std::string caption_policy(const std::string& caption, const ColorWords& words, Rng& rng,
                           const CaptionPolicy& policy = {});

// ---------------------------------------------------------------------------

/// Retrieval descriptor: Lab means over a grid x grid tiling (L / 100, a / 128,
/// b / 128), row-major, 3 * grid * grid values.
std::vector<float> thumbnail_embedding(const RgbImage& img, int grid = 4);

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

/// Highest cosine similarity within the target's class, target excluded; ties
/// go to the lexicographically smallest id. Throws if no candidate exists.
const DatasetRecord& retrieve_exemplar(const DatasetRecord& target, const std::vector<DatasetRecord>& pool);

}  // namespace chroma
