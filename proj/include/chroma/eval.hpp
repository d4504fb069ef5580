#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chroma/data.hpp"
#include "chroma/pipeline.hpp"

namespace chroma {

struct ImageScore {
    std::string id;
    double colorfulness = 0;
    double psnr = 0;
    double ssim = 0;
};

/// Distribution metrics need a pre-trained embedder; the slots stay empty
/// (serialised as null) unless one is configured.
struct DistributionMetrics {
    std::optional<double> fid;
    std::optional<double> clip_score;
    std::string embedder = "none";
};

struct EvalReport {
    std::string name;
    std::uint64_t seed = kEvalSeed;
    std::string checkpoint_hash;
    std::vector<ImageScore> images;
    double colorfulness = 0, psnr = 0, ssim = 0;  // means over `images`
    DistributionMetrics distribution;

    nlohmann::json summary_json() const;
};

ImageScore score_image(const std::string& id, const RgbImage& pred, const RgbImage& truth);

/// Means in index order.
void aggregate(EvalReport& report);

/// Hint counts drawn uniformly from the closed range [lo, hi].
struct HintBucket {
    int lo = 0, hi = 19;
    std::string label() const;
};
std::vector<HintBucket> default_hint_buckets();

struct HintStudyOptions {
    std::vector<HintBucket> buckets = default_hint_buckets();
    std::uint64_t seed = kEvalSeed;
    int batch = 50;
    double guidance_scale = 7.0;
};

/// One report per bucket. Hints follow the training simulator without colour
/// jitter; every image is colourised with the evaluation seed. Records must be
/// readable images at the model's training size.
std::vector<EvalReport> run_hint_study(ModelBundle& models, const std::vector<DatasetRecord>& records,
                                       const HintStudyOptions& opts = {});

/// `reports.jsonl` (one line per image, then one per report) and `summary.txt`.
void write_reports(const std::filesystem::path& dir, const std::vector<EvalReport>& reports);
std::string summary_table(const std::vector<EvalReport>& reports);

}  // namespace chroma
