#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "chroma/config.hpp"
#include "chroma/data.hpp"
#include "chroma/pipeline.hpp"

namespace chroma {

// ---------------------------------------------------------------------------
// Prepared data

struct PrepareReport {
    int input = 0;
    int kept = 0;
    int train = 0;
    int holdout = 0;
};

/// Filters the manifest by colourfulness, attaches retrieval embeddings and
/// splits off a deterministic holdout. Writes train.tsv, holdout.tsv and
/// embeddings.jsonl into `out_dir`.
PrepareReport prepare_data(const std::filesystem::path& manifest, const std::filesystem::path& out_dir, int holdout,
                           std::uint64_t seed);

struct PreparedData {
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> holdout;
};
PreparedData load_prepared(const std::filesystem::path& dir);

/// Images held as uint8 [N,3,S,S] (resized to S when needed), with lazily
/// computed superpixels.
class ImageTable {
public:
    ImageTable(std::vector<DatasetRecord> records, int size);

    std::size_t size() const { return records_.size(); }
    const DatasetRecord& record(std::size_t i) const { return records_[i]; }
    const std::vector<DatasetRecord>& records() const { return records_; }
    RgbImage image(std::size_t i) const;
    /// Float batch in [-1,1].
    torch::Tensor batch(const std::vector<int64_t>& idx) const;
    const LabelMap& superpixels(std::size_t i);

private:
    std::vector<DatasetRecord> records_;
    torch::Tensor pixels_;
    std::vector<std::optional<LabelMap>> slic_;
};

// ---------------------------------------------------------------------------
// Loss logging

class LossLog {
public:
    explicit LossLog(std::vector<std::string> columns);
    /// Rejects non-finite values (divergence guard).
    void add(int step, const std::vector<double>& values);
    const std::vector<double>& column(std::size_t i) const { return values_[i]; }
    std::size_t rows() const { return steps_.size(); }
    void write_csv(const std::filesystem::path& file) const;
    static LossLog read_csv(const std::filesystem::path& file);

private:
    std::vector<std::string> columns_;
    std::vector<int> steps_;
    std::vector<std::vector<double>> values_;
};

/// Mean of the first / last `window` entries (fewer when shorter).
double initial_mean(const std::vector<double>& v, std::size_t window);
double trailing_mean(const std::vector<double>& v, std::size_t window);

// ---------------------------------------------------------------------------
// Denoiser stages

enum class DenoiserStage {
    Base,     // locked network, 4-channel input, no control
    Control,  // control branch on z_i, 4-channel locked input
    Stroke,   // control branch plus the stroke input channels, 9-channel input
};
const char* stage_name(DenoiserStage s);

struct DenoiserBatch {
    torch::Tensor z0;       // [B,4,h,w] clean latents
    torch::Tensor z_i;      // [B,4,h,w] grey latents
    torch::Tensor z_m;      // [B,1,h,w] (Stroke stage)
    torch::Tensor z_s;      // [B,4,h,w] (Stroke stage)
    torch::Tensor context;  // [B,L,D]
    torch::Tensor t;        // [B] int64
    torch::Tensor eps;      // [B,4,h,w]
};

/// Owns the optimiser for one stage; only the stage's parameter group trains.
class DenoiserTrainer {
public:
    DenoiserTrainer(Denoiser model, DenoiserStage stage, const OptimConfig& optim, double lr);
    /// One step on the batch; returns the MSE. Throws on a non-finite loss.
    double step(const DenoiserBatch& batch, const NoiseSchedule& sched);
    std::vector<torch::Tensor> trainable() const { return params_; }
    nlohmann::json optimizer_echo() const;

private:
    Denoiser model_;
    DenoiserStage stage_;
    std::vector<torch::Tensor> params_;
    OptimConfig optim_;
    double lr_;
    std::unique_ptr<torch::optim::AdamW> opt_;
};

// ---------------------------------------------------------------------------
// Entry points

struct TrainSummary {
    nlohmann::json stages = nlohmann::json::object();
    /// Trailing-window mean of the stroke stage over the initial-window mean of
    /// the first stroke-free stage (base, or control when base was skipped).
    double loss_ratio = 0;
};

/// Stages in order: ae, features, base, control, stroke. `only` restricts the
/// run; skipped stages load their checkpoint from `out_dir`.
TrainSummary train_main(const Config& cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
                        const std::set<std::string>& only = {});

struct ExemplarSummary {
    double initial = 0, trailing = 0;
    int steps = 0;
};
ExemplarSummary train_exemplar_main(const std::filesystem::path& data_dir, const std::filesystem::path& model_dir);

/// Kind of colourisation used to synthesise a deformed image.
enum class PairKind { Exemplar, Unconditional, Prompt, Stroke };
const char* pair_kind_name(PairKind k);

struct DeformedPair {
    RgbImage deformed, clean, gray;
    PairKind kind = PairKind::Unconditional;
};

/// Exactly round(fraction * n) exemplar-based pairs, the rest split evenly
/// over the other kinds, in seeded random order.
std::vector<PairKind> pair_kind_plan(int n, double exemplar_fraction, std::uint64_t seed);

/// Colourises `idx` images of `table` per the plan with the loaded models.
std::vector<DeformedPair> synthesize_pairs(ModelBundle& models, ImageTable& table, const std::vector<int64_t>& idx,
                                           const std::vector<PairKind>& plan, const ImageTable& exemplar_pool,
                                           std::uint64_t seed);

struct DeformableSummary {
    int pairs = 0;
    double exemplar_fraction = 0;
    int steps = 0;
    int heldout = 0;
    int wins = 0;               // held-out pairs where the deformable decode is closer
    double sign_test_p = 1.0;   // one-sided
    double mean_plain_error = 0, mean_deformable_error = 0;
};
/// Deformed versions of the first `count` holdout images, seeded from the config.
std::vector<DeformedPair> heldout_pairs(ModelBundle& models, ImageTable& holdout, const ImageTable& exemplar_pool,
                                       int count = 100);

/// Per pair, mean ab error against ground truth of the plain and the deformable
/// decode of the deformed image's latent, both after lightness replacement.
struct DecoderComparison {
    int n = 0;
    int wins = 0;
    double sign_test_p = 1.0;
    double mean_plain_error = 0, mean_deformable_error = 0;
    nlohmann::json rows = nlohmann::json::array();
};
DecoderComparison compare_decoders(ModelBundle& models, const std::vector<DeformedPair>& pairs);

DeformableSummary train_deformable_main(const std::filesystem::path& data_dir, const std::filesystem::path& model_dir);

/// P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n);

}  // namespace chroma
