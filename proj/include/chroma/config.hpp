#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace chroma {

struct ScheduleConfig {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string sampler_mode = "deterministic";  // or "ancestral"
    int sampler_steps = 50;
};

struct SagSettings {
    bool enabled = true;
    double scale = 0.05;
    int ts = 600;
    double blur_sigma = 1.0;
    int blur_kernel = 9;
};

struct ModelConfig {
    int image_size = 64;
    int factor = 8;
    int latent_channels = 4;
    int ae_width = 16;          // widths double per level: w, 2w, 4w
    int unet_width = 64;
    int context_dim = 64;
    int text_tokens = 8;
    int exemplar_tokens = 4;
    int feature_width = 16;
    std::string text_embedder = "toy";
    std::string feature_extractor = "toy";
};

struct OptimConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-2;
    int batch_size = 32;
};

struct TrainConfig {
    std::uint64_t seed = 1;
    OptimConfig optim;
    double ae_lr = 1e-3;
    double base_lr = 1e-5;
    double exemplar_lr = 1e-4;
    double deformable_lr = 1e-4;
    int ae_batch = 16;
    int ae_steps = 3000;
    int feature_steps = 1000;
    int base_steps = 15000;
    int stage1_steps = 3000;
    int stage2_steps = 12000;
    int exemplar_steps = 2000;
    int exemplar_batch = 4;
    int deformable_steps = 9000;
    int deformable_pairs = 1000;
    int deformable_batch = 8;
    int deformable_sampler_steps = 20;
    double deformable_exemplar_fraction = 0.3;
    int adversarial_start = 500;
    double adversarial_weight = 0.025;
    int checkpoint_every = 1000;
    int log_every = 100;
    int loss_window = 1000;
};

struct DataConfig {
    std::string corpus_dir = "corpus";
    int corpus_count = 6000;
    std::uint64_t corpus_seed = 1;
    int holdout = 300;
};

struct EvalConfig {
    int images = 100;
    std::uint64_t seed = 859311133ULL;
};

struct Config {
    ScheduleConfig schedule;
    SagSettings sag;
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;
};

void to_json(nlohmann::json& j, const Config& c);
void from_json(const nlohmann::json& j, Config& c);

/// Missing keys keep their defaults; unknown keys are rejected.
Config load_config(const std::filesystem::path& file);
Config config_from_json(const nlohmann::json& j);
void save_config(const std::filesystem::path& file, const Config& c);

}  // namespace chroma
