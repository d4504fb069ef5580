#include "chroma/config.hpp"

#include <fstream>
#include <stdexcept>

namespace chroma {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, steps, beta_start, beta_end, sampler_mode, sampler_steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SagSettings, enabled, scale, ts, blur_sigma, blur_kernel)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, image_size, factor, latent_channels, ae_width, unet_width,
                                                context_dim, text_tokens, exemplar_tokens, feature_width, text_embedder,
                                                feature_extractor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimConfig, lr, beta1, beta2, weight_decay, batch_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, seed, optim, ae_lr, base_lr, exemplar_lr, deformable_lr,
                                                ae_batch, ae_steps, feature_steps,
                                                base_steps, stage1_steps, stage2_steps, exemplar_steps, exemplar_batch,
                                                deformable_steps, deformable_pairs, deformable_batch,
                                                deformable_sampler_steps, deformable_exemplar_fraction,
                                                adversarial_start, adversarial_weight, checkpoint_every, log_every,
                                                loss_window)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, corpus_dir, corpus_count, corpus_seed, holdout)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, images, seed)

void to_json(json& j, const Config& c) {
    j = json{{"schedule", c.schedule}, {"sag", c.sag},   {"model", c.model},
             {"train", c.train},       {"data", c.data}, {"eval", c.eval}};
}

void from_json(const json& j, Config& c) {
    const Config d;
    c.schedule = j.value("schedule", d.schedule);
    c.sag = j.value("sag", d.sag);
    c.model = j.value("model", d.model);
    c.train = j.value("train", d.train);
    c.data = j.value("data", d.data);
    c.eval = j.value("eval", d.eval);
}

namespace {

void reject_unknown(const json& given, const json& known, const std::string& path) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!known.contains(key)) throw std::invalid_argument("config: unknown key '" + here + "'");
        if (known[key].is_object()) reject_unknown(value, known[key], here);
    }
}

void validate(const Config& c) {
    if (c.schedule.steps < 1) throw std::invalid_argument("config: schedule.steps must be >= 1");
    if (c.schedule.sampler_mode != "deterministic" && c.schedule.sampler_mode != "ancestral") {
        throw std::invalid_argument("config: schedule.sampler_mode must be deterministic or ancestral");
    }
    if (c.schedule.sampler_steps < 1 || c.schedule.sampler_steps > c.schedule.steps) {
        throw std::invalid_argument("config: schedule.sampler_steps out of range");
    }
    if (c.sag.blur_kernel % 2 == 0) throw std::invalid_argument("config: sag.blur_kernel must be odd");
    if (c.sag.scale < 0) throw std::invalid_argument("config: sag.scale must be >= 0");
    if (c.sag.ts < 0 || c.sag.ts > c.schedule.steps) throw std::invalid_argument("config: sag.ts outside [0, steps]");
    if (c.model.image_size % c.model.factor != 0) {
        throw std::invalid_argument("config: model.image_size must be a multiple of model.factor");
    }
    if (c.model.unet_width % 8 != 0 || c.model.ae_width % 8 != 0) {
        throw std::invalid_argument("config: network widths must be multiples of 8 (group norm)");
    }
}

}  // namespace

Config config_from_json(const json& j) {
    reject_unknown(j, json(Config{}), "");
    Config c = j.get<Config>();
    validate(c);
    return c;
}

Config load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("load_config: cannot open " + file.string());
    return config_from_json(json::parse(in));
}

void save_config(const std::filesystem::path& file, const Config& c) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("save_config: cannot write " + file.string());
    out << json(c).dump(2) << '\n';
}

}  // namespace chroma
