#include "chroma/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "chroma/checkpoint.hpp"
#include "chroma/image_io.hpp"
#include "chroma/log.hpp"
#include "chroma/tensor_image.hpp"

namespace chroma {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kTrainManifest = "train.tsv";
constexpr const char* kHoldoutManifest = "holdout.tsv";
constexpr const char* kEmbeddings = "embeddings.jsonl";

std::vector<int64_t> random_indices(Rng& rng, std::size_t n, int count) {
    std::vector<int64_t> idx(static_cast<std::size_t>(count));
    for (auto& i : idx) i = uniform_int(rng, 0, static_cast<int>(n) - 1);
    return idx;
}

torch::Tensor gray_batch(const torch::Tensor& rgb) {
    // [-1,1] RGB -> replicated L/100, matching gray_to_rgb(extract_l(.))
    std::vector<RgbImage> out;
    for (const auto& img : batch_to_images(rgb)) out.push_back(gray_to_rgb(extract_l(img)));
    return images_to_batch(out);
}

json optimizer_json(const OptimConfig& o, double lr) {
    return json{{"name", "AdamW"}, {"lr", lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"weight_decay", o.weight_decay}};
}

torch::optim::AdamWOptions adamw(const OptimConfig& o, double lr) {
    return torch::optim::AdamWOptions(lr).betas({o.beta1, o.beta2}).weight_decay(o.weight_decay);
}

torch::Tensor text_contexts(const ModelBundle& m, const std::vector<std::string>& captions) {
    std::vector<torch::Tensor> rows;
    for (const auto& c : captions) rows.push_back(m.text.embed(c));
    return build_context(torch::stack(rows), torch::Tensor(), m.config.model.exemplar_tokens);
}

void write_json(const fs::path& file, const json& j) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << j.dump(2) << '\n';
}

fs::path losses_dir(const fs::path& out_dir) {
    fs::create_directories(out_dir / "losses");
    return out_dir / "losses";
}

}  // namespace

// ---------------------------------------------------------------------------

PrepareReport prepare_data(const fs::path& manifest, const fs::path& out_dir, int holdout, std::uint64_t seed) {
    auto records = read_manifest(manifest);
    PrepareReport rep;
    rep.input = static_cast<int>(records.size());
    auto kept = filter_colorful(records);
    rep.kept = static_cast<int>(kept.size());
    for (auto& r : kept) {
        r.path = fs::absolute(r.path);
        r.embedding = thumbnail_embedding(read_png(r.path));
    }
    std::vector<std::pair<std::uint64_t, std::size_t>> order;
    for (std::size_t i = 0; i < kept.size(); ++i) order.emplace_back(derive_seed(seed, "holdout/" + kept[i].id), i);
    std::sort(order.begin(), order.end());
    const std::size_t h = std::min<std::size_t>(static_cast<std::size_t>(std::max(holdout, 0)), kept.size());
    std::vector<DatasetRecord> train, held;
    for (std::size_t k = 0; k < order.size(); ++k) (k < h ? held : train).push_back(kept[order[k].second]);
    auto by_id = [](const DatasetRecord& a, const DatasetRecord& b) { return a.id < b.id; };
    std::sort(train.begin(), train.end(), by_id);
    std::sort(held.begin(), held.end(), by_id);

    fs::create_directories(out_dir);
    write_manifest(out_dir / kTrainManifest, train);
    write_manifest(out_dir / kHoldoutManifest, held);
    write_embeddings(out_dir / kEmbeddings, kept);
    rep.train = static_cast<int>(train.size());
    rep.holdout = static_cast<int>(held.size());
    write_json(out_dir / "prepare_report.json",
               json{{"input", rep.input}, {"kept", rep.kept}, {"train", rep.train}, {"holdout", rep.holdout},
                    {"threshold", kColorfulThreshold}});
    return rep;
}

PreparedData load_prepared(const fs::path& dir) {
    PreparedData d;
    d.train = read_manifest(dir / kTrainManifest);
    d.holdout = read_manifest(dir / kHoldoutManifest);
    attach_embeddings(dir / kEmbeddings, d.train);
    attach_embeddings(dir / kEmbeddings, d.holdout);
    if (d.train.empty()) throw std::runtime_error("prepared data in " + dir.string() + " has no training records");
    return d;
}

ImageTable::ImageTable(std::vector<DatasetRecord> records, int size) : records_(std::move(records)) {
    pixels_ = torch::empty({static_cast<int64_t>(records_.size()), 3, size, size}, torch::kUInt8);
    for (std::size_t i = 0; i < records_.size(); ++i) {
        auto img = read_png(records_[i].path);
        if (img.height != size || img.width != size) img = resize(img, size, size);
        pixels_[static_cast<int64_t>(i)].copy_(
            (image_to_tensor(img) + 1.0).mul(127.5).round().clamp(0, 255).to(torch::kUInt8));
    }
    slic_.resize(records_.size());
}

RgbImage ImageTable::image(std::size_t i) const {
    return tensor_to_image(pixels_[static_cast<int64_t>(i)].to(torch::kFloat32).div(127.5) - 1.0);
}

torch::Tensor ImageTable::batch(const std::vector<int64_t>& idx) const {
    auto sel = pixels_.index_select(0, torch::tensor(idx, torch::kLong));
    return sel.to(torch::kFloat32).div(127.5) - 1.0;
}

const LabelMap& ImageTable::superpixels(std::size_t i) {
    if (!slic_[i]) slic_[i] = slic_superpixels(image(i));
    return *slic_[i];
}

// ---------------------------------------------------------------------------

LossLog::LossLog(std::vector<std::string> columns) : columns_(std::move(columns)), values_(columns_.size()) {}

void LossLog::add(int step, const std::vector<double>& values) {
    if (values.size() != columns_.size()) throw std::invalid_argument("LossLog: wrong number of values");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            std::ostringstream os;
            os << "training diverged: " << columns_[i] << " is " << values[i] << " at step " << step;
            throw std::runtime_error(os.str());
        }
        values_[i].push_back(values[i]);
    }
    steps_.push_back(step);
}

void LossLog::write_csv(const fs::path& file) const {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << "step";
    for (const auto& c : columns_) out << ',' << c;
    out << '\n' << std::setprecision(9);
    for (std::size_t r = 0; r < steps_.size(); ++r) {
        out << steps_[r];
        for (const auto& col : values_) out << ',' << col[r];
        out << '\n';
    }
}

LossLog LossLog::read_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::string line;
    std::getline(in, line);
    std::vector<std::string> cols;
    std::stringstream hs(line);
    std::string cell;
    std::getline(hs, cell, ',');  // step
    while (std::getline(hs, cell, ',')) cols.push_back(cell);
    LossLog log(cols);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::getline(ls, cell, ',');
        const int step = std::stoi(cell);
        std::vector<double> vals;
        while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
        log.add(step, vals);
    }
    return log;
}

double initial_mean(const std::vector<double>& v, std::size_t window) {
    const std::size_t n = std::min(window, v.size());
    if (n == 0) throw std::invalid_argument("initial_mean: empty series");
    return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n);
}

double trailing_mean(const std::vector<double>& v, std::size_t window) {
    const std::size_t n = std::min(window, v.size());
    if (n == 0) throw std::invalid_argument("trailing_mean: empty series");
    return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(n), v.end(), 0.0) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

const char* stage_name(DenoiserStage s) {
    switch (s) {
        case DenoiserStage::Base: return "base";
        case DenoiserStage::Control: return "control";
        case DenoiserStage::Stroke: return "stroke";
    }
    return "?";
}

DenoiserTrainer::DenoiserTrainer(Denoiser model, DenoiserStage stage, const OptimConfig& optim, double lr)
    : model_(std::move(model)), stage_(stage), optim_(optim), lr_(lr) {
    switch (stage) {
        case DenoiserStage::Base: params_ = model_->locked_parameters(); break;
        case DenoiserStage::Control: params_ = model_->control_parameters(); break;
        case DenoiserStage::Stroke: {
            params_ = model_->control_parameters();
            auto s = model_->stroke_parameters();
            params_.insert(params_.end(), s.begin(), s.end());
            break;
        }
    }
    set_requires_grad(*model_, false);
    set_requires_grad(params_, true);
    model_->train();
    opt_ = std::make_unique<torch::optim::AdamW>(params_, adamw(optim, lr));
}

double DenoiserTrainer::step(const DenoiserBatch& b, const NoiseSchedule& sched) {
    const auto x_t = forward_noise(b.z0, b.t, b.eps, sched);
    const auto input = stage_ == DenoiserStage::Stroke ? torch::cat({x_t, b.z_m, b.z_s}, 1) : x_t;
    const auto control = stage_ == DenoiserStage::Base ? torch::Tensor() : b.z_i;
    const auto pred = model_->forward(input, b.t, b.context, control).eps;
    auto loss = control_training_loss(pred, b.eps);
    const double v = loss.item<double>();
    if (!std::isfinite(v)) throw std::runtime_error(std::string("training diverged in stage ") + stage_name(stage_));
    opt_->zero_grad();
    loss.backward();
    opt_->step();
    return v;
}

json DenoiserTrainer::optimizer_echo() const { return optimizer_json(optim_, lr_); }

// ---------------------------------------------------------------------------


namespace {

void train_autoencoder(Autoencoder& ae, const ImageTable& table, const Config& cfg, Rng& rng, LossLog& log) {
    set_requires_grad(*ae, true);
    ae->train();
    {
        torch::NoGradGuard g;
        ae->scale.fill_(1.0);
    }
    torch::optim::AdamW opt(ae->parameters(), torch::optim::AdamWOptions(cfg.train.ae_lr).betas({0.9, 0.999}).weight_decay(0));
    for (int s = 0; s < cfg.train.ae_steps; ++s) {
        const auto x = table.batch(random_indices(rng, table.size(), cfg.train.ae_batch));
        const auto z = ae->encode(x);
        const auto r = ae->decode(z);
        auto loss = (r - x).abs().mean() + (r - x).pow(2).mean() + 1e-6 * z.pow(2).mean();
        opt.zero_grad();
        loss.backward();
        opt.step();
        log.add(s, {loss.item<double>()});
        if (s % cfg.train.log_every == 0) log_info("ae step ", s, " loss ", log.column(0).back());
    }
    // unit-variance latents for the diffusion model
    torch::NoGradGuard g;
    std::vector<int64_t> idx;
    for (std::size_t i = 0; i < std::min<std::size_t>(table.size(), 1024); ++i) idx.push_back(static_cast<int64_t>(i));
    const auto z = ae->encode(table.batch(idx));
    ae->scale.fill_(1.0 / z.std().item<double>());
    ae->eval();
    set_requires_grad(*ae, false);
}

void train_features(FeatureExtractorImpl& fx, const ImageTable& table, const Config& cfg, Rng& rng, LossLog& log) {
    set_requires_grad(fx, true);
    torch::optim::AdamW opt(fx.parameters(), torch::optim::AdamWOptions(cfg.train.ae_lr).betas({0.9, 0.999}).weight_decay(0));
    for (int s = 0; s < cfg.train.feature_steps; ++s) {
        const auto x = table.batch(random_indices(rng, table.size(), cfg.train.ae_batch));
        auto loss = (fx.reconstruct(x) - x).abs().mean();
        opt.zero_grad();
        loss.backward();
        opt.step();
        log.add(s, {loss.item<double>()});
        if (s % cfg.train.log_every == 0) log_info("features step ", s, " loss ", log.column(0).back());
    }
    set_requires_grad(fx, false);
}

struct LatentCache {
    torch::Tensor z0, zi;
};

LatentCache encode_all(Autoencoder& ae, const ImageTable& table) {
    torch::NoGradGuard g;
    LatentCache c;
    std::vector<torch::Tensor> z0, zi;
    for (std::size_t start = 0; start < table.size(); start += 256) {
        std::vector<int64_t> idx;
        for (std::size_t i = start; i < std::min(table.size(), start + 256); ++i) idx.push_back(static_cast<int64_t>(i));
        const auto x = table.batch(idx);
        z0.push_back(ae->encode(x));
        zi.push_back(ae->encode(gray_batch(x)));
    }
    c.z0 = torch::cat(z0);
    c.zi = torch::cat(zi);
    return c;
}

/// Hint-simulated batch: the clean latent comes from the (possibly jittered) target.
DenoiserBatch stroke_batch(ModelBundle& m, ImageTable& table, const std::vector<int64_t>& idx, std::uint64_t seed,
                           int step) {
    std::vector<RgbImage> targets, hints, grays;
    std::vector<torch::Tensor> masks;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto i = static_cast<std::size_t>(idx[k]);
        Rng r(derive_seed(seed, "hint/" + std::to_string(step) + "/" + std::to_string(k)));
        auto hs = sample_hint_regions(table.image(i), table.superpixels(i), r);
        grays.push_back(gray_to_rgb(extract_l(hs.target)));
        hints.push_back(std::move(hs.hint_image));
        targets.push_back(std::move(hs.target));
        masks.push_back(plane_to_tensor(hs.mask));
    }
    torch::NoGradGuard g;
    const auto cond = encode_stroke_condition(m.ae, images_to_batch(grays), images_to_batch(hints), torch::stack(masks));
    DenoiserBatch b;
    b.z0 = m.ae->encode(images_to_batch(targets));
    b.z_i = cond.z_i;
    b.z_m = cond.z_m;
    b.z_s = cond.z_s;
    return b;
}

json run_denoiser_stage(ModelBundle& m, DenoiserStage stage, int steps, double lr, ImageTable& table,
                        const LatentCache& lat, const ColorWords& words, Rng& rng, const fs::path& out_dir) {
    const auto& cfg = m.config;
    DenoiserTrainer trainer(m.denoiser, stage, cfg.train.optim, lr);
    LossLog log({"mse"});
    const int B = cfg.train.optim.batch_size;
    CaptionPolicy policy;
    policy.stroke_stage = stage == DenoiserStage::Stroke;
    const auto ckpt = out_dir / ModelFiles::kDenoiser;
    auto meta = [&](int done) {
        return json{{"stage", stage_name(stage)}, {"steps", done}, {"optimizer", trainer.optimizer_echo()},
                    {"config", cfg}};
    };
    for (int s = 0; s < steps; ++s) {
        const auto idx = random_indices(rng, table.size(), B);
        DenoiserBatch b;
        if (stage == DenoiserStage::Stroke) {
            b = stroke_batch(m, table, idx, cfg.train.seed, s);
        } else {
            const auto sel = torch::tensor(idx, torch::kLong);
            b.z0 = lat.z0.index_select(0, sel);
            b.z_i = lat.zi.index_select(0, sel);
        }
        std::vector<std::string> captions;
        for (auto i : idx) captions.push_back(caption_policy(table.record(static_cast<std::size_t>(i)).caption, words, rng, policy));
        b.context = text_contexts(m, captions);
        b.t = torch::randint(1, m.sched.T + 1, {B}, torch::kLong);
        b.eps = torch::randn_like(b.z0);
        log.add(s, {trainer.step(b, m.sched)});
        if (s % cfg.train.log_every == 0) log_info(stage_name(stage), " step ", s, " mse ", log.column(0).back());
        if (cfg.train.checkpoint_every > 0 && (s + 1) % cfg.train.checkpoint_every == 0) {
            save_checkpoint(ckpt, *m.denoiser, "denoiser", meta(s + 1));
        }
    }
    set_requires_grad(*m.denoiser, false);
    m.denoiser->eval();
    save_checkpoint(ckpt, *m.denoiser, "denoiser", meta(steps));
    log.write_csv(losses_dir(out_dir) / (std::string(stage_name(stage)) + ".csv"));
    const auto w = static_cast<std::size_t>(cfg.train.loss_window);
    return json{{"steps", steps},
                {"lr", lr},
                {"initial_mean", initial_mean(log.column(0), w)},
                {"trailing_mean", trailing_mean(log.column(0), w)}};
}

}  // namespace

TrainSummary train_main(const Config& cfg, const fs::path& data_dir, const fs::path& out_dir,
                        const std::set<std::string>& only) {
    static const std::set<std::string> known = {"ae", "features", "base", "control", "stroke"};
    for (const auto& s : only) {
        if (!known.count(s)) throw std::invalid_argument("train: unknown stage '" + s + "'");
    }
    auto run = [&](const std::string& s) { return only.empty() || only.count(s) > 0; };
    fs::create_directories(out_dir);
    save_config(out_dir / ModelFiles::kConfig, cfg);
    const auto data = load_prepared(data_dir);
    ImageTable table(data.train, cfg.model.image_size);
    log_info("training on ", table.size(), " images");
    ModelBundle m = make_models(cfg);
    Rng rng(derive_seed(cfg.train.seed, "train"));
    torch::manual_seed(cfg.train.seed);
    TrainSummary summary;

    if (run("ae")) {
        LossLog log({"loss"});
        train_autoencoder(m.ae, table, cfg, rng, log);
        log.write_csv(losses_dir(out_dir) / "autoencoder.csv");
        save_checkpoint(out_dir / ModelFiles::kAutoencoder, *m.ae, "autoencoder",
                        json{{"steps", cfg.train.ae_steps}, {"scale", m.ae->scale.item<double>()}});
        summary.stages["ae"] = json{{"trailing_mean", trailing_mean(log.column(0), 100)}};
    } else {
        load_checkpoint(out_dir / ModelFiles::kAutoencoder, *m.ae, "autoencoder");
    }
    if (run("features")) {
        auto fx = std::make_shared<FeatureExtractorImpl>(cfg.model.feature_width);
        LossLog log({"loss"});
        train_features(*fx, table, cfg, rng, log);
        log.write_csv(losses_dir(out_dir) / "features.csv");
        save_checkpoint(out_dir / ModelFiles::kFeatures, *fx, "features", json{{"steps", cfg.train.feature_steps}});
    }

    const bool denoise = run("base") || run("control") || run("stroke");
    if (!denoise) return summary;
    if (!run("base")) load_checkpoint(out_dir / ModelFiles::kDenoiser, *m.denoiser, "denoiser");
    const auto lat = encode_all(m.ae, table);
    const auto words = load_color_words(default_color_words_path());

    if (run("base")) {
        summary.stages["base"] =
            run_denoiser_stage(m, DenoiserStage::Base, cfg.train.base_steps, cfg.train.base_lr, table, lat, words, rng, out_dir);
    }
    if (run("control")) {
        m.denoiser->init_control_from_locked();
        summary.stages["control"] = run_denoiser_stage(m, DenoiserStage::Control, cfg.train.stage1_steps,
                                                       cfg.train.optim.lr, table, lat, words, rng, out_dir);
    }
    if (run("stroke")) {
        summary.stages["stroke"] = run_denoiser_stage(m, DenoiserStage::Stroke, cfg.train.stage2_steps,
                                                      cfg.train.optim.lr, table, lat, words, rng, out_dir);
    }
    const auto ld = losses_dir(out_dir);
    // stage 1 is every stroke-free stage, so its first window comes from base when present
    const auto first_log = fs::exists(ld / "base.csv") ? ld / "base.csv" : ld / "control.csv";
    if (fs::exists(first_log) && fs::exists(ld / "stroke.csv")) {
        const auto w = static_cast<std::size_t>(cfg.train.loss_window);
        const double first = initial_mean(LossLog::read_csv(first_log).column(0), w);
        const double last = trailing_mean(LossLog::read_csv(ld / "stroke.csv").column(0), w);
        summary.loss_ratio = last / first;
        summary.stages["loss_ratio"] = summary.loss_ratio;
        summary.stages["loss_ratio_from"] = first_log.filename().string();
    }
    write_json(ld / "summary.json", summary.stages);
    return summary;
}

// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<FeatureExtractorImpl> load_features(const fs::path& model_dir, const Config& cfg) {
    auto fx = std::make_shared<FeatureExtractorImpl>(cfg.model.feature_width);
    load_checkpoint(model_dir / ModelFiles::kFeatures, *fx, "features");
    set_requires_grad(*fx, false);
    fx->eval();
    return fx;
}

/// Index into `pool` of the retrieved exemplar for `target`.
std::size_t exemplar_index(const DatasetRecord& target, const ImageTable& pool) {
    const auto& hit = retrieve_exemplar(target, pool.records());
    const auto& recs = pool.records();
    for (std::size_t i = 0; i < recs.size(); ++i) {
        if (recs[i].id == hit.id) return i;
    }
    throw std::logic_error("exemplar_index: retrieved record not in pool");
}

}  // namespace

ExemplarSummary train_exemplar_main(const fs::path& data_dir, const fs::path& model_dir) {
    ModelBundle m = load_models(model_dir);
    const auto& cfg = m.config;
    auto fx = load_features(model_dir, cfg);
    const auto data = load_prepared(data_dir);
    ImageTable table(data.train, cfg.model.image_size);
    Rng rng(derive_seed(cfg.train.seed, "exemplar"));
    torch::manual_seed(derive_seed(cfg.train.seed, "exemplar/torch"));

    m.exemplar = ExemplarEmbedder(cfg.model.exemplar_tokens, cfg.model.context_dim);
    set_requires_grad(*m.exemplar, true);
    torch::optim::AdamW opt(m.exemplar->parameters(), adamw(cfg.train.optim, cfg.train.exemplar_lr));
    std::map<int64_t, int64_t> retrieved;
    LossLog log({"total", "context", "gray"});
    const int B = cfg.train.exemplar_batch;
    for (int s = 0; s < cfg.train.exemplar_steps; ++s) {
        const auto idx = random_indices(rng, table.size(), B);
        std::vector<int64_t> ex_idx;
        for (auto i : idx) {
            auto it = retrieved.find(i);
            if (it == retrieved.end()) {
                it = retrieved.emplace(i, static_cast<int64_t>(exemplar_index(table.record(static_cast<std::size_t>(i)), table))).first;
            }
            ex_idx.push_back(it->second);
        }
        const auto targets = table.batch(idx);
        const auto exemplars = table.batch(ex_idx);
        torch::Tensor z0;
        StrokeCondition cond;
        {
            torch::NoGradGuard g;
            z0 = m.ae->encode(targets);
            const auto gray = gray_batch(targets);
            cond = encode_stroke_condition(m.ae, gray, gray, torch::zeros({B, 1, targets.size(2), targets.size(3)}));
        }
        const auto t = torch::randint(1, m.sched.T + 1, {B}, torch::kLong);
        const auto x_t = forward_noise(z0, t, torch::randn_like(z0), m.sched);
        const auto text = torch::zeros({B, cfg.model.text_tokens, cfg.model.context_dim});
        const auto ctx = build_context(text, m.exemplar->forward(exemplars), cfg.model.exemplar_tokens);
        const auto eps = m.denoiser->forward(cond.locked_input(x_t), t, ctx, cond.z_i).eps;
        const auto dp = decode_predictions(m.ae, targets, x_t, eps, t, m.sched);
        const auto loss = exemplar_loss(*fx, exemplars, dp.recon, dp.generated);
        opt.zero_grad();
        loss.total.backward();
        opt.step();
        log.add(s, {loss.total.item<double>(), loss.context.item<double>(), loss.gray.item<double>()});
        if (s % cfg.train.log_every == 0) log_info("exemplar step ", s, " loss ", log.column(0).back());
    }
    set_requires_grad(*m.exemplar, false);
    save_checkpoint(model_dir / ModelFiles::kExemplar, *m.exemplar, "exemplar",
                    json{{"steps", cfg.train.exemplar_steps},
                         {"gray_weight", kExemplarGrayWeight},
                         {"optimizer", optimizer_json(cfg.train.optim, cfg.train.exemplar_lr)}});
    log.write_csv(losses_dir(model_dir) / "exemplar.csv");
    ExemplarSummary sum;
    sum.steps = cfg.train.exemplar_steps;
    const auto w = static_cast<std::size_t>(std::max(1, cfg.train.exemplar_steps / 10));
    sum.initial = initial_mean(log.column(0), w);
    sum.trailing = trailing_mean(log.column(0), w);
    return sum;
}

// ---------------------------------------------------------------------------

const char* pair_kind_name(PairKind k) {
    switch (k) {
        case PairKind::Exemplar: return "exemplar";
        case PairKind::Unconditional: return "unconditional";
        case PairKind::Prompt: return "prompt";
        case PairKind::Stroke: return "stroke";
    }
    return "?";
}

std::vector<PairKind> pair_kind_plan(int n, double exemplar_fraction, std::uint64_t seed) {
    if (n < 0 || exemplar_fraction < 0 || exemplar_fraction > 1) throw std::invalid_argument("pair_kind_plan: bad arguments");
    const int n_ex = static_cast<int>(std::lround(exemplar_fraction * n));
    static constexpr PairKind others[] = {PairKind::Unconditional, PairKind::Prompt, PairKind::Stroke};
    std::vector<PairKind> plan(static_cast<std::size_t>(n_ex), PairKind::Exemplar);
    for (int k = 0; k < n - n_ex; ++k) plan.push_back(others[k % 3]);
    Rng rng(derive_seed(seed, "pair-plan"));
    std::shuffle(plan.begin(), plan.end(), rng);
    return plan;
}

std::vector<DeformedPair> synthesize_pairs(ModelBundle& models, ImageTable& table, const std::vector<int64_t>& idx,
                                           const std::vector<PairKind>& plan, const ImageTable& exemplar_pool,
                                           std::uint64_t seed) {
    if (idx.size() != plan.size()) throw std::invalid_argument("synthesize_pairs: plan and index counts differ");
    const auto& cfg = models.config;
    auto settings = sampler_settings(models, 7.0, cfg.sag.scale, cfg.sag.ts);
    settings.steps = cfg.train.deformable_sampler_steps;
    HintOptions hint_opts;
    hint_opts.jitter_probability = 0.0;
    std::vector<DeformedPair> pairs;
    constexpr std::size_t chunk = 64;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const std::size_t end = std::min(idx.size(), start + chunk);
        std::vector<LatentJob> jobs;
        std::vector<GrayImage> ls;
        for (std::size_t k = start; k < end; ++k) {
            const auto i = static_cast<std::size_t>(idx[k]);
            const auto clean = table.image(i);
            const auto l = extract_l(clean);
            const auto gray = gray_to_rgb(l);
            RgbImage hint = gray;
            GrayImage mask(clean.height, clean.width, 0.0f);
            std::string prompt;
            std::optional<RgbImage> exemplar;
            switch (plan[k]) {
                case PairKind::Exemplar:
                    exemplar = exemplar_pool.image(exemplar_index(table.record(i), exemplar_pool));
                    break;
                case PairKind::Prompt: prompt = table.record(i).caption; break;
                case PairKind::Stroke: {
                    Rng r(derive_seed(seed, "pair-hint/" + std::to_string(k)));
                    auto hs = sample_hint_regions(clean, table.superpixels(i), r, hint_opts);
                    hint = std::move(hs.hint_image);
                    mask = std::move(hs.mask);
                    break;
                }
                case PairKind::Unconditional: break;
            }
            LatentJob j;
            j.gray = image_to_tensor(gray).unsqueeze(0);
            j.hint = image_to_tensor(hint).unsqueeze(0);
            j.mask = plane_to_tensor(mask).unsqueeze(0);
            j.context = request_context(models, prompt, exemplar);
            j.seed = derive_seed(seed, "pair/" + std::to_string(k));
            jobs.push_back(std::move(j));
            ls.push_back(l);
            DeformedPair p;
            p.clean = clean;
            p.gray = gray;
            p.kind = plan[k];
            pairs.push_back(std::move(p));
        }
        const auto sampled = sample_jobs(models, jobs, settings);
        torch::NoGradGuard g;
        const auto imgs = batch_to_images(models.ae->decode(sampled.z0));
        for (std::size_t k = 0; k < imgs.size(); ++k) pairs[start + k].deformed = replace_l_channel(imgs[k], ls[k]);
        log_info("synthesised ", end, " / ", idx.size(), " deformed pairs");
    }
    return pairs;
}

double sign_test_p(int wins, int n) {
    if (n <= 0 || wins < 0 || wins > n) throw std::invalid_argument("sign_test_p: need 0 <= wins <= n, n > 0");
    double p = 0;
    for (int k = wins; k <= n; ++k) {
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
    }
    return std::min(1.0, p);
}

std::vector<DeformedPair> heldout_pairs(ModelBundle& models, ImageTable& holdout, const ImageTable& exemplar_pool,
                                       int count) {
    const auto& cfg = models.config;
    const std::uint64_t seed = derive_seed(cfg.train.seed, "deformable") ^ 1;
    const int n = static_cast<int>(std::min<std::size_t>(holdout.size(), static_cast<std::size_t>(count)));
    std::vector<int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return synthesize_pairs(models, holdout, idx, pair_kind_plan(n, cfg.train.deformable_exemplar_fraction, seed),
                            exemplar_pool, seed);
}

DecoderComparison compare_decoders(ModelBundle& models, const std::vector<DeformedPair>& pairs) {
    if (!models.has_deformable) throw std::invalid_argument("compare_decoders: no deformable decoder loaded");
    torch::NoGradGuard ng;
    DecoderComparison out;
    for (const auto& p : pairs) {
        const auto z = models.ae->encode(image_to_tensor(p.deformed).unsqueeze(0));
        const auto guide = models.ae->encode(image_to_tensor(p.gray).unsqueeze(0));
        const auto l = extract_l(p.clean);
        const auto plain = replace_l_channel(tensor_to_image(models.ae->decode(z)), l);
        const auto deform =
            replace_l_channel(tensor_to_image(decode_deformable(models.ae, models.deformable, z, guide)), l);
        const double ep = mean_ab_error(plain, p.clean), ed = mean_ab_error(deform, p.clean);
        out.mean_plain_error += ep;
        out.mean_deformable_error += ed;
        if (ed < ep) ++out.wins;
        out.rows.push_back(json{{"kind", pair_kind_name(p.kind)}, {"plain", ep}, {"deformable", ed}});
    }
    out.n = static_cast<int>(pairs.size());
    if (out.n > 0) {
        out.mean_plain_error /= out.n;
        out.mean_deformable_error /= out.n;
        out.sign_test_p = sign_test_p(out.wins, out.n);
    }
    return out;
}

DeformableSummary train_deformable_main(const fs::path& data_dir, const fs::path& model_dir) {
    ModelBundle m = load_models(model_dir);
    const auto& cfg = m.config;
    if (!m.has_exemplar) log_warn("no exemplar encoder found; exemplar-based pairs fall back to unconditional context");
    auto fx = load_features(model_dir, cfg);
    const auto data = load_prepared(data_dir);
    ImageTable table(data.train, cfg.model.image_size);
    ImageTable held_table(data.holdout, cfg.model.image_size);
    const std::uint64_t seed = derive_seed(cfg.train.seed, "deformable");
    Rng rng(seed);
    torch::manual_seed(seed);

    const int n = cfg.train.deformable_pairs;
    const auto plan = pair_kind_plan(n, cfg.train.deformable_exemplar_fraction, seed);
    const auto pairs = synthesize_pairs(m, table, random_indices(rng, table.size(), n), plan, table, seed);
    const auto held = heldout_pairs(m, held_table, table);

    DeformableSummary sum;
    sum.pairs = n;
    sum.exemplar_fraction =
        static_cast<double>(std::count(plan.begin(), plan.end(), PairKind::Exemplar)) / std::max(1, n);

    m.deformable = DeformableDecoder(m.ae->block_channels(), cfg.model.latent_channels);
    m.has_deformable = true;
    set_requires_grad(*m.deformable, true);
    DeformableTrainer trainer(m.ae, m.deformable, fx, cfg.train.deformable_lr, cfg.train.adversarial_start,
                              cfg.train.adversarial_weight);
    LossLog log({"perceptual", "adversarial", "discriminator", "total"});
    for (int s = 0; s < cfg.train.deformable_steps; ++s) {
        std::vector<RgbImage> d, c, g;
        for (auto i : random_indices(rng, pairs.size(), cfg.train.deformable_batch)) {
            const auto& p = pairs[static_cast<std::size_t>(i)];
            d.push_back(p.deformed);
            c.push_back(p.clean);
            g.push_back(p.gray);
        }
        const auto rec = trainer.step(s, DeformableBatch{images_to_batch(d), images_to_batch(c), images_to_batch(g)});
        log.add(s, {rec.perceptual, rec.adversarial, rec.discriminator, rec.total});
        if (s % cfg.train.log_every == 0) log_info("deformable step ", s, " loss ", rec.total);
    }
    sum.steps = cfg.train.deformable_steps;
    set_requires_grad(*m.deformable, false);
    save_checkpoint(model_dir / ModelFiles::kDeformable, *m.deformable, "deformable",
                    json{{"steps", sum.steps},
                         {"pairs", n},
                         {"exemplar_fraction", sum.exemplar_fraction},
                         {"adversarial_start", cfg.train.adversarial_start},
                         {"adversarial_weight", cfg.train.adversarial_weight}});
    log.write_csv(losses_dir(model_dir) / "deformable.csv");

    const auto ev = compare_decoders(m, held);
    sum.heldout = ev.n;
    sum.wins = ev.wins;
    sum.sign_test_p = ev.sign_test_p;
    sum.mean_plain_error = ev.mean_plain_error;
    sum.mean_deformable_error = ev.mean_deformable_error;
    const json& rows = ev.rows;
    write_json(losses_dir(model_dir) / "deformable_eval.json",
               json{{"pairs", sum.pairs},
                    {"exemplar_fraction", sum.exemplar_fraction},
                    {"steps", sum.steps},
                    {"heldout", sum.heldout},
                    {"wins", sum.wins},
                    {"sign_test_p", sum.sign_test_p},
                    {"mean_plain_error", sum.mean_plain_error},
                    {"mean_deformable_error", sum.mean_deformable_error},
                    {"rows", rows}});
    return sum;
}

}  // namespace chroma
