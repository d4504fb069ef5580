#include "chroma/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "chroma/checkpoint.hpp"
#include "chroma/image_io.hpp"
#include "chroma/log.hpp"
#include "chroma/tensor_image.hpp"

namespace chroma {

namespace fs = std::filesystem;

namespace {

std::uint64_t file_digest(const fs::path& p, std::uint64_t h) {
    std::ifstream in(p, std::ios::binary);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
    }
    return h;
}

GrayImage binarize(const GrayImage& m) {
    GrayImage out(m.height, m.width);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) out.values[i] = m.values[i] >= 0.5f ? 1.0f : 0.0f;
    return out;
}

bool any_set(const GrayImage& m) {
    for (float v : m.values) {
        if (v > 0.5f) return true;
    }
    return false;
}

void require(bool ok, const std::string& field, const std::string& reason) {
    if (!ok) throw std::invalid_argument(field + ": " + reason);
}

/// Region mask (1 = recolour) at the given resolution.
GrayImage region_mask(const ColorizeRequest& req, int h, int w) {
    const float scale = static_cast<float>(h) / static_cast<float>(req.image.height);
    GrayImage m = stroke_footprint(req.strokes, h, w, scale);
    if (req.hint_mask) {
        const auto extra = binarize(resize(*req.hint_mask, h, w));
        for (std::size_t i = 0; i < m.pixel_count(); ++i) m.values[i] = std::max(m.values[i], extra.values[i]);
    }
    return m;
}

struct Prepared {
    GrayImage gray_l;   // original resolution
    GrayImage gray_m;   // model resolution
    RgbImage hint;      // model resolution
    GrayImage mask;     // model resolution
    int clipped = 0;
};

Prepared prepare(const ColorizeRequest& req, const ModelBundle& models) {
    Prepared p;
    p.gray_l = extract_l(req.image);
    const auto [h, w] = model_resolution(req.image.height, req.image.width, models.config.model.image_size,
                                         AutoencoderImpl::kFactor);
    const float scale = static_cast<float>(h) / static_cast<float>(req.image.height);
    p.gray_m = resize(p.gray_l, h, w);
    p.hint = gray_to_rgb(p.gray_m);
    p.mask = GrayImage(h, w, 0.0f);

    if (req.region_only) {
        const auto keep = resize(req.image, h, w);
        const auto region = region_mask(req, h, w);
        for (std::size_t i = 0; i < region.pixel_count(); ++i) {
            if (region.values[i] > 0.5f) continue;
            for (int c = 0; c < 3; ++c) p.hint.pixels[3 * i + c] = keep.pixels[3 * i + c];
            p.mask.values[i] = 1.0f;
        }
        if (req.use_stroke_color) p.clipped = rasterize_strokes(req.strokes, p.hint, p.mask, scale).clipped_strokes;
        return p;
    }
    if (req.hint_image && req.hint_mask) {
        const auto hm = binarize(resize(*req.hint_mask, h, w));
        const auto hi = resize(*req.hint_image, h, w);
        for (std::size_t i = 0; i < hm.pixel_count(); ++i) {
            if (hm.values[i] < 0.5f) continue;
            for (int c = 0; c < 3; ++c) p.hint.pixels[3 * i + c] = hi.pixels[3 * i + c];
            p.mask.values[i] = 1.0f;
        }
    }
    if (req.use_stroke_color) p.clipped = rasterize_strokes(req.strokes, p.hint, p.mask, scale).clipped_strokes;
    return p;
}

}  // namespace

ModelBundle make_models(const Config& cfg) {
    torch::manual_seed(cfg.train.seed);
    ModelBundle m;
    m.config = cfg;
    m.sched = build_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
    const auto& mc = cfg.model;
    m.ae = Autoencoder(mc.ae_width, mc.latent_channels);
    m.denoiser = Denoiser(DenoiserOptions{mc.latent_channels, mc.unet_width, mc.context_dim});
    m.exemplar = ExemplarEmbedder(mc.exemplar_tokens, mc.context_dim);
    m.deformable = DeformableDecoder(m.ae->block_channels(), mc.latent_channels);
    m.text = HashTextEmbedder{mc.text_tokens, mc.context_dim};
    for (torch::nn::Module* mod : std::vector<torch::nn::Module*>{m.ae.get(), m.denoiser.get(), m.exemplar.get(),
                                                                  m.deformable.get()}) {
        mod->eval();
        set_requires_grad(*mod, false);
    }
    return m;
}

ModelBundle load_models(const fs::path& dir) {
    const auto cfg_path = dir / ModelFiles::kConfig;
    if (!fs::exists(cfg_path)) throw std::runtime_error("model directory " + dir.string() + " has no config.json");
    ModelBundle m = make_models(load_config(cfg_path));
    std::uint64_t h = 1469598103934665603ULL;
    for (const char* req : {ModelFiles::kAutoencoder, ModelFiles::kDenoiser}) {
        if (!fs::exists(dir / req)) throw std::runtime_error("model directory " + dir.string() + " lacks " + req);
    }
    load_checkpoint(dir / ModelFiles::kAutoencoder, *m.ae, "autoencoder");
    h = file_digest(dir / ModelFiles::kAutoencoder, h);
    load_checkpoint(dir / ModelFiles::kDenoiser, *m.denoiser, "denoiser");
    h = file_digest(dir / ModelFiles::kDenoiser, h);
    if (fs::exists(dir / ModelFiles::kExemplar)) {
        load_checkpoint(dir / ModelFiles::kExemplar, *m.exemplar, "exemplar");
        h = file_digest(dir / ModelFiles::kExemplar, h);
        m.has_exemplar = true;
    }
    if (fs::exists(dir / ModelFiles::kDeformable)) {
        load_checkpoint(dir / ModelFiles::kDeformable, *m.deformable, "deformable");
        h = file_digest(dir / ModelFiles::kDeformable, h);
        m.has_deformable = true;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    m.checkpoint_hash = os.str();
    return m;
}

void ColorizeRequest::validate() const {
    require(image.height > 0 && image.width > 0, "image", "empty image");
    image.validate();
    require(num_outputs >= 1 && num_outputs <= 16, "num_outputs", "must lie in [1, 16]");
    require(std::isfinite(guidance_scale) && guidance_scale >= 0, "guidance_scale", "must be finite and >= 0");
    require(std::isfinite(sag_scale) && sag_scale >= 0, "sag_scale", "must be finite and >= 0");
    require(sag_ts >= 0, "sag_ts", "must be >= 0");
    for (std::size_t i = 0; i < strokes.size(); ++i) {
        const auto& s = strokes[i];
        const std::string f = "strokes[" + std::to_string(i) + "]";
        for (double c : {s.color.r, s.color.g, s.color.b}) require(c >= 0 && c <= 1, f + ".color", "components must lie in [0, 1]");
        require(s.radius > 0, f + ".radius", "must be positive");
        if (s.kind == Stroke::Kind::Polyline) require(!s.points.empty(), f + ".points", "polyline needs a point");
    }
    if (exemplar) {
        require(exemplar->height > 0 && exemplar->width > 0, "exemplar", "empty image");
        exemplar->validate();
    }
    require(hint_image.has_value() == hint_mask.has_value() || region_only, "hint_mask", "hint image and mask go together");
    if (hint_image) {
        require(hint_image->height == image.height && hint_image->width == image.width, "hint_image", "size differs from image");
    }
    if (hint_mask) {
        require(hint_mask->height == image.height && hint_mask->width == image.width, "hint_mask", "size differs from image");
    }
}

std::array<int, 2> model_resolution(int height, int width, int short_side, int factor) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("model_resolution: empty image");
    const bool tall = height >= width;
    const double s = static_cast<double>(short_side) / (tall ? width : height);
    const int long_side = std::max(factor, static_cast<int>(std::lround((tall ? height : width) * s / factor)) * factor);
    return tall ? std::array<int, 2>{long_side, short_side} : std::array<int, 2>{short_side, long_side};
}

torch::Tensor request_context(ModelBundle& models, const std::string& prompt, const std::optional<RgbImage>& exemplar) {
    const auto text = models.text.embed(prompt).unsqueeze(0);
    torch::Tensor ex;
    if (exemplar && models.has_exemplar) {
        torch::NoGradGuard g;
        const int s = models.config.model.image_size;
        ex = models.exemplar->forward(image_to_tensor(resize(*exemplar, s, s)).unsqueeze(0));
    }
    return build_context(text, ex, models.config.model.exemplar_tokens);
}

SamplerSettings sampler_settings(const ModelBundle& models, double guidance_scale, double sag_scale, int sag_ts) {
    SamplerSettings s;
    s.steps = models.config.schedule.sampler_steps;
    s.mode = parse_sampler_mode(models.config.schedule.sampler_mode);
    s.guidance_scale = guidance_scale;
    s.sag_enabled = models.config.sag.enabled;
    s.sag.scale = sag_scale;
    s.sag.ts = std::min(sag_ts, models.sched.T);
    s.sag.T = models.sched.T;
    s.sag.blur_sigma = models.config.sag.blur_sigma;
    s.sag.blur_kernel = models.config.sag.blur_kernel;
    return s;
}

SampledLatents sample_jobs(ModelBundle& models, const std::vector<LatentJob>& jobs, const SamplerSettings& settings,
                           const SamplerTrace& trace) {
    if (jobs.empty()) throw std::invalid_argument("sample_jobs: no jobs");
    std::vector<torch::Tensor> gray, hint, mask, ctx;
    std::vector<std::uint64_t> seeds;
    for (const auto& j : jobs) {
        gray.push_back(j.gray);
        hint.push_back(j.hint);
        mask.push_back(j.mask);
        ctx.push_back(j.context);
        seeds.push_back(j.seed);
    }
    SampledLatents out;
    out.cond = encode_stroke_condition(models.ae, torch::cat(gray), torch::cat(hint), torch::cat(mask));
    SamplerInputs in;
    in.context = torch::cat(ctx);
    in.null_context = torch::zeros_like(in.context);
    in.stroke = out.cond;
    in.use_control = true;
    const auto& z = out.cond.z_i;
    const auto x_T = initial_noise(seeds, {z.size(1), z.size(2), z.size(3)});
    out.z0 = sample_latents(models.denoiser, models.sched, in, settings, x_T, seeds, trace);
    return out;
}

namespace {

/// Samples, decodes and restores size and lightness; fills seeds and warnings.
std::vector<RgbImage> generate(const ColorizeRequest& req, const Prepared& p, ModelBundle& models, ColorizeResult& res) {
    res.clipped_strokes = p.clipped;
    if (p.clipped > 0) {
        res.warnings.push_back(std::to_string(p.clipped) + " stroke(s) extended past the image and were clipped");
        log_warn(res.warnings.back());
    }
    if (req.exemplar && !models.has_exemplar) res.warnings.push_back("no exemplar encoder loaded; exemplar ignored");
    const auto context = request_context(models, req.prompt, req.exemplar);
    std::vector<LatentJob> jobs;
    for (int k = 0; k < req.num_outputs; ++k) {
        LatentJob j;
        j.gray = image_to_tensor(gray_to_rgb(p.gray_m)).unsqueeze(0);
        j.hint = image_to_tensor(p.hint).unsqueeze(0);
        j.mask = plane_to_tensor(p.mask).unsqueeze(0);
        j.context = context;
        j.seed = req.seed + static_cast<std::uint64_t>(k);
        res.seeds.push_back(j.seed);
        jobs.push_back(std::move(j));
    }
    const auto sampled = sample_jobs(models, jobs, sampler_settings(models, req.guidance_scale, req.sag_scale, req.sag_ts));

    torch::NoGradGuard g;
    torch::Tensor decoded;
    if (req.deformable_decoder && models.has_deformable) {
        decoded = decode_deformable(models.ae, models.deformable, sampled.z0, sampled.cond.z_i);
        res.deformable_used = true;
    } else {
        if (req.deformable_decoder) {
            res.warnings.push_back("no deformable decoder loaded; used the plain decoder");
            log_warn(res.warnings.back());
        }
        decoded = models.ae->decode(sampled.z0);
    }
    std::vector<RgbImage> out;
    for (const auto& img : batch_to_images(decoded)) {
        out.push_back(replace_l_channel(resize(img, req.image.height, req.image.width), p.gray_l));
    }
    return out;
}

}  // namespace

ColorizeResult colorize(const ColorizeRequest& req, ModelBundle& models) {
    req.validate();
    if (req.region_only) return region_colorize(req, models);
    ColorizeResult res;
    res.images = generate(req, prepare(req, models), models, res);
    return res;
}

ColorizeResult region_colorize(const ColorizeRequest& req, ModelBundle& models) {
    req.validate();
    if (!req.region_only) throw std::invalid_argument("region_only: must be set for region colorisation");
    const auto region = region_mask(req, req.image.height, req.image.width);
    const auto unchanged = replace_l_channel(req.image, extract_l(req.image));
    ColorizeResult res;
    if (!any_set(region)) {
        res.warnings.push_back("region mask is empty; returning the input");
        for (int k = 0; k < req.num_outputs; ++k) {
            res.images.push_back(unchanged);
            res.seeds.push_back(req.seed + static_cast<std::uint64_t>(k));
        }
        return res;
    }
    res.images = generate(req, prepare(req, models), models, res);
    // the kept area is copied back so only the region changes
    for (auto& out : res.images) {
        for (std::size_t i = 0; i < region.pixel_count(); ++i) {
            if (region.values[i] > 0.5f) continue;
            for (int c = 0; c < 3; ++c) out.pixels[3 * i + c] = unchanged.pixels[3 * i + c];
        }
    }
    return res;
}

}  // namespace chroma
