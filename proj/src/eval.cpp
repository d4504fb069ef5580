#include "chroma/eval.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "chroma/image_io.hpp"
#include "chroma/log.hpp"
#include "chroma/metrics.hpp"
#include "chroma/tensor_image.hpp"

namespace chroma {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

ImageScore score_image(const std::string& id, const RgbImage& pred, const RgbImage& truth) {
    const auto f = fidelity_metrics(pred, truth);
    return ImageScore{id, colorfulness(pred), f.psnr, f.ssim};
}

void aggregate(EvalReport& report) {
    report.colorfulness = report.psnr = report.ssim = 0;
    if (report.images.empty()) return;
    for (const auto& s : report.images) {
        report.colorfulness += s.colorfulness;
        report.psnr += s.psnr;
        report.ssim += s.ssim;
    }
    const double n = static_cast<double>(report.images.size());
    report.colorfulness /= n;
    report.psnr /= n;
    report.ssim /= n;
}

json EvalReport::summary_json() const {
    return json{{"name", name},
                {"seed", seed},
                {"checkpoint_hash", checkpoint_hash},
                {"images", images.size()},
                {"colorfulness", colorfulness},
                {"psnr", psnr},
                {"ssim", ssim},
                {"fid", optional_json(distribution.fid)},
                {"clip_score", optional_json(distribution.clip_score)},
                {"embedder", distribution.embedder}};
}

std::string HintBucket::label() const { return std::to_string(lo) + "-" + std::to_string(hi); }

std::vector<HintBucket> default_hint_buckets() { return {{0, 19}, {20, 49}, {50, 100}}; }

std::vector<EvalReport> run_hint_study(ModelBundle& models, const std::vector<DatasetRecord>& records,
                                       const HintStudyOptions& opts) {
    if (records.empty()) throw std::invalid_argument("run_hint_study: no records");
    if (opts.batch < 1) throw std::invalid_argument("run_hint_study: batch must be positive");
    const int size = models.config.model.image_size;
    std::vector<RgbImage> truths;
    std::vector<LabelMap> labels;
    for (const auto& r : records) {
        auto img = read_png(r.path);
        if (img.height != size || img.width != size) img = resize(img, size, size);
        labels.push_back(slic_superpixels(img));
        truths.push_back(std::move(img));
    }
    const auto settings = sampler_settings(models, opts.guidance_scale, models.config.sag.scale, models.config.sag.ts);
    const auto context = request_context(models, "", std::nullopt);

    std::vector<EvalReport> reports;
    for (const auto& bucket : opts.buckets) {
        if (bucket.lo < 0 || bucket.hi < bucket.lo) throw std::invalid_argument("run_hint_study: bad bucket");
        HintOptions hint_opts;
        hint_opts.min_regions = bucket.lo;
        hint_opts.max_regions = bucket.hi;
        hint_opts.jitter_probability = 0.0;
        EvalReport rep;
        rep.name = "hints " + bucket.label();
        rep.seed = opts.seed;
        rep.checkpoint_hash = models.checkpoint_hash;
        for (std::size_t start = 0; start < truths.size(); start += static_cast<std::size_t>(opts.batch)) {
            const std::size_t end = std::min(truths.size(), start + static_cast<std::size_t>(opts.batch));
            std::vector<LatentJob> jobs;
            std::vector<GrayImage> ls;
            for (std::size_t i = start; i < end; ++i) {
                Rng rng(derive_seed(opts.seed, "hints/" + bucket.label() + "/" + records[i].id));
                const auto hs = sample_hint_regions(truths[i], labels[i], rng, hint_opts);
                ls.push_back(extract_l(truths[i]));
                LatentJob j;
                j.gray = image_to_tensor(gray_to_rgb(ls.back())).unsqueeze(0);
                j.hint = image_to_tensor(hs.hint_image).unsqueeze(0);
                j.mask = plane_to_tensor(hs.mask).unsqueeze(0);
                j.context = context;
                j.seed = opts.seed;
                jobs.push_back(std::move(j));
            }
            // same steps as colorize() for an input already at model resolution
            const auto sampled = sample_jobs(models, jobs, settings);
            torch::NoGradGuard g;
            const auto decoded = models.has_deformable
                                     ? decode_deformable(models.ae, models.deformable, sampled.z0, sampled.cond.z_i)
                                     : models.ae->decode(sampled.z0);
            const auto imgs = batch_to_images(decoded);
            for (std::size_t k = 0; k < imgs.size(); ++k) {
                const auto pred = replace_l_channel(imgs[k], ls[k]);
                rep.images.push_back(score_image(records[start + k].id, pred, truths[start + k]));
            }
        }
        aggregate(rep);
        log_info(rep.name, ": psnr ", rep.psnr, " ssim ", rep.ssim, " colorfulness ", rep.colorfulness);
        reports.push_back(std::move(rep));
    }
    return reports;
}

std::string summary_table(const std::vector<EvalReport>& reports) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "report" << std::right << std::setw(8) << "images" << std::setw(14)
       << "colorfulness" << std::setw(10) << "psnr" << std::setw(10) << "ssim" << std::setw(8) << "fid" << '\n';
    os << std::fixed;
    for (const auto& r : reports) {
        os << std::left << std::setw(16) << r.name << std::right << std::setw(8) << r.images.size()
           << std::setprecision(4) << std::setw(14) << r.colorfulness << std::setw(10) << r.psnr << std::setw(10)
           << r.ssim << std::setw(8) << (r.distribution.fid ? std::to_string(*r.distribution.fid) : "null") << '\n';
    }
    if (!reports.empty()) {
        os << "seed " << reports.front().seed << ", checkpoint " << reports.front().checkpoint_hash << ", embedder "
           << reports.front().distribution.embedder << '\n';
    }
    return os.str();
}

void write_reports(const fs::path& dir, const std::vector<EvalReport>& reports) {
    fs::create_directories(dir);
    std::ofstream out(dir / "reports.jsonl");
    if (!out) throw std::runtime_error("write_reports: cannot write " + (dir / "reports.jsonl").string());
    for (const auto& r : reports) {
        for (const auto& s : r.images) {
            out << json{{"report", r.name},      {"id", s.id},     {"colorfulness", s.colorfulness},
                        {"psnr", s.psnr},        {"ssim", s.ssim}, {"seed", r.seed},
                        {"checkpoint_hash", r.checkpoint_hash}}
                       .dump()
                << '\n';
        }
    }
    for (const auto& r : reports) out << json{{"summary", r.summary_json()}}.dump() << '\n';
    std::ofstream(dir / "summary.txt") << summary_table(reports);
}

}  // namespace chroma
