#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "chroma/codec.hpp"
#include "chroma/config.hpp"
#include "chroma/data.hpp"
#include "chroma/eval.hpp"
#include "chroma/image_io.hpp"
#include "chroma/log.hpp"
#include "chroma/pipeline.hpp"
#include "chroma/service.hpp"
#include "chroma/training.hpp"

namespace fs = std::filesystem;
using namespace chroma;
using nlohmann::json;

namespace {

Rgb parse_hex_color(const std::string& s) {
    std::string h = s;
    if (!h.empty() && h[0] == '#') h.erase(0, 1);
    if (h.size() != 6) throw CLI::ValidationError("color", "expected RRGGBB, got '" + s + "'");
    const auto v = std::stoul(h, nullptr, 16);
    return Rgb{((v >> 16) & 0xff) / 255.0, ((v >> 8) & 0xff) / 255.0, (v & 0xff) / 255.0};
}

std::vector<float> parse_numbers(const std::string& s, char sep) {
    std::vector<float> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) out.push_back(std::stof(tok));
    return out;
}

/// "rect:x0,y0,x1,y1:RRGGBB" or "line:x,y;x,y;...:RRGGBB[:radius]".
Stroke parse_stroke(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    if (parts.size() < 3) throw CLI::ValidationError("--stroke", "malformed stroke '" + spec + "'");
    Stroke s;
    s.color = parse_hex_color(parts[2]);
    if (parts[0] == "rect") {
        const auto v = parse_numbers(parts[1], ',');
        if (v.size() != 4) throw CLI::ValidationError("--stroke", "rect needs x0,y0,x1,y1");
        s.kind = Stroke::Kind::Rectangle;
        s.x0 = v[0], s.y0 = v[1], s.x1 = v[2], s.y1 = v[3];
    } else if (parts[0] == "line") {
        std::stringstream ps(parts[1]);
        while (std::getline(ps, tok, ';')) {
            const auto xy = parse_numbers(tok, ',');
            if (xy.size() != 2) throw CLI::ValidationError("--stroke", "line points are x,y");
            s.points.push_back(Point{xy[0], xy[1]});
        }
        if (parts.size() > 3) s.radius = std::stof(parts[3]);
    } else {
        throw CLI::ValidationError("--stroke", "kind must be rect or line");
    }
    return s;
}

GrayImage mask_of(const RgbImage& img) {
    GrayImage m(img.height, img.width);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) m.values[i] = img.pixels[3 * i] >= 0.5f ? 1.0f : 0.0f;
    return m;
}

fs::path numbered(const fs::path& out, int k, int n) {
    if (n == 1) return out;
    return out.parent_path() / (out.stem().string() + "_" + std::to_string(k) + out.extension().string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chroma: controllable latent-diffusion colorization at desk scale"};
    app.require_subcommand(1);
    bool verbose = false;
    int threads = 0;
    app.add_flag("-v,--verbose", verbose, "debug logging");
    app.add_option("--threads", threads, "torch intra-op threads (0 keeps the default)");

    // generate-corpus
    auto* gen = app.add_subcommand("generate-corpus", "write the synthetic shape corpus");
    fs::path gen_out = "corpus";
    CorpusOptions corpus;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--count", corpus.count, "number of images");
    gen->add_option("--size", corpus.size, "image side");
    gen->add_option("--seed", corpus.seed, "corpus seed");

    // prepare-data
    auto* prep = app.add_subcommand("prepare-data", "filter, embed and split a manifest");
    fs::path prep_manifest, prep_out = "data";
    int prep_holdout = 300;
    std::uint64_t prep_seed = 1;
    prep->add_option("--manifest", prep_manifest, "manifest.tsv")->required()->check(CLI::ExistingFile);
    prep->add_option("--out", prep_out, "prepared data directory");
    prep->add_option("--holdout", prep_holdout, "held-out image count");
    prep->add_option("--seed", prep_seed, "split seed");

    // train
    auto* train = app.add_subcommand("train", "train autoencoder, feature extractor and denoiser stages");
    fs::path train_cfg, train_data = "data", train_out = "model";
    std::vector<std::string> train_stages;
    train->add_option("--config", train_cfg, "config JSON")->check(CLI::ExistingFile);
    train->add_option("--data", train_data, "prepared data directory");
    train->add_option("--out", train_out, "model directory");
    train->add_option("--stages", train_stages, "subset of ae,features,base,control,stroke")->delimiter(',');

    // train-exemplar
    auto* tex = app.add_subcommand("train-exemplar", "train the exemplar encoder");
    fs::path tex_data = "data", tex_model = "model";
    tex->add_option("--data", tex_data, "prepared data directory");
    tex->add_option("--model", tex_model, "model directory");

    // train-deformable
    auto* tdef = app.add_subcommand("train-deformable", "synthesise deformed pairs and train the deformable decoder");
    fs::path tdef_data = "data", tdef_model = "model";
    tdef->add_option("--data", tdef_data, "prepared data directory");
    tdef->add_option("--model", tdef_model, "model directory");

    // colorize
    auto* col = app.add_subcommand("colorize", "colorize one image");
    fs::path col_model = "model", col_input, col_output = "out.png", col_request, col_exemplar, col_hint, col_mask;
    std::vector<std::string> col_strokes;
    ColorizeRequest defaults;
    ColorizeRequest creq;
    bool no_stroke_color = false, no_deformable = false;
    col->add_option("--model", col_model, "model directory");
    col->add_option("--input", col_input, "input PNG (grey or colour)")->check(CLI::ExistingFile);
    col->add_option("--request", col_request, "request JSON in the service wire format")->check(CLI::ExistingFile);
    col->add_option("--output", col_output, "output PNG; numbered when several outputs");
    col->add_option("--prompt", creq.prompt, "text prompt");
    col->add_option("--stroke", col_strokes, "rect:x0,y0,x1,y1:RRGGBB or line:x,y;x,y:RRGGBB[:radius]");
    col->add_option("--exemplar", col_exemplar, "exemplar PNG")->check(CLI::ExistingFile);
    col->add_option("--hint-image", col_hint, "hint PNG")->check(CLI::ExistingFile);
    col->add_option("--hint-mask", col_mask, "hint mask PNG (white = hint)")->check(CLI::ExistingFile);
    col->add_flag("--no-stroke-color", no_stroke_color, "ignore stroke colours");
    col->add_flag("--region-only", creq.region_only, "recolour only the hinted regions");
    col->add_flag("--no-deformable", no_deformable, "decode with the plain decoder");
    col->add_option("--num-outputs", creq.num_outputs, "outputs")->default_val(defaults.num_outputs);
    col->add_option("--guidance", creq.guidance_scale, "guidance scale")->default_val(defaults.guidance_scale);
    col->add_option("--sag-scale", creq.sag_scale, "SAG scale")->default_val(defaults.sag_scale);
    col->add_option("--sag-ts", creq.sag_ts, "SAG start step")->default_val(defaults.sag_ts);
    col->add_option("--seed", creq.seed, "seed")->default_val(defaults.seed);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "hint-count study on held-out images");
    fs::path ev_model = "model", ev_data = "data", ev_out = "eval";
    int ev_images = 0;
    HintStudyOptions study;
    ev->add_option("--model", ev_model, "model directory");
    ev->add_option("--data", ev_data, "prepared data directory");
    ev->add_option("--out", ev_out, "report directory");
    ev->add_option("--images", ev_images, "held-out images to use (0 uses the config value)");
    ev->add_option("--seed", study.seed, "evaluation seed")->default_val(kEvalSeed);

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP service (flags override CHROMA_* environment keys)");
    ServiceOptions sopts = ServiceOptions::from_env();
    serve->add_option("--model", sopts.model_dir, "model directory");
    serve->add_option("--state", sopts.state_dir, "state directory");
    serve->add_option("--host", sopts.host, "bind address");
    serve->add_option("--port", sopts.port, "port");
    serve->add_option("--queue-depth", sopts.queue_depth, "bounded queue size");

    CLI11_PARSE(app, argc, argv);
    if (verbose) set_log_level(LogLevel::Debug);
    if (threads > 0) torch::set_num_threads(threads);

    try {
        if (*gen) {
            const auto manifest = generate_corpus(gen_out, corpus);
            std::cout << manifest.string() << '\n';
        } else if (*prep) {
            const auto r = prepare_data(prep_manifest, prep_out, prep_holdout, prep_seed);
            std::cout << json{{"input", r.input}, {"kept", r.kept}, {"train", r.train}, {"holdout", r.holdout}}.dump(2)
                      << '\n';
        } else if (*train) {
            const Config cfg = train_cfg.empty() ? Config{} : load_config(train_cfg);
            const std::set<std::string> only(train_stages.begin(), train_stages.end());
            const auto s = train_main(cfg, train_data, train_out, only);
            std::cout << s.stages.dump(2) << '\n';
        } else if (*tex) {
            const auto s = train_exemplar_main(tex_data, tex_model);
            std::cout << json{{"steps", s.steps}, {"initial", s.initial}, {"trailing", s.trailing}}.dump(2) << '\n';
        } else if (*tdef) {
            const auto s = train_deformable_main(tdef_data, tdef_model);
            std::cout << json{{"pairs", s.pairs},
                              {"exemplar_fraction", s.exemplar_fraction},
                              {"steps", s.steps},
                              {"heldout", s.heldout},
                              {"wins", s.wins},
                              {"sign_test_p", s.sign_test_p},
                              {"mean_plain_error", s.mean_plain_error},
                              {"mean_deformable_error", s.mean_deformable_error}}
                             .dump(2)
                      << '\n';
        } else if (*col) {
            ColorizeRequest req;
            if (!col_request.empty()) {
                std::ifstream in(col_request);
                req = request_from_json(json::parse(in));
            } else {
                if (col_input.empty()) throw CLI::ValidationError("--input", "an input image or --request is required");
                req = creq;
                req.image = read_png(col_input);
                for (const auto& s : col_strokes) req.strokes.push_back(parse_stroke(s));
                if (!col_exemplar.empty()) req.exemplar = read_png(col_exemplar);
                if (!col_hint.empty()) req.hint_image = read_png(col_hint);
                if (!col_mask.empty()) req.hint_mask = mask_of(read_png(col_mask));
                req.use_stroke_color = !no_stroke_color;
                req.deformable_decoder = !no_deformable;
            }
            auto models = load_models(col_model);
            const auto res = colorize(req, models);
            for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
            for (std::size_t k = 0; k < res.images.size(); ++k) {
                const auto path = numbered(col_output, static_cast<int>(k), static_cast<int>(res.images.size()));
                write_png(path, res.images[k]);
                std::cout << path.string() << " seed " << res.seeds[k] << " checkpoint " << models.checkpoint_hash
                          << '\n';
            }
        } else if (*ev) {
            auto models = load_models(ev_model);
            auto held = load_prepared(ev_data).holdout;
            const int n = ev_images > 0 ? ev_images : models.config.eval.images;
            if (static_cast<int>(held.size()) > n) held.resize(static_cast<std::size_t>(n));
            const auto reports = run_hint_study(models, held, study);
            write_reports(ev_out, reports);
            std::cout << summary_table(reports);
        } else if (*serve) {
            Service service(sopts);
            service.run();
        }
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
