#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "chroma/codec.hpp"
#include "chroma/color_math.hpp"
#include "chroma/config.hpp"
#include "chroma/data.hpp"
#include "chroma/diffusion.hpp"
#include "chroma/image_io.hpp"
#include "chroma/metrics.hpp"
#include "chroma/pipeline.hpp"
#include "chroma/service.hpp"
#include "chroma/training.hpp"

namespace py = pybind11;
using namespace chroma;
using nlohmann::json;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

RgbImage to_rgb(const F32& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an HxWx3 array");
    RgbImage img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(img.pixels.data(), a.data(), img.pixels.size() * sizeof(float));
    return img;
}

py::array_t<float> from_rgb(const RgbImage& img) {
    py::array_t<float> out({img.height, img.width, 3});
    std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size() * sizeof(float));
    return out;
}

GrayImage to_gray(const F32& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected an HxW array");
    GrayImage g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(g.values.data(), a.data(), g.values.size() * sizeof(float));
    return g;
}

py::array_t<float> from_gray(const GrayImage& g) {
    py::array_t<float> out({g.height, g.width});
    std::memcpy(out.mutable_data(), g.values.data(), g.values.size() * sizeof(float));
    return out;
}

torch::Tensor to_tensor(const F64& a) {
    std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

py::array_t<double> from_tensor(const torch::Tensor& t) {
    const auto c = t.to(torch::kFloat64).contiguous();
    std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), c.data_ptr<double>(), static_cast<std::size_t>(c.numel()) * sizeof(double));
    return out;
}

// Wire-format request with optional in-memory arrays replacing its image fields.
ColorizeRequest build_request(const std::string& request_json, const py::dict& arrays) {
    json j = json::parse(request_json);
    const bool has_image = arrays.contains("image");
    if (has_image && !j.contains("image")) j["image"] = base64_encode(encode_png(RgbImage(8, 8, 0.5f)));
    ColorizeRequest r = request_from_json(j);
    if (has_image) r.image = to_rgb(arrays["image"].cast<F32>());
    if (arrays.contains("exemplar")) r.exemplar = to_rgb(arrays["exemplar"].cast<F32>());
    if (arrays.contains("hint_image")) r.hint_image = to_rgb(arrays["hint_image"].cast<F32>());
    if (arrays.contains("hint_mask")) r.hint_mask = to_gray(arrays["hint_mask"].cast<F32>());
    return r;
}

}  // namespace

PYBIND11_MODULE(_chroma, m) {
    m.doc() = "Controllable latent-diffusion colourisation core";
    m.attr("EVAL_SEED") = kEvalSeed;

    py::register_local_exception<FieldError>(m, "FieldError", PyExc_ValueError);

    // colour maths
    m.def("rgb_to_lab", [](const F32& a) {
        const auto lab = rgb_to_lab(to_rgb(a));
        py::array_t<float> out({lab.height, lab.width, 3});
        auto* p = out.mutable_data();
        for (std::size_t i = 0; i < lab.pixel_count(); ++i) {
            p[3 * i] = lab.L[i];
            p[3 * i + 1] = lab.a[i];
            p[3 * i + 2] = lab.b[i];
        }
        return out;
    });
    m.def("lab_to_rgb", [](const F32& a) {
        if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an HxWx3 array");
        LabImage lab(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
        const auto* p = a.data();
        for (std::size_t i = 0; i < lab.pixel_count(); ++i) {
            lab.L[i] = p[3 * i];
            lab.a[i] = p[3 * i + 1];
            lab.b[i] = p[3 * i + 2];
        }
        return from_rgb(lab_to_rgb(lab));
    });
    m.def("extract_l", [](const F32& a) { return from_gray(extract_l(to_rgb(a))); }, "Lightness as L / 100.");
    m.def("replace_l_channel", [](const F32& out, const F32& l) { return from_rgb(replace_l_channel(to_rgb(out), to_gray(l))); });
    m.def("colorfulness", [](const F32& a) { return colorfulness(to_rgb(a)); });
    m.def("mean_pairwise_channel_variance", [](const F32& a) { return mean_pairwise_channel_variance(to_rgb(a)); });
    m.def("mean_ab_error", [](const F32& a, const F32& b) { return mean_ab_error(to_rgb(a), to_rgb(b)); });
    m.def("psnr", [](const F32& a, const F32& b) { return psnr(to_rgb(a), to_rgb(b)); });
    m.def("ssim", [](const F32& a, const F32& b) { return ssim(to_rgb(a), to_rgb(b)); });

    // diffusion
    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def(py::init(&build_schedule), py::arg("T") = 1000, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02)
        .def_readonly("T", &NoiseSchedule::T)
        .def_readonly("betas", &NoiseSchedule::betas)
        .def_readonly("alpha_bars", &NoiseSchedule::alpha_bars)
        .def("forward_noise", [](const NoiseSchedule& s, const F64& x0, const py::array_t<int64_t>& t, const F64& eps) {
            const auto tt = torch::from_blob(const_cast<int64_t*>(t.data()), {t.size()}, torch::kLong).clone();
            return from_tensor(forward_noise(to_tensor(x0), tt, to_tensor(eps), s));
        })
        .def("predict_x0", [](const NoiseSchedule& s, const F64& xt, const py::array_t<int64_t>& t, const F64& eps) {
            const auto tt = torch::from_blob(const_cast<int64_t*>(t.data()), {t.size()}, torch::kLong).clone();
            return from_tensor(predict_x0(to_tensor(xt), to_tensor(eps), tt, s));
        });

    // hint simulation
    m.def(
        "sample_hints",
        [](const F32& a, std::uint64_t seed) {
            const auto img = to_rgb(a);
            Rng rng(seed);
            const auto s = sample_hint_regions(img, slic_superpixels(img), rng);
            py::list regions;
            for (const auto& r : s.regions) {
                py::dict d;
                d["y"] = r.y, d["x"] = r.x, d["h"] = r.h, d["w"] = r.w;
                d["ground_truth"] = r.source == HintRegion::Source::GroundTruth;
                regions.append(d);
            }
            return py::make_tuple(from_rgb(s.hint_image), from_gray(s.mask), regions);
        },
        py::arg("image"), py::arg("seed"), "Returns (hint_image, mask, regions).");
    m.def("sign_test_p", &sign_test_p);

    // models and pipeline
    py::class_<ModelBundle>(m, "Models")
        .def_static("load", [](const std::filesystem::path& dir) { return load_models(dir); })
        .def_static("untrained", [](const std::string& config_json) {
            return make_models(config_from_json(json::parse(config_json)));
        })
        .def_readonly("checkpoint_hash", &ModelBundle::checkpoint_hash)
        .def_readonly("has_exemplar", &ModelBundle::has_exemplar)
        .def_readonly("has_deformable", &ModelBundle::has_deformable)
        .def_property_readonly("config_json", [](const ModelBundle& b) { return json(b.config).dump(); });

    m.def(
        "colorize_json",
        [](ModelBundle& models, const std::string& request_json, const py::dict& arrays) {
            const auto req = build_request(request_json, arrays);
            ColorizeResult res;
            {
                py::gil_scoped_release release;
                res = colorize(req, models);
            }
            py::list images;
            for (const auto& img : res.images) images.append(from_rgb(img));
            py::dict out;
            out["images"] = images;
            out["seeds"] = res.seeds;
            out["deformable_used"] = res.deformable_used;
            out["clipped_strokes"] = res.clipped_strokes;
            out["warnings"] = res.warnings;
            return out;
        },
        py::arg("models"), py::arg("request_json"), py::arg("arrays") = py::dict());
    m.def("normalize_request_json", [](const std::string& request_json) {
        return request_to_json(request_from_json(json::parse(request_json))).dump();
    });
    m.def("encode_png", [](const F32& a) {
        const auto bytes = encode_png(quantize8(to_rgb(a)));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    });

    // service
    py::class_<Service>(m, "Service")
        .def(py::init([](ModelBundle& models, const std::filesystem::path& state_dir, const std::string& host, int port,
                         int queue_depth) {
                 ServiceOptions o;
                 o.state_dir = state_dir;
                 o.host = host;
                 o.port = port;
                 o.queue_depth = queue_depth;
                 return std::make_unique<Service>(o, models);
             }),
             py::arg("models"), py::arg("state_dir"), py::arg("host") = "127.0.0.1", py::arg("port") = 0,
             py::arg("queue_depth") = 8)
        .def("start", &Service::start, py::call_guard<py::gil_scoped_release>())
        .def("stop", &Service::stop, py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("checkpoint_hash", &Service::checkpoint_hash);
}
