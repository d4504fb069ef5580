#include "chroma/codec.hpp"

#include <iomanip>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "chroma/image_io.hpp"

namespace chroma {

using nlohmann::json;

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw std::invalid_argument("base64: length is not a multiple of 4");
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw std::invalid_argument("base64: malformed input");
    // EVP_DecodeBlock keeps the padding bytes
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

FieldError FieldError::from(const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto pos = msg.find(": ");
    if (pos == std::string::npos) return FieldError("", msg);
    return FieldError(msg.substr(0, pos), msg.substr(pos + 2));
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& path) {
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw FieldError(path.empty() ? key : path + "." + key, "unknown field");
    }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& path, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw FieldError(path.empty() ? key : path + "." + key, "wrong type");
    }
}

RgbImage image_field(const json& j, const std::string& path) {
    if (!j.is_string()) throw FieldError(path, "expected a base64 PNG string");
    try {
        return decode_png(base64_decode(j.get<std::string>()));
    } catch (const std::exception& e) {
        throw FieldError(path, std::string("not a base64 PNG (") + e.what() + ")");
    }
}

std::string image_string(const RgbImage& img) { return base64_encode(encode_png(img)); }

GrayImage mask_from_image(const RgbImage& img) {
    GrayImage m(img.height, img.width, 0.0f);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) m.values[i] = img.pixels[3 * i] >= 0.5f ? 1.0f : 0.0f;
    return m;
}

RgbImage image_from_mask(const GrayImage& m) {
    RgbImage img(m.height, m.width);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = m.values[i] >= 0.5f ? 1.0f : 0.0f;
    }
    return img;
}

Rgb color_field(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) throw FieldError(path, "expected [r, g, b]");
    double v[3];
    for (int c = 0; c < 3; ++c) {
        if (!j[c].is_number()) throw FieldError(path, "components must be numbers");
        v[c] = j[c].get<double>();
        if (!(v[c] >= 0 && v[c] <= 1)) throw FieldError(path, "components must lie in [0, 1]");
    }
    return Rgb{v[0], v[1], v[2]};
}

void apply_options(const json& j, const std::string& path, OptionUpdate& o) {
    reject_unknown(j, {"use_stroke_color", "region_only", "deformable_decoder", "num_outputs", "sag_ts",
                       "guidance_scale", "sag_scale"},
                   path);
    auto set = [&](const char* key, auto& slot) {
        using V = typename std::decay_t<decltype(slot)>::value_type;
        if (j.contains(key)) slot = get<V>(j, key, path, V{});
    };
    set("use_stroke_color", o.use_stroke_color);
    set("region_only", o.region_only);
    set("deformable_decoder", o.deformable_decoder);
    set("num_outputs", o.num_outputs);
    set("sag_ts", o.sag_ts);
    set("guidance_scale", o.guidance_scale);
    set("sag_scale", o.sag_scale);
}

}  // namespace

Stroke stroke_from_json(const json& j, const std::string& path) {
    if (!j.is_object()) throw FieldError(path, "expected an object");
    reject_unknown(j, {"kind", "points", "rect", "color", "radius"}, path);
    Stroke s;
    const auto kind = get<std::string>(j, "kind", path, "polyline");
    if (!j.contains("color")) throw FieldError(path + ".color", "required");
    s.color = color_field(j["color"], path + ".color");
    s.radius = get<float>(j, "radius", path, 2.0f);
    if (kind == "polyline") {
        s.kind = Stroke::Kind::Polyline;
        const json pts = j.value("points", json::array());
        if (!pts.is_array() || pts.empty()) throw FieldError(path + ".points", "polyline needs at least one point");
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto& p = pts[i];
            if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
                throw FieldError(path + ".points[" + std::to_string(i) + "]", "expected [x, y]");
            }
            s.points.push_back(Point{p[0].get<float>(), p[1].get<float>()});
        }
    } else if (kind == "rectangle") {
        s.kind = Stroke::Kind::Rectangle;
        const json r = j.value("rect", json());
        if (!r.is_array() || r.size() != 4) throw FieldError(path + ".rect", "expected [x0, y0, x1, y1]");
        for (const auto& v : r) {
            if (!v.is_number()) throw FieldError(path + ".rect", "expected numbers");
        }
        s.x0 = r[0].get<float>();
        s.y0 = r[1].get<float>();
        s.x1 = r[2].get<float>();
        s.y1 = r[3].get<float>();
    } else {
        throw FieldError(path + ".kind", "must be polyline or rectangle");
    }
    return s;
}

json stroke_to_json(const Stroke& s) {
    json j{{"color", {s.color.r, s.color.g, s.color.b}}, {"radius", s.radius}};
    if (s.kind == Stroke::Kind::Polyline) {
        j["kind"] = "polyline";
        j["points"] = json::array();
        for (const auto& p : s.points) j["points"].push_back({p.x, p.y});
    } else {
        j["kind"] = "rectangle";
        j["rect"] = {s.x0, s.y0, s.x1, s.y1};
    }
    return j;
}

ColorizeRequest request_from_json(const json& j) {
    if (!j.is_object()) throw FieldError("", "request must be a JSON object");
    reject_unknown(j, {"image", "prompt", "strokes", "exemplar", "hint_image", "hint_mask", "use_stroke_color",
                       "region_only", "deformable_decoder", "num_outputs", "guidance_scale", "sag_scale", "sag_ts",
                       "seed"},
                   "");
    ColorizeRequest r;
    if (!j.contains("image")) throw FieldError("image", "required");
    r.image = image_field(j["image"], "image");
    r.prompt = get<std::string>(j, "prompt", "", "");
    if (j.contains("strokes")) {
        if (!j["strokes"].is_array()) throw FieldError("strokes", "expected an array");
        for (std::size_t i = 0; i < j["strokes"].size(); ++i) {
            r.strokes.push_back(stroke_from_json(j["strokes"][i], "strokes[" + std::to_string(i) + "]"));
        }
    }
    if (j.contains("exemplar") && !j["exemplar"].is_null()) r.exemplar = image_field(j["exemplar"], "exemplar");
    if (j.contains("hint_image") && !j["hint_image"].is_null()) r.hint_image = image_field(j["hint_image"], "hint_image");
    if (j.contains("hint_mask") && !j["hint_mask"].is_null()) r.hint_mask = mask_from_image(image_field(j["hint_mask"], "hint_mask"));
    r.use_stroke_color = get<bool>(j, "use_stroke_color", "", r.use_stroke_color);
    r.region_only = get<bool>(j, "region_only", "", r.region_only);
    r.deformable_decoder = get<bool>(j, "deformable_decoder", "", r.deformable_decoder);
    r.num_outputs = get<int>(j, "num_outputs", "", r.num_outputs);
    r.guidance_scale = get<double>(j, "guidance_scale", "", r.guidance_scale);
    r.sag_scale = get<double>(j, "sag_scale", "", r.sag_scale);
    r.sag_ts = get<int>(j, "sag_ts", "", r.sag_ts);
    r.seed = get<std::uint64_t>(j, "seed", "", r.seed);
    try {
        r.validate();
    } catch (const FieldError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw FieldError::from(e);
    }
    return r;
}

json request_to_json(const ColorizeRequest& req) {
    json j{{"image", image_string(req.image)},
           {"prompt", req.prompt},
           {"strokes", json::array()},
           {"use_stroke_color", req.use_stroke_color},
           {"region_only", req.region_only},
           {"deformable_decoder", req.deformable_decoder},
           {"num_outputs", req.num_outputs},
           {"guidance_scale", req.guidance_scale},
           {"sag_scale", req.sag_scale},
           {"sag_ts", req.sag_ts},
           {"seed", req.seed}};
    for (const auto& s : req.strokes) j["strokes"].push_back(stroke_to_json(s));
    if (req.exemplar) j["exemplar"] = image_string(*req.exemplar);
    if (req.hint_image) j["hint_image"] = image_string(*req.hint_image);
    if (req.hint_mask) j["hint_mask"] = image_string(image_from_mask(*req.hint_mask));
    return j;
}

SessionEvent event_from_json(const json& j) {
    if (!j.is_object()) throw FieldError("", "event must be a JSON object");
    reject_unknown(j, {"add_strokes", "prompt", "options"}, "");
    SessionEvent ev;
    if (j.contains("add_strokes")) {
        if (!j["add_strokes"].is_array()) throw FieldError("add_strokes", "expected an array");
        for (std::size_t i = 0; i < j["add_strokes"].size(); ++i) {
            ev.add_strokes.push_back(stroke_from_json(j["add_strokes"][i], "add_strokes[" + std::to_string(i) + "]"));
        }
    }
    if (j.contains("prompt")) ev.prompt = get<std::string>(j, "prompt", "", "");
    if (j.contains("options")) {
        if (!j["options"].is_object()) throw FieldError("options", "expected an object");
        apply_options(j["options"], "options", ev.options);
    }
    return ev;
}

json event_to_json(const SessionEvent& ev) {
    json j = json::object();
    if (!ev.add_strokes.empty()) {
        j["add_strokes"] = json::array();
        for (const auto& s : ev.add_strokes) j["add_strokes"].push_back(stroke_to_json(s));
    }
    if (ev.prompt) j["prompt"] = *ev.prompt;
    json o = json::object();
    const auto& u = ev.options;
    if (u.use_stroke_color) o["use_stroke_color"] = *u.use_stroke_color;
    if (u.region_only) o["region_only"] = *u.region_only;
    if (u.deformable_decoder) o["deformable_decoder"] = *u.deformable_decoder;
    if (u.num_outputs) o["num_outputs"] = *u.num_outputs;
    if (u.sag_ts) o["sag_ts"] = *u.sag_ts;
    if (u.guidance_scale) o["guidance_scale"] = *u.guidance_scale;
    if (u.sag_scale) o["sag_scale"] = *u.sag_scale;
    if (!o.empty()) j["options"] = o;
    return j;
}

}  // namespace chroma
