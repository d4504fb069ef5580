#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chroma/pipeline.hpp"
#include "chroma/session.hpp"

namespace chroma {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

/// Request rejection carrying the offending field path.
struct FieldError : std::invalid_argument {
    FieldError(std::string field_, std::string reason_)
        : std::invalid_argument(field_ + ": " + reason_), field(std::move(field_)), reason(std::move(reason_)) {}
    std::string field, reason;

    /// Splits a "field: reason" message from ColorizeRequest::validate.
    static FieldError from(const std::invalid_argument& e);
    nlohmann::json to_json() const { return {{"field", field}, {"reason", reason}}; }
};

/// Wire format: images are base64 PNG strings, colours are [r, g, b] in [0, 1],
/// polylines are {"kind": "polyline", "points": [[x, y], ...], "radius": r},
/// rectangles are {"kind": "rectangle", "rect": [x0, y0, x1, y1]}. Missing
/// fields take their defaults; unknown fields are rejected.
ColorizeRequest request_from_json(const nlohmann::json& j);
nlohmann::json request_to_json(const ColorizeRequest& req);

Stroke stroke_from_json(const nlohmann::json& j, const std::string& path);
nlohmann::json stroke_to_json(const Stroke& s);

/// {"add_strokes": [...], "prompt": "...", "options": {...}}
SessionEvent event_from_json(const nlohmann::json& j);
nlohmann::json event_to_json(const SessionEvent& ev);

}  // namespace chroma
