#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chroma/pipeline.hpp"

namespace chroma {

/// Partial option update; unset fields keep their value.
struct OptionUpdate {
    std::optional<bool> use_stroke_color, region_only, deformable_decoder;
    std::optional<int> num_outputs, sag_ts;
    std::optional<double> guidance_scale, sag_scale;
};

/// One editing step. Strokes are appended after the existing ones, so they
/// overwrite earlier strokes where they overlap.
struct SessionEvent {
    std::vector<Stroke> add_strokes;
    std::optional<std::string> prompt;
    OptionUpdate options;

    bool empty() const;
};

/// Pure request update.
ColorizeRequest apply_event(ColorizeRequest req, const SessionEvent& ev);

struct Session {
    std::string id;
    ColorizeRequest base;
    std::vector<SessionEvent> events;
    ColorizeRequest current;
    std::vector<RgbImage> results;
};

/// Colorises the base request; the seed stays fixed for the session's life.
Session create_session(const std::string& id, const ColorizeRequest& base, ModelBundle& models);

/// Appends the event and recomputes from the updated request.
void session_apply(Session& s, const SessionEvent& ev, ModelBundle& models);

/// Folds the log from the base request and colorises once.
Session replay_session(const std::string& id, const ColorizeRequest& base, const std::vector<SessionEvent>& events,
                       ModelBundle& models);

}  // namespace chroma
