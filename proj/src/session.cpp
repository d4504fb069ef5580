#include "chroma/session.hpp"

namespace chroma {

bool SessionEvent::empty() const {
    const auto& o = options;
    return add_strokes.empty() && !prompt && !o.use_stroke_color && !o.region_only && !o.deformable_decoder &&
           !o.num_outputs && !o.sag_ts && !o.guidance_scale && !o.sag_scale;
}

ColorizeRequest apply_event(ColorizeRequest req, const SessionEvent& ev) {
    req.strokes.insert(req.strokes.end(), ev.add_strokes.begin(), ev.add_strokes.end());
    if (ev.prompt) req.prompt = *ev.prompt;
    const auto& o = ev.options;
    if (o.use_stroke_color) req.use_stroke_color = *o.use_stroke_color;
    if (o.region_only) req.region_only = *o.region_only;
    if (o.deformable_decoder) req.deformable_decoder = *o.deformable_decoder;
    if (o.num_outputs) req.num_outputs = *o.num_outputs;
    if (o.sag_ts) req.sag_ts = *o.sag_ts;
    if (o.guidance_scale) req.guidance_scale = *o.guidance_scale;
    if (o.sag_scale) req.sag_scale = *o.sag_scale;
    return req;
}

Session create_session(const std::string& id, const ColorizeRequest& base, ModelBundle& models) {
    Session s;
    s.id = id;
    s.base = base;
    s.current = base;
    s.results = colorize(base, models).images;
    return s;
}

void session_apply(Session& s, const SessionEvent& ev, ModelBundle& models) {
    auto next = apply_event(s.current, ev);
    next.validate();
    auto results = colorize(next, models).images;
    s.events.push_back(ev);
    s.current = std::move(next);
    s.results = std::move(results);
}

Session replay_session(const std::string& id, const ColorizeRequest& base, const std::vector<SessionEvent>& events,
                       ModelBundle& models) {
    Session s;
    s.id = id;
    s.base = base;
    s.events = events;
    s.current = base;
    for (const auto& ev : events) s.current = apply_event(s.current, ev);
    s.results = colorize(s.current, models).images;
    return s;
}

}  // namespace chroma
