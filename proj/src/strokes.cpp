#include "chroma/strokes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chroma {

namespace {

bool outside(const Stroke& s, int h, int w, float scale) {
    auto out_pt = [&](float x, float y) { return x * scale < 0 || y * scale < 0 || x * scale > w || y * scale > h; };
    if (s.kind == Stroke::Kind::Rectangle) return out_pt(s.x0, s.y0) || out_pt(s.x1, s.y1);
    for (const auto& p : s.points) {
        if (out_pt(p.x, p.y)) return true;
    }
    return false;
}

// Squared distance from pixel centre (px,py) to segment ab.
float segment_dist2(float px, float py, Point a, Point b) {
    const float vx = b.x - a.x, vy = b.y - a.y;
    const float len2 = vx * vx + vy * vy;
    float t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0f;
    t = std::clamp(t, 0.0f, 1.0f);
    const float dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return dx * dx + dy * dy;
}

template <typename Fn>
void for_each_covered(const Stroke& s, int h, int w, float scale, Fn&& fn) {
    if (s.kind == Stroke::Kind::Rectangle) {
        const int x0 = std::clamp(static_cast<int>(std::floor(std::min(s.x0, s.x1) * scale)), 0, w);
        const int x1 = std::clamp(static_cast<int>(std::ceil(std::max(s.x0, s.x1) * scale)), 0, w);
        const int y0 = std::clamp(static_cast<int>(std::floor(std::min(s.y0, s.y1) * scale)), 0, h);
        const int y1 = std::clamp(static_cast<int>(std::ceil(std::max(s.y0, s.y1) * scale)), 0, h);
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) fn(y, x);
        }
        return;
    }
    if (s.points.empty()) return;
    std::vector<Point> pts;
    pts.reserve(s.points.size());
    for (const auto& p : s.points) pts.push_back({p.x * scale, p.y * scale});
    const float r = std::max(0.5f, s.radius * scale);
    float minx = pts[0].x, maxx = pts[0].x, miny = pts[0].y, maxy = pts[0].y;
    for (const auto& p : pts) {
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
    }
    const int x0 = std::clamp(static_cast<int>(std::floor(minx - r)), 0, w);
    const int x1 = std::clamp(static_cast<int>(std::ceil(maxx + r)) + 1, 0, w);
    const int y0 = std::clamp(static_cast<int>(std::floor(miny - r)), 0, h);
    const int y1 = std::clamp(static_cast<int>(std::ceil(maxy + r)) + 1, 0, h);
    const float r2 = r * r;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const float px = x + 0.5f, py = y + 0.5f;
            bool hit = false;
            if (pts.size() == 1) {
                hit = segment_dist2(px, py, pts[0], pts[0]) <= r2;
            } else {
                for (std::size_t i = 0; i + 1 < pts.size() && !hit; ++i) hit = segment_dist2(px, py, pts[i], pts[i + 1]) <= r2;
            }
            if (hit) fn(y, x);
        }
    }
}

}  // namespace

RasterStats rasterize_strokes(const std::vector<Stroke>& strokes, RgbImage& hint, GrayImage& mask, float scale) {
    if (hint.height != mask.height || hint.width != mask.width) {
        throw std::invalid_argument("rasterize_strokes: hint and mask sizes differ");
    }
    RasterStats stats;
    for (const auto& s : strokes) {
        if (outside(s, hint.height, hint.width, scale)) ++stats.clipped_strokes;
        const float col[3] = {static_cast<float>(std::clamp(s.color.r, 0.0, 1.0)),
                              static_cast<float>(std::clamp(s.color.g, 0.0, 1.0)),
                              static_cast<float>(std::clamp(s.color.b, 0.0, 1.0))};
        for_each_covered(s, hint.height, hint.width, scale, [&](int y, int x) {
            for (int c = 0; c < 3; ++c) hint.at(y, x, c) = col[c];
            mask.at(y, x) = 1.0f;
        });
    }
    return stats;
}

GrayImage stroke_footprint(const std::vector<Stroke>& strokes, int height, int width, float scale) {
    GrayImage mask(height, width, 0.0f);
    for (const auto& s : strokes) {
        for_each_covered(s, height, width, scale, [&](int y, int x) { mask.at(y, x) = 1.0f; });
    }
    return mask;
}

}  // namespace chroma
