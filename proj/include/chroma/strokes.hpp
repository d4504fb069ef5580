#pragma once

#include <vector>

#include "chroma/color_math.hpp"

namespace chroma {

struct Point {
    float x = 0, y = 0;
};

/// A user stroke in image pixel coordinates. Polylines are stamped with a disc
/// of `radius`; rectangles are filled (x0,y0 inclusive, x1,y1 exclusive).
struct Stroke {
    enum class Kind { Polyline, Rectangle };
    Kind kind = Kind::Polyline;
    std::vector<Point> points;
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    Rgb color;
    float radius = 2.0f;
};

struct RasterStats {
    int clipped_strokes = 0;  ///< strokes that extended past the image bounds
};

/// Draws `strokes` in order onto `hint` (later strokes overwrite earlier ones) and
/// sets `mask` to 1 under every footprint. Coordinates are multiplied by `scale`
/// first so strokes authored at one resolution land correctly at another.
RasterStats rasterize_strokes(const std::vector<Stroke>& strokes, RgbImage& hint, GrayImage& mask,
                              float scale = 1.0f);

/// Footprint union only.
GrayImage stroke_footprint(const std::vector<Stroke>& strokes, int height, int width, float scale = 1.0f);

}  // namespace chroma
