#include <doctest.h>

#include "chroma/strokes.hpp"

using namespace chroma;

TEST_CASE("rectangle strokes fill their footprint") {
    RgbImage hint(8, 8, 0.5f);
    GrayImage mask(8, 8, 0.0f);
    Stroke s;
    s.kind = Stroke::Kind::Rectangle;
    s.x0 = 2;
    s.y0 = 1;
    s.x1 = 5;
    s.y1 = 3;
    s.color = {1, 0, 0};
    rasterize_strokes({s}, hint, mask);
    int covered = 0;
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            const bool in = y >= 1 && y < 3 && x >= 2 && x < 5;
            CHECK((mask.at(y, x) == 1.0f) == in);
            if (in) {
                ++covered;
                CHECK(hint.at(y, x, 0) == 1.0f);
                CHECK(hint.at(y, x, 1) == 0.0f);
            } else {
                CHECK(hint.at(y, x, 0) == 0.5f);
            }
        }
    }
    CHECK(covered == 6);
}

TEST_CASE("later strokes overwrite earlier ones") {
    RgbImage hint(8, 8, 0.0f);
    GrayImage mask(8, 8, 0.0f);
    Stroke a;
    a.kind = Stroke::Kind::Polyline;
    a.points = {{1, 4}, {7, 4}};
    a.radius = 1.5f;
    a.color = {0, 1, 0};
    Stroke b = a;
    b.radius = 3.0f;
    b.color = {0, 0, 1};
    rasterize_strokes({a, b}, hint, mask);
    const GrayImage fa = stroke_footprint({a}, 8, 8);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            if (fa.at(y, x) > 0) CHECK(hint.at(y, x, 2) == 1.0f);
        }
    }
}

TEST_CASE("scale maps strokes between resolutions and clipping is reported") {
    RgbImage hint(16, 16, 0.0f);
    GrayImage mask(16, 16, 0.0f);
    Stroke s;
    s.kind = Stroke::Kind::Rectangle;
    s.x0 = 0;
    s.y0 = 0;
    s.x1 = 4;
    s.y1 = 4;
    Stroke off = s;
    off.x1 = 40;
    const RasterStats st = rasterize_strokes({s, off}, hint, mask, 2.0f);
    CHECK(mask.at(7, 7) == 1.0f);
    CHECK(st.clipped_strokes == 1);
}
