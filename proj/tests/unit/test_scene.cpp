#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cpae/scene.hpp"
#include "support.hpp"

using cpae::Rng; using cpae::StateError; using cpae::ConfigError;
using namespace cpae::scene;
using cpae::testing::rand_int;

namespace {

SceneState single(Shape s, Pose p = {}) { return {{std::move(s)}, {p}}; }

// Random convex polygon: sorted angles on a jittered circle.
Shape random_polygon(Rng& rng, Vec2 c, double r) {
    const int n = rand_int(rng, 3, 7);
    std::vector<double> ang;
    for (int i = 0; i < n; ++i) ang.push_back(rng.uniform(0, 2 * std::numbers::pi));
    std::sort(ang.begin(), ang.end());
    std::vector<Vec2> v;
    for (double a : ang) v.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a)});
    return Shape::polygon(v);
}

}  // namespace

TEST_CASE("binary raster of an axis-aligned square covers exactly the touched cells") {
    // Square [0.25, 0.5]^2 at delta = 1/8: closed cells [i/8,(i+1)/8] meet it
    // for i in 1..4 (cells 1 and 4 only along their shared edge).
    const auto img = rasterize_binary(single(Shape::polygon({{0.25, 0.25}, {0.5, 0.25}, {0.5, 0.5}, {0.25, 0.5}})), 8);
    int count = 0;
    for (int i1 = 0; i1 < 8; ++i1)
        for (int i2 = 0; i2 < 8; ++i2) {
            const bool in = i1 >= 1 && i1 <= 4 && i2 >= 1 && i2 <= 4;
            CHECK(img.logical(i1, i2) == (in ? 1.0 : 0.0));
            count += img.logical(i1, i2) > 0;
        }
    CHECK(count == 16);
}

TEST_CASE("half-open box excludes its lower edges") {
    // (0.25, 0.5] x (0.25, 0.5] touches cells 2..3 only at delta = 1/8.
    const auto img = rasterize_binary(single(Shape::box({0.25, 0.25}, {0.5, 0.5})), 8);
    int count = 0;
    for (int i1 = 0; i1 < 8; ++i1)
        for (int i2 = 0; i2 < 8; ++i2) count += img.logical(i1, i2) > 0;
    CHECK(count == 9);  // upper edge still closed: cells 2,3,4 per axis
    CHECK(img.logical(1, 2) == 0.0);
    CHECK(img.logical(2, 2) == 1.0);
}

TEST_CASE("logical indexing puts y up") {
    PixelImage img(1, 4);
    img.logical(0, 3) = 1.0;
    CHECK(img.at(0, 0, 0) == 1.0);
    img.logical(3, 0) = 0.5;
    CHECK(img.at(0, 3, 3) == 0.5);
}

TEST_CASE("binary raster agrees with point sampling away from boundaries") {
    Rng rng(11);
    for (int res : {16, 64}) {
        for (int trial = 0; trial < 20; ++trial) {
            const Vec2 c{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)};
            const Shape s = trial % 2 ? Shape::disc(c, rng.uniform(0.05, 0.2)) : random_polygon(rng, c, rng.uniform(0.05, 0.2));
            const Pose pose{{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)}, rng.uniform(-1, 1)};
            const auto placed = place(s, pose);
            const auto img = rasterize_binary(single(s, pose), res);
            const double d = 1.0 / res;
            for (int i1 = 0; i1 < res; ++i1)
                for (int i2 = 0; i2 < res; ++i2) {
                    int inside = 0;
                    for (int a = 0; a < 16; ++a)
                        for (int b = 0; b < 16; ++b)
                            inside += placed.contains({(i1 + a / 15.0) * d, (i2 + b / 15.0) * d});
                    const bool pix = img.logical(i1, i2) > 0;
                    if (inside > 0) CHECK(pix);
                    if (inside == 256) CHECK(pix);
                    if (pix && inside == 0) {
                        // Only a sliver can be missed by the samples: the cell
                        // dilated by one sample spacing must meet the shape.
                        const double m = d / 15.0;
                        CHECK(placed.intersects_cell(i1 * d - m, i2 * d - m, (i1 + 1) * d + m, (i2 + 1) * d + m));
                    }
                }
        }
    }
}

TEST_CASE("soft raster equals the stratified coverage fraction") {
    Rng rng(12);
    const Shape s = Shape::disc({0.5, 0.5}, 0.23);
    const auto placed = place(s, {});
    SoftOptions o;
    o.supersample = 4;
    const auto img = rasterize_soft(single(s), 16, o);
    const double d = 1.0 / 16;
    for (int i1 = 0; i1 < 16; ++i1)
        for (int i2 = 0; i2 < 16; ++i2) {
            int in = 0;
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) in += placed.contains({(i1 + (a + 0.5) / 4) * d, (i2 + (b + 0.5) / 4) * d});
            CHECK(img.logical(i1, i2) == doctest::Approx(in / 16.0));
        }
}

TEST_CASE("soft RGB raster colors each body") {
    SceneState st{{Shape::disc({0.25, 0.5}, 0.1), Shape::disc({0.75, 0.5}, 0.1)}, {{}, {}}};
    SoftOptions o;
    o.channels = 3;
    const auto img = rasterize_soft(st, 32, o);
    CHECK(img.channels == 3);
    for (int c = 0; c < 3; ++c) {
        CHECK(img.logical(8, 16, c) == doctest::Approx(palette_color(0)[static_cast<std::size_t>(c)]));
        CHECK(img.logical(24, 16, c) == doctest::Approx(palette_color(1)[static_cast<std::size_t>(c)]));
    }
}

TEST_CASE("rotation about the anchor") {
    const Vec2 p = rotate({1, 0}, {0, 0}, std::numbers::pi / 2);
    CHECK(p.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(p.y == doctest::Approx(1.0));
    // A square rotated by a quarter turn about its center rasterizes the same.
    Shape sq = Shape::polygon({{0.3, 0.3}, {0.6, 0.3}, {0.6, 0.6}, {0.3, 0.6}});
    sq.anchor = {0.45, 0.45};
    CHECK(rasterize_soft(single(sq), 20) == rasterize_soft(single(sq, {{0, 0}, std::numbers::pi / 2}), 20));
}

TEST_CASE("malformed and invalid scenes are rejected") {
    CHECK_THROWS_AS(Shape::disc({0.5, 0.5}, -0.1).validate(), StateError);
    CHECK_THROWS_AS(Shape::polygon({{0.3, 0.3}, {0.3, 0.6}, {0.6, 0.3}}).validate(), StateError);  // clockwise
    CHECK_THROWS_AS(rasterize_binary(single(Shape::disc({0.95, 0.5}, 0.1)), 16), StateError);
    SceneState two{{Shape::disc({0.4, 0.5}, 0.1), Shape::disc({0.5, 0.5}, 0.1)}, {{}, {}}};
    CHECK_THROWS_AS(rasterize_binary(two, 16), StateError);
}

TEST_CASE("rendering a trajectory reports the failing frame") {
    std::vector<SceneState> frames{single(Shape::disc({0.5, 0.5}, 0.1)), single(Shape::disc({0.5, 0.5}, 0.1), {{0.45, 0}, 0})};
    RenderOptions o;
    o.resolution = 16;
    try {
        render_trajectory(frames, o);
        FAIL("expected StateError");
    } catch (const StateError& e) {
        CHECK(std::string(e.what()).find("frame 1") != std::string::npos);
    }
}
