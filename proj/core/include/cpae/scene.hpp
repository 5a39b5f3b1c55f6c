#pragma once

// Rigid-body scenes in the unit square and their pixel discretization.
//
// World coordinates live in [0,1]^2 with the y-axis pointing up. A frame of
// resolution I+1 has pixel size delta = 1/(I+1); the logical pixel (i1, i2)
// covers the closed cell [i1*delta, (i1+1)*delta] x [i2*delta, (i2+1)*delta]
// and is stored at matrix row I - i2, column i1.

#include <array>
#include <cstdint>
#include <vector>

#include "cpae/error.hpp"

namespace cpae::scene {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }
};

double dot(Vec2 a, Vec2 b);
double cross(Vec2 a, Vec2 b);
double norm(Vec2 a);
// Rotation of p about `about` by theta (counterclockwise).
Vec2 rotate(Vec2 p, Vec2 about, double theta);

// One convex piece of a body.
//  - disc: closed disc (center, radius).
//  - polygon: closed convex polygon, counterclockwise vertices.
//  - box: half-open axis-aligned rectangle (lo.x, hi.x] x (lo.y, hi.y]. Keeps
//    the half-open semantics only while unrotated; a rotated box behaves as the
//    closed polygon with the same corners.
struct Primitive {
    enum class Kind { disc, polygon, box };
    Kind kind = Kind::disc;
    Vec2 center;
    double radius = 0.0;
    std::vector<Vec2> vertices;
    Vec2 lo, hi;

    static Primitive disc(Vec2 center, double radius);
    static Primitive polygon(std::vector<Vec2> ccw_vertices);
    static Primitive box(Vec2 lo, Vec2 hi);
};

// A rigid body: union of convex primitives sharing one anchor r_A^0 about
// which rotations are applied.
struct Shape {
    std::vector<Primitive> parts;
    Vec2 anchor;

    static Shape disc(Vec2 center, double radius);
    static Shape polygon(std::vector<Vec2> ccw_vertices);
    static Shape box(Vec2 lo, Vec2 hi);
    // Throws StateError on a malformed shape (non-positive radius, clockwise or
    // non-convex polygon, empty box).
    void validate() const;
};

struct Pose {
    Vec2 translation;
    double theta = 0.0;
};

struct Box2 {
    Vec2 lo{1e300, 1e300};
    Vec2 hi{-1e300, -1e300};
    void expand(Vec2 p);
    void expand(const Box2& b);
    bool overlaps(const Box2& b) const;
};

// One placed primitive with membership and cell-intersection queries.
struct PlacedPrimitive {
    Primitive::Kind kind = Primitive::Kind::disc;
    bool half_open = false;  // unrotated box
    Vec2 center;
    double radius = 0.0;
    std::vector<Vec2> vertices;  // polygon corners (ccw) for polygon/box kinds
    Box2 bounds;

    bool contains(Vec2 p) const;
    // Nonempty intersection with the closed cell [x0,x1] x [y0,y1].
    bool intersects_cell(double x0, double y0, double x1, double y1) const;
};

// Closed-form descriptor of Phi_theta(Omega) + r.
struct PlacedShape {
    std::vector<PlacedPrimitive> parts;
    Box2 bounds;

    bool contains(Vec2 p) const;
    bool intersects_cell(double x0, double y0, double x1, double y1) const;
};

// Rotates `shape` about its anchor by pose.theta, then translates by
// pose.translation.
PlacedShape place(const Shape& shape, const Pose& pose);

// True when the interiors of the two placed shapes intersect (touching
// boundaries are allowed).
bool overlaps(const PlacedShape& a, const PlacedShape& b);

struct SceneState {
    std::vector<Shape> shapes;
    std::vector<Pose> poses;
};

// Places every body; throws StateError when the scene is malformed, a body
// leaves [0,1]^2, or two bodies overlap.
std::vector<PlacedShape> place_validated(const SceneState& state);

struct PixelImage {
    int channels = 1;
    int size = 0;  // I + 1
    std::vector<double> data;  // (channels, row, col), values in [0,1]

    PixelImage() = default;
    PixelImage(int channels, int size, double fill = 0.0);

    double delta() const { return 1.0 / size; }
    double& at(int c, int row, int col) { return data[(static_cast<std::size_t>(c) * size + row) * size + col]; }
    double at(int c, int row, int col) const { return data[(static_cast<std::size_t>(c) * size + row) * size + col]; }
    // Logical indexing (i1 along x, i2 along y).
    double& logical(int i1, int i2, int c = 0) { return at(c, size - 1 - i2, i1); }
    double logical(int i1, int i2, int c = 0) const { return at(c, size - 1 - i2, i1); }

    friend bool operator==(const PixelImage&, const PixelImage&) = default;
};

using ImageSequence = std::vector<PixelImage>;

// Pixel (i1,i2) = 1 iff its closed cell meets the placed union.
PixelImage rasterize_binary(const SceneState& state, int resolution);

struct SoftOptions {
    int supersample = 8;
    int channels = 1;  // 1 = grayscale coverage, 3 = RGB with per-body palette
};

std::array<double, 3> palette_color(std::size_t body);

// Pixel value = fraction of the n x n stratified cell-midpoint samples inside
// the union (per body color in RGB mode).
PixelImage rasterize_soft(const SceneState& state, int resolution, const SoftOptions& opts = {});

enum class RenderMode { binary, soft };

struct RenderOptions {
    int resolution = 64;
    RenderMode mode = RenderMode::soft;
    SoftOptions soft;
};

// One frame per state. Rasterizer errors are rethrown with the frame index.
ImageSequence render_trajectory(const std::vector<SceneState>& states, const RenderOptions& opts);

}  // namespace cpae::scene
