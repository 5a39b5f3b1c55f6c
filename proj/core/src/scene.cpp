#include "cpae/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cpae::scene {

namespace {

constexpr double kTol = 1e-12;

struct Interval {
    double lo, hi;
};

Interval project(const std::vector<Vec2>& pts, Vec2 axis) {
    Interval iv{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : pts) {
        const double d = dot(p, axis);
        iv.lo = std::min(iv.lo, d);
        iv.hi = std::max(iv.hi, d);
    }
    return iv;
}

// Separating-axis test for two convex polygons. `strict` = require a
// positive-length overlap on every axis (interiors meet).
bool convex_intersect(const std::vector<Vec2>& a, const std::vector<Vec2>& b, bool strict) {
    for (const auto* poly : {&a, &b}) {
        const std::size_t n = poly->size();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 e = (*poly)[(i + 1) % n] - (*poly)[i];
            const Vec2 axis{-e.y, e.x};
            const Interval pa = project(a, axis);
            const Interval pb = project(b, axis);
            const double overlap = std::min(pa.hi, pb.hi) - std::max(pa.lo, pb.lo);
            if (strict ? overlap <= kTol * norm(axis) : overlap < 0.0) return false;
        }
    }
    return true;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return norm(p - (a + t * ab));
}

bool polygon_contains(const std::vector<Vec2>& v, Vec2 p) {
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n; ++i)
        if (cross(v[(i + 1) % n] - v[i], p - v[i]) < 0.0) return false;
    return true;
}

// Euclidean distance from p to a convex polygon (0 inside).
double polygon_distance(const std::vector<Vec2>& v, Vec2 p) {
    if (polygon_contains(v, p)) return 0.0;
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.size(); ++i) d = std::min(d, point_segment_distance(p, v[i], v[(i + 1) % v.size()]));
    return d;
}

std::vector<Vec2> box_corners(Vec2 lo, Vec2 hi) { return {{lo.x, lo.y}, {hi.x, lo.y}, {hi.x, hi.y}, {lo.x, hi.y}}; }

bool primitives_overlap(const PlacedPrimitive& a, const PlacedPrimitive& b) {
    using K = Primitive::Kind;
    if (!a.bounds.overlaps(b.bounds)) return false;
    if (a.kind == K::disc && b.kind == K::disc) return norm(a.center - b.center) < a.radius + b.radius - kTol;
    if (a.kind == K::disc) return polygon_distance(b.vertices, a.center) < a.radius - kTol;
    if (b.kind == K::disc) return polygon_distance(a.vertices, b.center) < b.radius - kTol;
    return convex_intersect(a.vertices, b.vertices, true);
}

}  // namespace

double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }

Vec2 rotate(Vec2 p, Vec2 about, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    const Vec2 d = p - about;
    return {about.x + c * d.x - s * d.y, about.y + s * d.x + c * d.y};
}

Primitive Primitive::disc(Vec2 center, double radius) {
    Primitive p;
    p.kind = Kind::disc;
    p.center = center;
    p.radius = radius;
    return p;
}

Primitive Primitive::polygon(std::vector<Vec2> ccw_vertices) {
    Primitive p;
    p.kind = Kind::polygon;
    p.vertices = std::move(ccw_vertices);
    return p;
}

Primitive Primitive::box(Vec2 lo, Vec2 hi) {
    Primitive p;
    p.kind = Kind::box;
    p.lo = lo;
    p.hi = hi;
    return p;
}

namespace {
Vec2 centroid_of(const Primitive& p) {
    switch (p.kind) {
        case Primitive::Kind::disc: return p.center;
        case Primitive::Kind::box: return 0.5 * (p.lo + p.hi);
        case Primitive::Kind::polygon: {
            Vec2 c;
            for (const auto& v : p.vertices) c = c + v;
            return p.vertices.empty() ? c : (1.0 / static_cast<double>(p.vertices.size())) * c;
        }
    }
    return {};
}
}  // namespace

Shape Shape::disc(Vec2 center, double radius) { return {{Primitive::disc(center, radius)}, center}; }
Shape Shape::polygon(std::vector<Vec2> ccw_vertices) {
    Primitive p = Primitive::polygon(std::move(ccw_vertices));
    const Vec2 c = centroid_of(p);
    return {{std::move(p)}, c};
}
Shape Shape::box(Vec2 lo, Vec2 hi) { return {{Primitive::box(lo, hi)}, 0.5 * (lo + hi)}; }

void Shape::validate() const {
    if (parts.empty()) throw StateError("shape has no parts");
    for (const auto& p : parts) {
        switch (p.kind) {
            case Primitive::Kind::disc:
                if (!(p.radius > 0.0)) throw StateError("disc radius must be positive");
                break;
            case Primitive::Kind::box:
                if (!(p.hi.x > p.lo.x && p.hi.y > p.lo.y)) throw StateError("box must have positive extent");
                break;
            case Primitive::Kind::polygon: {
                const auto& v = p.vertices;
                if (v.size() < 3) throw StateError("polygon needs at least 3 vertices");
                for (std::size_t i = 0; i < v.size(); ++i) {
                    const Vec2 e1 = v[(i + 1) % v.size()] - v[i];
                    const Vec2 e2 = v[(i + 2) % v.size()] - v[(i + 1) % v.size()];
                    if (cross(e1, e2) <= 0.0)
                        throw StateError("polygon vertices must be counterclockwise and strictly convex");
                }
                break;
            }
        }
    }
}

void Box2::expand(Vec2 p) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
}

void Box2::expand(const Box2& b) {
    expand(b.lo);
    expand(b.hi);
}

bool Box2::overlaps(const Box2& b) const {
    return lo.x <= b.hi.x && b.lo.x <= hi.x && lo.y <= b.hi.y && b.lo.y <= hi.y;
}

bool PlacedPrimitive::contains(Vec2 p) const {
    switch (kind) {
        case Primitive::Kind::disc: return norm(p - center) <= radius;
        case Primitive::Kind::box:
            if (half_open) return p.x > bounds.lo.x && p.x <= bounds.hi.x && p.y > bounds.lo.y && p.y <= bounds.hi.y;
            [[fallthrough]];
        case Primitive::Kind::polygon: return polygon_contains(vertices, p);
    }
    return false;
}

bool PlacedPrimitive::intersects_cell(double x0, double y0, double x1, double y1) const {
    switch (kind) {
        case Primitive::Kind::disc: {
            const double dx = center.x - std::clamp(center.x, x0, x1);
            const double dy = center.y - std::clamp(center.y, y0, y1);
            return dx * dx + dy * dy <= radius * radius;
        }
        case Primitive::Kind::box:
            if (half_open) return x1 > bounds.lo.x && x0 <= bounds.hi.x && y1 > bounds.lo.y && y0 <= bounds.hi.y;
            [[fallthrough]];
        case Primitive::Kind::polygon:
            return convex_intersect(vertices, box_corners({x0, y0}, {x1, y1}), false);
    }
    return false;
}

bool PlacedShape::contains(Vec2 p) const {
    return std::any_of(parts.begin(), parts.end(), [p](const auto& part) { return part.contains(p); });
}

bool PlacedShape::intersects_cell(double x0, double y0, double x1, double y1) const {
    return std::any_of(parts.begin(), parts.end(),
                       [&](const auto& part) { return part.intersects_cell(x0, y0, x1, y1); });
}

PlacedShape place(const Shape& shape, const Pose& pose) {
    PlacedShape out;
    const Vec2 a = shape.anchor;
    const bool unrotated = std::cos(pose.theta) == 1.0;
    auto map = [&](Vec2 p) { return rotate(p, a, pose.theta) + pose.translation; };
    for (const auto& prim : shape.parts) {
        PlacedPrimitive pp;
        pp.kind = prim.kind;
        switch (prim.kind) {
            case Primitive::Kind::disc:
                pp.center = map(prim.center);
                pp.radius = prim.radius;
                pp.bounds.expand(pp.center - Vec2{pp.radius, pp.radius});
                pp.bounds.expand(pp.center + Vec2{pp.radius, pp.radius});
                break;
            case Primitive::Kind::box:
                pp.half_open = unrotated;
                for (const auto& v : box_corners(prim.lo, prim.hi)) pp.vertices.push_back(unrotated ? v + pose.translation : map(v));
                for (const auto& v : pp.vertices) pp.bounds.expand(v);
                break;
            case Primitive::Kind::polygon:
                for (const auto& v : prim.vertices) pp.vertices.push_back(map(v));
                for (const auto& v : pp.vertices) pp.bounds.expand(v);
                break;
        }
        out.bounds.expand(pp.bounds);
        out.parts.push_back(std::move(pp));
    }
    return out;
}

bool overlaps(const PlacedShape& a, const PlacedShape& b) {
    if (!a.bounds.overlaps(b.bounds)) return false;
    for (const auto& pa : a.parts)
        for (const auto& pb : b.parts)
            if (primitives_overlap(pa, pb)) return true;
    return false;
}

std::vector<PlacedShape> place_validated(const SceneState& state) {
    if (state.shapes.size() != state.poses.size())
        throw StateError("scene has " + std::to_string(state.shapes.size()) + " shapes but " +
                         std::to_string(state.poses.size()) + " poses");
    std::vector<PlacedShape> placed;
    placed.reserve(state.shapes.size());
    for (std::size_t k = 0; k < state.shapes.size(); ++k) {
        state.shapes[k].validate();
        const Pose& pose = state.poses[k];
        if (!std::isfinite(pose.translation.x) || !std::isfinite(pose.translation.y) || !std::isfinite(pose.theta))
            throw StateError("body " + std::to_string(k) + " has a non-finite pose");
        placed.push_back(place(state.shapes[k], pose));
        const Box2& b = placed.back().bounds;
        if (b.lo.x < -kTol || b.lo.y < -kTol || b.hi.x > 1.0 + kTol || b.hi.y > 1.0 + kTol)
            throw StateError("body " + std::to_string(k) + " leaves the unit square");
    }
    for (std::size_t i = 0; i < placed.size(); ++i)
        for (std::size_t j = i + 1; j < placed.size(); ++j)
            if (overlaps(placed[i], placed[j]))
                throw StateError("bodies " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
    return placed;
}

PixelImage::PixelImage(int ch, int sz, double fill)
    : channels(ch), size(sz), data(static_cast<std::size_t>(ch) * sz * sz, fill) {}

namespace {

struct CellRange {
    int i_lo, i_hi, j_lo, j_hi;
};

CellRange cells_touching(const Box2& b, int size) {
    auto clampi = [size](double v) { return std::clamp(static_cast<int>(std::floor(v)), 0, size - 1); };
    return {clampi(b.lo.x * size - 1.0), clampi(b.hi.x * size + 1.0), clampi(b.lo.y * size - 1.0),
            clampi(b.hi.y * size + 1.0)};
}

}  // namespace

PixelImage rasterize_binary(const SceneState& state, int resolution) {
    if (resolution < 2) throw StateError("resolution must be at least 2 (I >= 1)");
    const auto placed = place_validated(state);
    PixelImage img(1, resolution);
    const double n = resolution;
    for (const auto& body : placed) {
        const CellRange r = cells_touching(body.bounds, resolution);
        for (int i1 = r.i_lo; i1 <= r.i_hi; ++i1)
            for (int i2 = r.j_lo; i2 <= r.j_hi; ++i2) {
                if (img.logical(i1, i2) == 1.0) continue;
                if (body.intersects_cell(i1 / n, i2 / n, (i1 + 1) / n, (i2 + 1) / n)) img.logical(i1, i2) = 1.0;
            }
    }
    return img;
}

std::array<double, 3> palette_color(std::size_t body) {
    static constexpr std::array<std::array<double, 3>, 6> kPalette{{
        {1.0, 1.0, 1.0},
        {1.0, 0.3, 0.2},
        {0.2, 0.6, 1.0},
        {0.3, 0.9, 0.3},
        {1.0, 0.85, 0.1},
        {0.8, 0.3, 0.9},
    }};
    return kPalette[body % kPalette.size()];
}

PixelImage rasterize_soft(const SceneState& state, int resolution, const SoftOptions& opts) {
    if (resolution < 2) throw StateError("resolution must be at least 2 (I >= 1)");
    if (opts.supersample < 1) throw StateError("supersample must be >= 1");
    if (opts.channels != 1 && opts.channels != 3) throw StateError("channels must be 1 or 3");
    const auto placed = place_validated(state);
    PixelImage img(opts.channels, resolution);
    const int ns = opts.supersample;
    const double inv = 1.0 / (static_cast<double>(ns) * ns);
    for (std::size_t k = 0; k < placed.size(); ++k) {
        const auto& body = placed[k];
        const auto color = palette_color(k);
        const CellRange r = cells_touching(body.bounds, resolution);
        for (int i1 = r.i_lo; i1 <= r.i_hi; ++i1)
            for (int i2 = r.j_lo; i2 <= r.j_hi; ++i2) {
                int hits = 0;
                for (int a = 0; a < ns; ++a)
                    for (int b = 0; b < ns; ++b) {
                        const Vec2 p{(i1 + (a + 0.5) / ns) / resolution, (i2 + (b + 0.5) / ns) / resolution};
                        if (body.contains(p)) ++hits;
                    }
                if (hits == 0) continue;
                const double cov = hits * inv;
                if (opts.channels == 1) {
                    double& v = img.logical(i1, i2);
                    v = std::min(1.0, v + cov);
                } else {
                    for (int c = 0; c < 3; ++c) {
                        double& v = img.logical(i1, i2, c);
                        v = std::min(1.0, v + cov * color[c]);
                    }
                }
            }
    }
    return img;
}

ImageSequence render_trajectory(const std::vector<SceneState>& states, const RenderOptions& opts) {
    if (states.empty()) throw StateError("render_trajectory: empty state list");
    ImageSequence seq;
    seq.reserve(states.size());
    for (std::size_t n = 0; n < states.size(); ++n) {
        try {
            seq.push_back(opts.mode == RenderMode::binary ? rasterize_binary(states[n], opts.resolution)
                                                          : rasterize_soft(states[n], opts.resolution, opts.soft));
        } catch (const StateError& e) {
            throw StateError("frame " + std::to_string(n) + ": " + e.what());
        }
    }
    return seq;
}

}  // namespace cpae::scene
