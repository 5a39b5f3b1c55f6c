#include "cpae/simulators.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

namespace cpae::sim {

using scene::Primitive;
using scene::Shape;
using scene::Vec2;

SystemId parse_system(const std::string& s) {
    if (s == "damped_pendulum") return SystemId::damped_pendulum;
    if (s == "circular_motion") return SystemId::circular_motion;
    if (s == "two_body") return SystemId::two_body;
    if (s == "double_pendulum") return SystemId::double_pendulum;
    if (s == "elastic_double_pendulum") return SystemId::elastic_double_pendulum;
    if (s == "bar") return SystemId::bar;
    throw ConfigError("unknown system id '" + s + "'");
}

std::string to_string(SystemId id) {
    switch (id) {
        case SystemId::damped_pendulum: return "damped_pendulum";
        case SystemId::circular_motion: return "circular_motion";
        case SystemId::two_body: return "two_body";
        case SystemId::double_pendulum: return "double_pendulum";
        case SystemId::elastic_double_pendulum: return "elastic_double_pendulum";
        case SystemId::bar: return "bar";
    }
    return "unknown";
}

Params default_params(SystemId id) {
    switch (id) {
        case SystemId::damped_pendulum:
            return {{"m", 1.0}, {"L", 0.125}, {"k", 0.8}, {"g", 9.8}, {"pivot_x", 0.5}, {"pivot_y", 0.6},
                    {"render_length", 0.28}, {"bob_radius", 0.08}, {"rod_width", 0.03}};
        case SystemId::circular_motion:
            return {{"omega", 1.0}, {"circle_radius", 0.25}, {"disc_radius", 0.1}, {"center_x", 0.5}, {"center_y", 0.5}};
        case SystemId::two_body:
            return {{"G", 1.0}, {"m1", 1.0}, {"m2", 1.0}, {"render_scale", 1.0}, {"body_radius", 0.07}};
        case SystemId::double_pendulum:
            return {{"m1", 1.0}, {"m2", 1.0}, {"l1", 1.0}, {"l2", 1.0}, {"g", 9.8}, {"render_scale", 0.2},
                    {"bob_radius", 0.05}, {"rod_width", 0.02}};
        case SystemId::elastic_double_pendulum:
            return {{"m1", 1.0}, {"m2", 1.0}, {"l1", 1.0}, {"l2", 1.0}, {"k1", 200.0}, {"k2", 200.0}, {"g", 9.8},
                    {"render_scale", 0.17}, {"bob_radius", 0.05}, {"rod_width", 0.02}};
        case SystemId::bar: return {{"speed", 1.0}, {"bar_width", 0.0625}};
    }
    return {};
}

DynamicalSystem::DynamicalSystem(SystemId id, const Params& overrides) : id_(id), params_(default_params(id)) {
    for (const auto& [k, v] : overrides) {
        if (!params_.contains(k)) throw ConfigError("unknown parameter '" + k + "' for system " + to_string(id));
        if (!std::isfinite(v)) throw ConfigError("parameter '" + k + "' must be finite");
        params_[k] = v;
    }
}

int DynamicalSystem::dim() const {
    switch (id_) {
        case SystemId::damped_pendulum: return 2;
        case SystemId::circular_motion: return 1;
        case SystemId::two_body: return 8;
        case SystemId::double_pendulum: return 4;
        case SystemId::elastic_double_pendulum: return 8;
        case SystemId::bar: return 1;
    }
    return 0;
}

double DynamicalSystem::param(const std::string& key) const {
    auto it = params_.find(key);
    if (it == params_.end()) throw ConfigError("system " + to_string(id_) + " has no parameter '" + key + "'");
    return it->second;
}

void DynamicalSystem::check_dim(std::span<const double> z) const {
    if (static_cast<int>(z.size()) != dim())
        throw ConfigError("state dimension " + std::to_string(z.size()) + " does not match system " +
                          to_string(id_) + " (expects " + std::to_string(dim()) + ")");
}

namespace {

// Planar two-arm mechanism: p1 = r1 u(th1), p2 = p1 + r2 u(th2) with
// u(th) = (sin th, -cos th). Generalized coordinates are (th1, th2) for rigid
// arms and (th1, th2, r1, r2) for elastic arms.
struct Mechanism {
    double m1, m2, g;
    bool elastic;
    double l1, l2, k1 = 0.0, k2 = 0.0;

    struct Kinematics {
        Eigen::Vector2d p1, p2, v1, v2;
        Eigen::MatrixXd J1, J2;  // 2 x nq
        Eigen::Vector2d a1, a2;  // velocity-product accelerations (Jdot qdot)
    };

    int nq() const { return elastic ? 4 : 2; }

    Kinematics kin(std::span<const double> z) const {
        const int n = nq();
        const double th1 = z[0], th2 = z[1];
        const double r1 = elastic ? z[2] : l1, r2 = elastic ? z[3] : l2;
        const double w1 = z[n], w2 = z[n + 1];
        const double dr1 = elastic ? z[n + 2] : 0.0, dr2 = elastic ? z[n + 3] : 0.0;
        const Eigen::Vector2d u1(std::sin(th1), -std::cos(th1)), n1(std::cos(th1), std::sin(th1));
        const Eigen::Vector2d u2(std::sin(th2), -std::cos(th2)), n2(std::cos(th2), std::sin(th2));
        Kinematics k;
        k.J1 = Eigen::MatrixXd::Zero(2, n);
        k.J2 = Eigen::MatrixXd::Zero(2, n);
        k.J1.col(0) = r1 * n1;
        k.J2.col(0) = r1 * n1;
        k.J2.col(1) = r2 * n2;
        if (elastic) {
            k.J1.col(2) = u1;
            k.J2.col(2) = u1;
            k.J2.col(3) = u2;
        }
        k.p1 = r1 * u1;
        k.p2 = k.p1 + r2 * u2;
        k.v1 = dr1 * u1 + r1 * w1 * n1;
        k.v2 = k.v1 + dr2 * u2 + r2 * w2 * n2;
        k.a1 = 2.0 * dr1 * w1 * n1 - r1 * w1 * w1 * u1;
        k.a2 = k.a1 + 2.0 * dr2 * w2 * n2 - r2 * w2 * w2 * u2;
        return k;
    }

    State field(std::span<const double> z) const {
        const int n = nq();
        const Kinematics k = kin(z);
        const Eigen::Vector2d up(0.0, 1.0);
        Eigen::MatrixXd M = m1 * k.J1.transpose() * k.J1 + m2 * k.J2.transpose() * k.J2;
        Eigen::VectorXd rhs = -m1 * k.J1.transpose() * (k.a1 + g * up) - m2 * k.J2.transpose() * (k.a2 + g * up);
        if (elastic) {
            rhs[2] -= k1 * (z[2] - l1);
            rhs[3] -= k2 * (z[3] - l2);
        }
        const Eigen::VectorXd qdd = M.ldlt().solve(rhs);
        State out(2 * n);
        for (int i = 0; i < n; ++i) {
            out[i] = z[n + i];
            out[n + i] = qdd[i];
        }
        return out;
    }

    double energy(std::span<const double> z) const {
        const Kinematics k = kin(z);
        double e = 0.5 * m1 * k.v1.squaredNorm() + 0.5 * m2 * k.v2.squaredNorm() + g * (m1 * k.p1.y() + m2 * k.p2.y());
        if (elastic) e += 0.5 * k1 * (z[2] - l1) * (z[2] - l1) + 0.5 * k2 * (z[3] - l2) * (z[3] - l2);
        return e;
    }
};

Mechanism mechanism(const DynamicalSystem& s) {
    const bool elastic = s.id() == SystemId::elastic_double_pendulum;
    Mechanism m{s.param("m1"), s.param("m2"), s.param("g"), elastic, s.param("l1"), s.param("l2")};
    if (elastic) {
        m.k1 = s.param("k1");
        m.k2 = s.param("k2");
    }
    return m;
}

// Thin rectangle from a to b with the given width (counterclockwise).
Primitive rod(Vec2 a, Vec2 b, double width) {
    const Vec2 d = b - a;
    const double len = scene::norm(d);
    const Vec2 nrm = (0.5 * width / len) * Vec2{-d.y, d.x};
    return Primitive::polygon({a - nrm, b - nrm, b + nrm, a + nrm});
}

}  // namespace

State DynamicalSystem::field(std::span<const double> z) const {
    check_dim(z);
    switch (id_) {
        case SystemId::damped_pendulum: {
            const double g = param("g"), L = param("L"), k = param("k");
            return {z[1], -(3.0 * g / (2.0 * L)) * std::sin(z[0]) - k * z[1]};
        }
        case SystemId::circular_motion: return {param("omega")};
        case SystemId::bar: return {param("speed")};
        case SystemId::two_body: {
            const double G = param("G"), m1 = param("m1"), m2 = param("m2");
            const double dx = z[2] - z[0], dy = z[3] - z[1];
            const double r2 = dx * dx + dy * dy;
            const double inv3 = 1.0 / (r2 * std::sqrt(r2));
            return {z[4], z[5], z[6], z[7], G * m2 * dx * inv3, G * m2 * dy * inv3, -G * m1 * dx * inv3, -G * m1 * dy * inv3};
        }
        case SystemId::double_pendulum:
        case SystemId::elastic_double_pendulum: return mechanism(*this).field(z);
    }
    return {};
}

double DynamicalSystem::energy(std::span<const double> z) const {
    check_dim(z);
    switch (id_) {
        case SystemId::damped_pendulum: {
            const double m = param("m"), L = param("L"), g = param("g");
            return m * L * L * z[1] * z[1] / 6.0 - 0.5 * m * g * L * std::cos(z[0]);
        }
        case SystemId::two_body: {
            const double G = param("G"), m1 = param("m1"), m2 = param("m2");
            const double r = std::hypot(z[2] - z[0], z[3] - z[1]);
            return 0.5 * m1 * (z[4] * z[4] + z[5] * z[5]) + 0.5 * m2 * (z[6] * z[6] + z[7] * z[7]) - G * m1 * m2 / r;
        }
        case SystemId::double_pendulum:
        case SystemId::elastic_double_pendulum: return mechanism(*this).energy(z);
        default: throw ConfigError("energy is not defined for system " + to_string(id_));
    }
}

double DynamicalSystem::angular_momentum(std::span<const double> z) const {
    check_dim(z);
    if (id_ != SystemId::two_body) throw ConfigError("angular momentum is only defined for two_body");
    const double m1 = param("m1"), m2 = param("m2");
    return m1 * (z[0] * z[5] - z[1] * z[4]) + m2 * (z[2] * z[7] - z[3] * z[6]);
}

scene::SceneState DynamicalSystem::scene(std::span<const double> z) const {
    check_dim(z);
    for (double v : z)
        if (!std::isfinite(v)) throw StateError("non-finite state cannot be rendered");
    scene::SceneState s;
    switch (id_) {
        case SystemId::damped_pendulum: {
            const Vec2 pivot{param("pivot_x"), param("pivot_y")};
            const double len = param("render_length");
            const Vec2 bob{pivot.x, pivot.y - len};
            Shape body{{rod(pivot, bob, param("rod_width")), Primitive::disc(bob, param("bob_radius"))}, pivot};
            s.shapes.push_back(std::move(body));
            s.poses.push_back({{0.0, 0.0}, z[0]});
            break;
        }
        case SystemId::circular_motion: {
            const double R = param("circle_radius");
            const Vec2 c{param("center_x"), param("center_y")};
            s.shapes.push_back(Shape::disc(c, param("disc_radius")));
            s.poses.push_back({{R * std::cos(z[0]), R * std::sin(z[0])}, 0.0});
            break;
        }
        case SystemId::bar: {
            s.shapes.push_back(Shape::box({0.0, 0.0}, {param("bar_width"), 1.0}));
            s.poses.push_back({{z[0], 0.0}, 0.0});
            break;
        }
        case SystemId::two_body: {
            const double m1 = param("m1"), m2 = param("m2"), sc = param("render_scale"), rad = param("body_radius");
            const double cx = (m1 * z[0] + m2 * z[2]) / (m1 + m2), cy = (m1 * z[1] + m2 * z[3]) / (m1 + m2);
            for (int b = 0; b < 2; ++b) {
                s.shapes.push_back(Shape::disc({0.5, 0.5}, rad));
                s.poses.push_back({{sc * (z[2 * b] - cx), sc * (z[2 * b + 1] - cy)}, 0.0});
            }
            break;
        }
        case SystemId::double_pendulum:
        case SystemId::elastic_double_pendulum: {
            const auto k = mechanism(*this).kin(z);
            const double sc = param("render_scale"), w = param("rod_width"), rad = param("bob_radius");
            const Vec2 pivot{0.5, 0.5};
            const Vec2 p1 = pivot + sc * Vec2{k.p1.x(), k.p1.y()};
            const Vec2 p2 = pivot + sc * Vec2{k.p2.x(), k.p2.y()};
            // Non-rigid mechanism: drawn as one body in world coordinates.
            Shape body{{rod(pivot, p1, w), Primitive::disc(p1, rad), rod(p1, p2, w), Primitive::disc(p2, rad)}, pivot};
            s.shapes.push_back(std::move(body));
            s.poses.push_back({});
            break;
        }
    }
    scene::place_validated(s);
    return s;
}

State DynamicalSystem::sample_initial(Rng& rng) const {
    constexpr double pi = std::numbers::pi;
    switch (id_) {
        case SystemId::damped_pendulum: return {rng.uniform(-pi / 2, pi / 2), rng.uniform(-3.0, 3.0)};
        case SystemId::circular_motion: return {rng.uniform(0.0, 2.0 * pi)};
        case SystemId::bar: return {rng.uniform(0.0, 0.5 - param("bar_width"))};
        case SystemId::two_body: {
            const double G = param("G"), m1 = param("m1"), m2 = param("m2"), M = m1 + m2;
            const double d = rng.uniform(0.3, 0.5);
            const double phase = rng.uniform(0.0, 2.0 * pi);
            const double vrel = std::sqrt(G * M / d) * rng.uniform(0.85, 1.0);
            const double ux = std::cos(phase), uy = std::sin(phase);
            // Bodies on opposite sides of the origin, zero total momentum.
            const double r1 = d * m2 / M, r2 = d * m1 / M;
            const double v1 = vrel * m2 / M, v2 = vrel * m1 / M;
            return {-r1 * ux, -r1 * uy, r2 * ux, r2 * uy, v1 * uy, -v1 * ux, -v2 * uy, v2 * ux};
        }
        case SystemId::double_pendulum:
            return {rng.uniform(-pi / 2, pi / 2), rng.uniform(-pi / 2, pi / 2), 0.0, 0.0};
        case SystemId::elastic_double_pendulum: {
            const double l1 = param("l1"), l2 = param("l2");
            return {rng.uniform(-pi / 3, pi / 3), rng.uniform(-pi / 3, pi / 3), l1 * rng.uniform(0.9, 1.1),
                    l2 * rng.uniform(0.9, 1.1), 0.0, 0.0, 0.0, 0.0};
        }
    }
    return {};
}

std::vector<State> integrate(const FieldFn& f, const State& z0, double dt, int steps, int substeps) {
    if (steps < 1) throw ConfigError("integrate: N must be >= 1");
    if (substeps < 1) throw ConfigError("integrate: substeps must be >= 1");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("integrate: dt must be positive");
    const double h = dt / substeps;
    const std::size_t d = z0.size();
    std::vector<State> out;
    out.reserve(static_cast<std::size_t>(steps) + 1);
    out.push_back(z0);
    State z = z0, tmp(d);
    auto axpy = [&](const State& base, double a, const State& k) {
        for (std::size_t i = 0; i < d; ++i) tmp[i] = base[i] + a * k[i];
        return tmp;
    };
    for (int n = 0; n < steps; ++n) {
        for (int s = 0; s < substeps; ++s) {
            const State k1 = f(z);
            const State k2 = f(axpy(z, 0.5 * h, k1));
            const State k3 = f(axpy(z, 0.5 * h, k2));
            const State k4 = f(axpy(z, h, k3));
            for (std::size_t i = 0; i < d; ++i) z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for (double v : z)
            if (!std::isfinite(v))
                throw IntegrationError("non-finite state at step " + std::to_string(n + 1), n + 1);
        out.push_back(z);
    }
    return out;
}

StateTrajectory integrate(const DynamicalSystem& sys, const State& z0, double dt, int steps, int substeps) {
    if (static_cast<int>(z0.size()) != sys.dim()) throw ConfigError("initial state has wrong dimension");
    StateTrajectory tr;
    tr.dt = dt;
    tr.system = sys.id();
    tr.states = integrate([&sys](std::span<const double> z) { return sys.field(z); }, z0, dt, steps, substeps);
    return tr;
}

}  // namespace cpae::sim
