#pragma once

// Ground-truth dynamics dz/dt = f(z), fixed-step RK4 integration, and the
// binding of each system's state to a renderable scene.

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cpae/nn.hpp"
#include "cpae/scene.hpp"

namespace cpae::sim {

enum class SystemId { damped_pendulum, circular_motion, two_body, double_pendulum, elastic_double_pendulum, bar };

SystemId parse_system(const std::string& s);
std::string to_string(SystemId id);

using State = std::vector<double>;
using Params = std::map<std::string, double>;

// Defaults (world units are fractions of the image side):
//  damped_pendulum  m=1 L=0.125 k=0.8 g=9.8, render: pivot (0.5,0.6),
//                   render_length 0.28, bob_radius 0.08, rod_width 0.03
//  circular_motion  omega=1, circle_radius 0.25, disc_radius 0.1, center 0.5
//  two_body         G=1 m1=m2=1, render_scale 1, body_radius 0.07
//  double_pendulum  m1=m2=1 l1=l2=1 g=9.8, render_scale 0.2
//  elastic_double_pendulum  m1=m2=1 l1=l2=1 k1=k2=200 g=9.8, render_scale 0.17
//  bar              speed=1, bar_width 0.0625
Params default_params(SystemId id);

class DynamicalSystem {
public:
    explicit DynamicalSystem(SystemId id, const Params& overrides = {});

    SystemId id() const { return id_; }
    int dim() const;
    const Params& params() const { return params_; }
    double param(const std::string& key) const;

    // Throws ConfigError on a dimension mismatch.
    State field(std::span<const double> z) const;
    // Mechanical energy for the pendulum-type systems and two-body.
    double energy(std::span<const double> z) const;
    // Total angular momentum about the origin (two_body only).
    double angular_momentum(std::span<const double> z) const;

    // Geometric realization; throws StateError when the state cannot be drawn.
    scene::SceneState scene(std::span<const double> z) const;

    // Seeded draw from the documented per-system initial-condition range.
    State sample_initial(Rng& rng) const;

private:
    void check_dim(std::span<const double> z) const;

    SystemId id_;
    Params params_;
};

struct StateTrajectory {
    double dt = 0.0;
    SystemId system = SystemId::damped_pendulum;
    std::vector<State> states;  // N+1 states including the initial one
};

using FieldFn = std::function<State(std::span<const double>)>;

// Classical RK4 on [0, N*dt] with step dt/substeps; returns N+1 samples.
// Throws IntegrationError carrying the step index if a state goes non-finite.
std::vector<State> integrate(const FieldFn& f, const State& z0, double dt, int steps, int substeps);
StateTrajectory integrate(const DynamicalSystem& sys, const State& z0, double dt, int steps, int substeps);

}  // namespace cpae::sim
