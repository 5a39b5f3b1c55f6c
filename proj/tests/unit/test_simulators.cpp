#include <doctest.h>

#include <cmath>
#include <limits>

#include "cpae/simulators.hpp"
#include "support.hpp"

using namespace cpae;
using namespace cpae::sim;

namespace {

double rk4_exp_error(int steps) {
    const auto traj = integrate([](std::span<const double> z) { return State{z[0]}; }, {1.0}, 1.0 / steps, steps, 1);
    return std::abs(traj.back()[0] - std::exp(1.0));
}

}  // namespace

TEST_CASE("RK4 is fourth order on z' = z") {
    for (int n : {4, 8, 16}) {
        const double ratio = rk4_exp_error(n) / rk4_exp_error(2 * n);
        CHECK(ratio == doctest::Approx(16.0).epsilon(0.2));
    }
}

TEST_CASE("substeps refine a single output step") {
    const FieldFn f = [](std::span<const double> z) { return State{z[0]}; };
    const auto coarse = integrate(f, {1.0}, 1.0, 1, 8);
    const auto fine = integrate(f, {1.0}, 0.125, 8, 1);
    REQUIRE(coarse.size() == 2);
    CHECK(coarse.back()[0] == doctest::Approx(fine.back()[0]).epsilon(1e-14));
}

TEST_CASE("non-finite states raise IntegrationError with the step") {
    const FieldFn f = [](std::span<const double> z) { return State{z[0] * z[0]}; };  // blows up at t = 1
    try {
        integrate(f, {1.0}, 0.25, 40, 1);
        FAIL("expected IntegrationError");
    } catch (const IntegrationError& e) {
        CHECK(e.step() >= 1);
        CHECK(e.step() <= 40);
    }
}

TEST_CASE("conservative systems keep their invariants") {
    Rng rng(21);
    for (SystemId id : {SystemId::two_body, SystemId::double_pendulum, SystemId::elastic_double_pendulum}) {
        const DynamicalSystem sys(id);
        const State z0 = sys.sample_initial(rng);
        const auto tr = integrate(sys, z0, 0.01, 100, 10);
        const double e0 = sys.energy(z0);
        for (const auto& z : tr.states) CHECK(sys.energy(z) == doctest::Approx(e0).epsilon(1e-7));
        if (id == SystemId::two_body)
            for (const auto& z : tr.states)
                CHECK(sys.angular_momentum(z) == doctest::Approx(sys.angular_momentum(z0)).epsilon(1e-8));
    }
}

TEST_CASE("damped pendulum loses energy monotonically") {
    const DynamicalSystem sys(SystemId::damped_pendulum);
    const auto tr = integrate(sys, {1.0, 0.0}, 0.05, 60, 10);
    for (std::size_t n = 1; n < tr.states.size(); ++n)
        CHECK(sys.energy(tr.states[n]) <= sys.energy(tr.states[n - 1]) + 1e-12);
}

TEST_CASE("circular motion advances the angle at omega") {
    const DynamicalSystem sys(SystemId::circular_motion, {{"omega", 2.0}});
    const auto tr = integrate(sys, {0.3}, 0.1, 10, 1);
    CHECK(tr.states.back()[0] == doctest::Approx(0.3 + 2.0).epsilon(1e-12));
}

TEST_CASE("initial conditions are deterministic in the seed") {
    for (SystemId id : {SystemId::damped_pendulum, SystemId::two_body, SystemId::double_pendulum}) {
        const DynamicalSystem sys(id);
        Rng a(5), b(5), c(6);
        const State za = sys.sample_initial(a);
        CHECK(za == sys.sample_initial(b));
        CHECK(za != sys.sample_initial(c));
        CHECK(static_cast<int>(za.size()) == sys.dim());
    }
}

TEST_CASE("every sampled initial state can be drawn") {
    Rng rng(22);
    for (SystemId id : {SystemId::damped_pendulum, SystemId::circular_motion, SystemId::two_body,
                        SystemId::double_pendulum, SystemId::elastic_double_pendulum, SystemId::bar}) {
        const DynamicalSystem sys(id);
        for (int i = 0; i < 20; ++i) CHECK_NOTHROW(sys.scene(sys.sample_initial(rng)));
    }
}

TEST_CASE("configuration errors") {
    const DynamicalSystem sys(SystemId::damped_pendulum);
    CHECK_THROWS_AS(sys.field(State{1.0}), ConfigError);
    CHECK_THROWS_AS(parse_system("pendulum3"), ConfigError);
    CHECK_THROWS_AS(DynamicalSystem(SystemId::two_body, {{"no_such_param", 1.0}}), ConfigError);
    CHECK_THROWS_AS(DynamicalSystem(SystemId::circular_motion).energy(State{0.0}), ConfigError);
    CHECK_THROWS_AS(sys.scene(State{std::numeric_limits<double>::quiet_NaN(), 0.0}), StateError);
    for (SystemId id : {SystemId::damped_pendulum, SystemId::two_body, SystemId::bar})
        CHECK(parse_system(to_string(id)) == id);
}
