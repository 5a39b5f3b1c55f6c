#include <doctest.h>

#include <cmath>
#include <limits>

#include "cpae/continuity.hpp"
#include "cpae/diagnostics.hpp"
#include "support.hpp"

using namespace cpae;
using namespace cpae::testing;

TEST_CASE("smoothing keeps the peak at one and lowers the slope") {
    Rng rng(81);
    const Tensor w = diag::random_filter({3, 2, 16, 16}, rng);
    for (double v : w.span()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    const Tensor s = diag::smooth_filter(w, 3.0);
    for (int slice = 0; slice < 6; ++slice) {
        double mx = 0;
        for (int k = 0; k < 256; ++k) mx = std::max(mx, std::abs(s[static_cast<std::size_t>(slice * 256 + k)]));
        CHECK(mx == doctest::Approx(1.0));
    }
    CHECK(cont::lipschitz_estimate(s, 1.0, false) < 0.5 * cont::lipschitz_estimate(w, 1.0, false));
    CHECK(diag::smooth_filter(Tensor({4, 4}), 2.0).max_abs() == 0.0);
}

TEST_CASE("bar frame covers the cells its closed-cell test touches") {
    // Bar (10/64, 14/64] x (0, 1]: closed cells 10..14 meet it along x.
    const auto img = diag::bar_image(10.0 / 64, 4.0 / 64, 64);
    for (int i1 = 0; i1 < 64; ++i1) {
        const bool lit = i1 >= 10 && i1 <= 14;
        CHECK(img.logical(i1, 0) == (lit ? 1.0 : 0.0));
        CHECK(img.logical(i1, 63) == (lit ? 1.0 : 0.0));
    }
}

TEST_CASE("corner feature is eps times the masked sum") {
    scene::PixelImage img(1, 4, 0.0);
    img.logical(0, 0) = 1.0;
    img.logical(1, 0) = 0.5;
    img.logical(0, 1) = 0.25;
    Tensor f({2, 2}, {1.0, 2.0, 3.0, 4.0});  // f[j1][j2], j1 along x
    // 1*1 + 0.25*2 + 0.5*3 + 0*4 = 3
    CHECK(diag::corner_feature(img, f, 0.5) == doctest::Approx(1.5));
}

TEST_CASE("moving-bar statistics: structure and the smoothed bound") {
    diag::BarOptions o;
    o.mode = diag::FilterMode::constant_size;
    const auto c = diag::bar_counterexample(o);
    CHECK(c.filter_size == 3);
    CHECK(c.epsilon == 1.0);
    CHECK(c.gaps.size() == 1);

    o.mode = diag::FilterMode::smoothed;
    o.trials = 20;
    o.delta = 1.0 / 64;
    o.bar_width = 4.0 / 64;
    const auto s = diag::bar_counterexample(o);
    CHECK(s.filter_size == 33);
    CHECK(s.gaps.size() == 20);
    CHECK(s.fraction_within == 1.0);

    o.mode = diag::FilterMode::scaling_random;
    const auto r = diag::bar_counterexample(o);
    CHECK(r.epsilon == doctest::Approx(o.delta / (32 * o.bar_width)));
    CHECK(r.mean > 0.0);

    o.bar_width = 2.5 / 64;
    CHECK_THROWS_AS(diag::bar_counterexample(o), ConfigError);
}

TEST_CASE("latent smoothness on constructed steps") {
    std::vector<std::vector<double>> line;
    for (int n = 0; n < 10; ++n) line.push_back({0.1 * n, -0.2 * n});
    CHECK(diag::latent_smoothness(line).spikiness == doctest::Approx(1.0));
    // Steps 1,1,1,5,1 -> max 5, median 1.
    std::vector<std::vector<double>> spike{{0}, {1}, {2}, {3}, {8}, {9}};
    const auto s = diag::latent_smoothness(spike);
    CHECK(s.spikiness == doctest::Approx(5.0));
    CHECK(s.max_step == doctest::Approx(5.0));
    CHECK(s.median_step == doctest::Approx(1.0));
    CHECK(diag::latent_smoothness(std::vector<std::vector<double>>(4, {1.0, 1.0})).spikiness == 1.0);
    CHECK(std::isinf(diag::latent_smoothness(std::vector<std::vector<double>>{{0}, {0}, {0}, {1}}).spikiness));
    CHECK(diag::latent_smoothness(Tensor({3, 1}, {0.0, 1.0, 3.0})).spikiness == doctest::Approx(2.0 / 1.5));
    CHECK_THROWS(diag::latent_smoothness(std::vector<std::vector<double>>{{0}, {1}}));
}

TEST_CASE("random-filter profile reports every resolution") {
    diag::ProfileOptions o;
    o.resolutions = {16, 32};
    o.trials = 2;
    o.steps = 4;
    o.channels = 2;
    const auto p = diag::random_filter_profile(o);
    REQUIRE(p.entries.size() == 2);
    CHECK(p.entries[0].delta > p.entries[1].delta);
    for (const auto& e : p.entries) {
        CHECK(e.random.count > 0);
        CHECK(e.random.max >= e.random.mean);
        CHECK(e.smoothed.max >= 0.0);
    }
}

TEST_CASE("strided-stack check runs and zero filters give zero response") {
    diag::Theorem1Options o;
    o.l_stars = {1, 2};
    o.resolution = 32;
    o.perturbations = 4;
    o.kernel = 4;
    o.channels = 2;
    o.translation = 1.0 / 32;
    const auto r = diag::theorem1_check(o);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].l_star == 1);
    CHECK(r.rows[0].translation.count + static_cast<std::size_t>(r.rows[0].skipped) == 4);
    o.zero_filters = true;
    const auto z = diag::theorem1_check(o);
    for (const auto& row : z.rows) CHECK(row.translation.max == 0.0);
}
