#pragma once

// Numerical probes of encoder continuity: the moving-bar corner feature,
// random vs smoothed one-layer encoders across resolutions, latent step
// spikiness, and the translation/rotation sensitivity of strided stacks.

#include <cstdint>
#include <string>
#include <vector>

#include "cpae/nn.hpp"
#include "cpae/scene.hpp"
#include "cpae/simulators.hpp"

namespace cpae::diag {

enum class FilterMode { constant_size, scaling_random, smoothed, random };

FilterMode parse_filter_mode(const std::string& s);
std::string to_string(FilterMode m);

// Uniform[-1,1] weights of the given shape.
Tensor random_filter(const Shape& shape, Rng& rng);
// Separable discrete Gaussian blur (std `bandwidth_px`, zero outside the
// grid, truncated at 4 std) of every trailing 2-D slice, each slice then
// rescaled to max |w| = 1. An all-zero slice stays zero.
Tensor smooth_filter(const Tensor& w, double bandwidth_px = 4.0);

// ---- moving bar ------------------------------------------------------------

struct BarOptions {
    double bar_width = 4.0 / 256;  // Delta
    double delta = 1.0 / 256;      // pixel size
    FilterMode mode = FilterMode::scaling_random;
    int trials = 1000;
    std::uint64_t seed = 0;
    // Filter side J1+1; 0 picks 3 for constant_size and 1/(2 delta) + 1
    // otherwise.
    int filter_size = 0;
    double c_g = 1.0;  // bound c_g * 2 Delta for constant_size / scaling_random
    double bandwidth_px = 4.0;
};

struct BarStats {
    std::vector<double> gaps;    // |g(2 Delta) - g(0)| per trial
    std::vector<double> bounds;  // bound each gap is compared against
    double mean = 0.0, std = 0.0, max = 0.0;
    double fraction_within = 0.0;  // gaps <= bounds
    int filter_size = 0;
    double epsilon = 0.0;
};

// Corner feature [I_1]_{0,0} = eps * sum_{j1,j2} W[j1,j2] * I[j1,j2] with
// logical pixel indexing (j1 along x).
double corner_feature(const scene::PixelImage& img, const Tensor& filter, double eps);
// Binary frame of the bar (z, z+Delta] x (0,1].
scene::PixelImage bar_image(double z, double bar_width, int resolution);

// Throws ConfigError when Delta/delta is not an integer or the moved bar
// leaves the image or the filter footprint.
BarStats bar_counterexample(const BarOptions& opt);

// ---- random vs smoothed one-layer encoder -----------------------------------

struct ProfileOptions {
    sim::SystemId system = sim::SystemId::two_body;
    std::vector<int> resolutions{32, 64, 128};
    int trials = 8;
    int steps = 40;
    double dt = 0.01;
    int channels = 8;
    double bandwidth_px = 4.0;
    scene::RenderMode render = scene::RenderMode::binary;
    std::uint64_t seed = 0;
};

struct RatioStats {
    double mean = 0.0, std = 0.0, max = 0.0;
    std::size_t count = 0;
};

struct ProfileEntry {
    int resolution = 0;
    double delta = 0.0;
    RatioStats random, smoothed;
};

struct ContinuityProfile {
    std::string system;
    std::vector<ProfileEntry> entries;  // delta strictly decreasing
};

// Encoder: `channels` full-image filters, Z_c = delta^2 * sum W_c * I, so the
// smoothed variant approximates an integral that does not depend on delta.
ContinuityProfile random_filter_profile(const ProfileOptions& opt);

// ---- latent smoothness -----------------------------------------------------

struct Smoothness {
    double spikiness = 1.0;  // max step / median step
    double max_step = 0.0;
    double median_step = 0.0;
};

// states: T >= 3 latent vectors. All-identical trajectories give spikiness 1;
// a zero median with a nonzero max gives +inf.
Smoothness latent_smoothness(const std::vector<std::vector<double>>& states);
Smoothness latent_smoothness(const Tensor& states);  // (T, d)

// ---- strided-stack sensitivity ---------------------------------------------

struct Theorem1Options {
    std::vector<int> l_stars{1, 2, 3};
    int resolution = 128;
    int perturbations = 100;
    double translation = 3.0 / 128;  // |dz| for translation pairs (world units)
    double rotation = 0.1;           // |dtheta| for rotation pairs (rad)
    int kernel = 8;                  // stride-2 layer filter side
    int channels = 4;
    double bandwidth_px = 4.0;
    double margin = 0.2;  // central-region margin the body must respect
    bool zero_filters = false;
    std::uint64_t seed = 0;
};

struct Theorem1Row {
    int l_star = 0;
    double c_w = 0.0;  // max filter Lipschitz estimate (world units)
    RatioStats translation, rotation;
    double fitted_c_translation = 0.0;  // least squares of ratio vs c_w / 2^(L*-1)
    double fitted_c_rotation = 0.0;     // least squares of ratio vs c_w
    int skipped = 0;
};

struct Theorem1Report {
    std::vector<Theorem1Row> rows;
    bool translation_shrinks = false;  // mean ratio strictly decreasing in L*
};

// Stack for L*: L*-1 smoothed stride-2 layers (kernel, pad kernel/2-1, ReLU,
// eps = 1/(kernel^2 cin)) followed by a smoothed full-map readout. Pairs are
// drawn once and shared by all L*.
Theorem1Report theorem1_check(const Theorem1Options& opt);

}  // namespace cpae::diag
