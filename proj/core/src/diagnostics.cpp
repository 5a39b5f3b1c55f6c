#include "cpae/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cpae/autodiff.hpp"
#include "cpae/continuity.hpp"

namespace cpae::diag {

FilterMode parse_filter_mode(const std::string& s) {
    if (s == "constant_size") return FilterMode::constant_size;
    if (s == "scaling_random") return FilterMode::scaling_random;
    if (s == "smoothed") return FilterMode::smoothed;
    if (s == "random") return FilterMode::random;
    throw ConfigError("unknown filter mode '" + s + "'");
}

std::string to_string(FilterMode m) {
    switch (m) {
        case FilterMode::constant_size: return "constant_size";
        case FilterMode::scaling_random: return "scaling_random";
        case FilterMode::smoothed: return "smoothed";
        case FilterMode::random: return "random";
    }
    return "?";
}

Tensor random_filter(const Shape& shape, Rng& rng) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

Tensor smooth_filter(const Tensor& w, double bandwidth_px) {
    if (w.rank() < 2) throw ShapeError("smooth_filter needs a rank >= 2 tensor");
    if (!(bandwidth_px > 0.0)) throw ConfigError("blur bandwidth must be > 0");
    const int rows = w.dim(-2), cols = w.dim(-1);
    const int radius = static_cast<int>(std::ceil(4.0 * bandwidth_px));
    std::vector<double> g(static_cast<std::size_t>(2 * radius + 1));
    double gs = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double t = k / bandwidth_px;
        g[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * t * t);
        gs += g[static_cast<std::size_t>(k + radius)];
    }
    for (double& v : g) v /= gs;

    Tensor out(w.shape());
    const std::size_t per = static_cast<std::size_t>(rows) * cols;
    const std::size_t slices = w.size() / per;
    std::vector<double> tmp(per);
    for (std::size_t s = 0; s < slices; ++s) {
        const double* src = w.data() + s * per;
        double* dst = out.data() + s * per;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int cc = c + k;
                    if (cc >= 0 && cc < cols) acc += g[static_cast<std::size_t>(k + radius)] * src[r * cols + cc];
                }
                tmp[static_cast<std::size_t>(r) * cols + c] = acc;
            }
        double peak = 0.0;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int rr = r + k;
                    if (rr >= 0 && rr < rows) acc += g[static_cast<std::size_t>(k + radius)] * tmp[rr * cols + c];
                }
                dst[r * cols + c] = acc;
                peak = std::max(peak, std::abs(acc));
            }
        if (peak > 0.0)
            for (std::size_t i = 0; i < per; ++i) dst[i] /= peak;
    }
    return out;
}

namespace {

RatioStats stats_of(const std::vector<double>& v) {
    RatioStats s;
    s.count = v.size();
    if (v.empty()) return s;
    for (double x : v) {
        s.mean += x;
        s.max = std::max(s.max, x);
    }
    s.mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(var / static_cast<double>(v.size()));
    return s;
}

double norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

Tensor image_tensor(const scene::PixelImage& img) {
    return Tensor({1, img.channels, img.size, img.size}, img.data);
}

}  // namespace

// ---- moving bar ------------------------------------------------------------

double corner_feature(const scene::PixelImage& img, const Tensor& filter, double eps) {
    if (filter.rank() != 2) throw ShapeError("corner_feature expects a 2-D filter");
    if (filter.dim(0) > img.size || filter.dim(1) > img.size) throw ShapeError("filter larger than the image");
    double s = 0.0;
    for (int j1 = 0; j1 < filter.dim(0); ++j1)
        for (int j2 = 0; j2 < filter.dim(1); ++j2) s += filter.at(j1, j2) * img.logical(j1, j2);
    return eps * s;
}

scene::PixelImage bar_image(double z, double bar_width, int resolution) {
    scene::SceneState st;
    st.shapes.push_back(scene::Shape::box({0.0, 0.0}, {bar_width, 1.0}));
    st.poses.push_back({{z, 0.0}, 0.0});
    return scene::rasterize_binary(st, resolution);
}

BarStats bar_counterexample(const BarOptions& opt) {
    if (!(opt.delta > 0.0) || !(opt.bar_width > 0.0)) throw ConfigError("bar width and delta must be > 0");
    if (opt.trials < 1) throw ConfigError("trials must be >= 1");
    const double ratio = opt.bar_width / opt.delta;
    const int steps = static_cast<int>(std::lround(ratio));
    if (std::abs(ratio - steps) > 1e-9) throw ConfigError("bar width must be an integer number of pixels");
    const double res_d = 1.0 / opt.delta;
    const int res = static_cast<int>(std::lround(res_d));
    if (std::abs(res_d - res) > 1e-9 || res < 2) throw ConfigError("delta must be 1/(I+1)");
    if (3 * steps + 1 > res) throw ConfigError("moved bar leaves the image");

    BarStats out;
    const bool constant = opt.mode == FilterMode::constant_size;
    int k = opt.filter_size;
    if (k == 0) k = constant ? 3 : res / 2 + 1;
    if (k < 1 || k > res) throw ConfigError("filter size must lie in [1, resolution]");
    if (!constant && k < 3 * steps + 1) throw ConfigError("filter footprint does not cover the moved bar");
    const int j1 = k - 1;
    out.filter_size = k;
    out.epsilon = constant ? 1.0 : (j1 > 0 ? opt.delta / (j1 * opt.bar_width) : 1.0);

    const auto img0 = bar_image(0.0, opt.bar_width, res);
    const auto img2 = bar_image(2.0 * opt.bar_width, opt.bar_width, res);
    Rng rng(opt.seed);
    const int trials = constant ? 1 : opt.trials;
    for (int t = 0; t < trials; ++t) {
        Tensor w;
        if (constant) w = Tensor({k, k}, 1.0);
        else w = random_filter({k, k}, rng);
        double bound = opt.c_g * 2.0 * opt.bar_width;
        if (opt.mode == FilterMode::smoothed) {
            w = smooth_filter(w, opt.bandwidth_px);
            // Each of the (steps+1)(J1+1) shifted differences is at most
            // 2 Delta c_W, giving a Lipschitz bound on g itself.
            const double c_w = cont::lipschitz_estimate(w, opt.delta, false);
            bound = out.epsilon * (steps + 1) * k * c_w * 2.0 * opt.bar_width;
        }
        const double gap = std::abs(corner_feature(img2, w, out.epsilon) - corner_feature(img0, w, out.epsilon));
        out.gaps.push_back(gap);
        out.bounds.push_back(bound);
    }
    const RatioStats s = stats_of(out.gaps);
    out.mean = s.mean;
    out.std = s.std;
    out.max = s.max;
    int within = 0;
    for (std::size_t i = 0; i < out.gaps.size(); ++i)
        if (out.gaps[i] <= out.bounds[i] * (1.0 + 1e-12)) ++within;
    out.fraction_within = static_cast<double>(within) / static_cast<double>(out.gaps.size());
    return out;
}

// ---- random vs smoothed one-layer encoder -----------------------------------

namespace {

std::vector<double> full_filter_encode(const scene::PixelImage& img, const Tensor& w) {
    const int c = w.dim(0);
    const std::size_t per = img.data.size();
    const double eps = 1.0 / (static_cast<double>(img.size) * img.size);
    std::vector<double> z(static_cast<std::size_t>(c), 0.0);
    for (int k = 0; k < c; ++k) {
        const double* wk = w.data() + static_cast<std::size_t>(k) * per;
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += wk[i] * img.data[i];
        z[static_cast<std::size_t>(k)] = eps * s;
    }
    return z;
}

}  // namespace

ContinuityProfile random_filter_profile(const ProfileOptions& opt) {
    if (opt.resolutions.size() < 2) throw ConfigError("profile needs at least two resolutions");
    if (opt.trials < 1 || opt.steps < 1 || opt.channels < 1) throw ConfigError("trials, steps and channels must be >= 1");
    if (!(opt.dt > 0.0)) throw ConfigError("dt must be > 0");
    std::vector<int> res = opt.resolutions;
    std::sort(res.begin(), res.end());
    if (std::adjacent_find(res.begin(), res.end()) != res.end()) throw ConfigError("resolutions must be distinct");

    const sim::DynamicalSystem sys(opt.system);
    std::vector<std::vector<scene::SceneState>> scenes;
    for (int t = 0; t < opt.trials; ++t) {
        Rng rng(opt.seed * 1000003ULL + static_cast<std::uint64_t>(t));
        const auto traj = sim::integrate(sys, sys.sample_initial(rng), opt.dt, opt.steps, 10);
        std::vector<scene::SceneState> sc;
        for (const auto& z : traj.states) sc.push_back(sys.scene(z));
        scenes.push_back(std::move(sc));
    }

    ContinuityProfile prof;
    prof.system = sim::to_string(opt.system);
    for (int s : res) {
        scene::RenderOptions ro;
        ro.resolution = s;
        ro.mode = opt.render;
        std::vector<double> rnd, smo;
        for (int t = 0; t < opt.trials; ++t) {
            Rng frng(opt.seed ^ (static_cast<std::uint64_t>(s) << 32) ^ static_cast<std::uint64_t>(t));
            const Tensor w = random_filter({opt.channels, s, s}, frng);
            const Tensor ws = smooth_filter(w, opt.bandwidth_px);
            const auto frames = scene::render_trajectory(scenes[static_cast<std::size_t>(t)], ro);
            std::vector<double> zr = full_filter_encode(frames[0], w), zs = full_filter_encode(frames[0], ws);
            for (std::size_t n = 1; n < frames.size(); ++n) {
                auto nr = full_filter_encode(frames[n], w);
                auto ns = full_filter_encode(frames[n], ws);
                rnd.push_back(norm_diff(nr, zr) / opt.dt);
                smo.push_back(norm_diff(ns, zs) / opt.dt);
                zr = std::move(nr);
                zs = std::move(ns);
            }
        }
        ProfileEntry e;
        e.resolution = s;
        e.delta = 1.0 / s;
        e.random = stats_of(rnd);
        e.smoothed = stats_of(smo);
        prof.entries.push_back(e);
    }
    return prof;
}

// ---- latent smoothness -----------------------------------------------------

Smoothness latent_smoothness(const std::vector<std::vector<double>>& states) {
    if (states.size() < 3) throw StateError("latent_smoothness needs at least 3 states");
    std::vector<double> steps;
    for (std::size_t i = 1; i < states.size(); ++i) {
        if (states[i].size() != states[0].size()) throw ShapeError("latent states differ in dimension");
        steps.push_back(norm_diff(states[i], states[i - 1]));
    }
    Smoothness s;
    s.max_step = *std::max_element(steps.begin(), steps.end());
    std::vector<double> sorted = steps;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    s.median_step = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    if (s.max_step == 0.0) s.spikiness = 1.0;
    else if (s.median_step == 0.0) s.spikiness = std::numeric_limits<double>::infinity();
    else s.spikiness = s.max_step / s.median_step;
    return s;
}

Smoothness latent_smoothness(const Tensor& states) {
    if (states.rank() != 2) throw ShapeError("latent trajectory must be (T, d)");
    std::vector<std::vector<double>> v;
    for (int i = 0; i < states.dim(0); ++i) {
        const double* p = states.data() + static_cast<std::size_t>(i) * states.dim(1);
        v.emplace_back(p, p + states.dim(1));
    }
    return latent_smoothness(v);
}

// ---- strided-stack sensitivity ---------------------------------------------

namespace {

struct Stack {
    std::vector<Tensor> layers;  // stride-2 filters (cout, cin, k, k)
    Tensor readout;              // (channels, cin, h, w)
    std::vector<double> spacing;  // input grid spacing of every filter (world units)
};

Stack build_stack(int l_star, const Theorem1Options& opt) {
    Stack st;
    int size = opt.resolution, cin = 1;
    double spacing = 1.0 / opt.resolution;
    for (int l = 1; l < l_star; ++l) {
        Rng rng(opt.seed * 7919ULL + static_cast<std::uint64_t>(l));
        Tensor w = smooth_filter(random_filter({opt.channels, cin, opt.kernel, opt.kernel}, rng), opt.bandwidth_px);
        if (opt.zero_filters) w.fill(0.0);
        st.layers.push_back(std::move(w));
        st.spacing.push_back(spacing);
        size = ad::conv_out_size(size, opt.kernel, 2, opt.kernel / 2 - 1);
        spacing *= 2.0;
        cin = opt.channels;
    }
    Rng rng(opt.seed * 7919ULL + 1000ULL + static_cast<std::uint64_t>(l_star));
    st.readout = smooth_filter(random_filter({opt.channels, cin, size, size}, rng), opt.bandwidth_px);
    if (opt.zero_filters) st.readout.fill(0.0);
    st.spacing.push_back(spacing);
    return st;
}

std::vector<double> encode_stack(const Stack& st, const scene::PixelImage& img, int kernel) {
    ad::NoGradGuard guard;
    ad::Var x(image_tensor(img));
    for (const Tensor& w : st.layers) {
        const double eps = 1.0 / (static_cast<double>(kernel) * kernel * w.dim(1));
        x = ad::relu(ad::scale(ad::conv2d(x, ad::Var(w), ad::Var(), {{2, 2}, {kernel / 2 - 1, kernel / 2 - 1}}), eps));
    }
    const Tensor& r = st.readout;
    const double eps = 1.0 / (static_cast<double>(r.dim(1)) * r.dim(2) * r.dim(3));
    return ad::scale(ad::conv2d(x, ad::Var(r), ad::Var(), {}), eps).value().vec();
}

scene::Shape random_body(Rng& rng) {
    std::vector<scene::Vec2> v;
    const int n = 5;
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * std::numbers::pi * (i + rng.uniform(-0.2, 0.2)) / n;
        const double r = rng.uniform(0.06, 0.09);
        v.push_back({r * std::cos(a), r * std::sin(a)});
    }
    scene::Shape s = scene::Shape::polygon(v);
    s.parts.push_back(scene::Primitive::disc({0.0, 0.0}, 0.035));
    return s;
}

bool central(const scene::Shape& body, const scene::Pose& p, double margin) {
    const auto placed = scene::place(body, p);
    return placed.bounds.lo.x >= margin && placed.bounds.lo.y >= margin && placed.bounds.hi.x <= 1.0 - margin &&
           placed.bounds.hi.y <= 1.0 - margin;
}

}  // namespace

Theorem1Report theorem1_check(const Theorem1Options& opt) {
    if (opt.l_stars.empty()) throw ConfigError("theorem1_check needs at least one L*");
    if (opt.perturbations < 1 || opt.resolution < 8 || opt.kernel < 2 || opt.kernel % 2 != 0)
        throw ConfigError("theorem1_check: invalid perturbation count, resolution or kernel");
    Rng rng(opt.seed);
    const scene::Shape body = random_body(rng);

    struct Pair {
        scene::Pose a, b;
        double dz;
        bool translation;
    };
    std::vector<Pair> pairs;
    int skipped = 0;
    for (int i = 0; i < 2 * opt.perturbations; ++i) {
        const bool translation = i < opt.perturbations;
        scene::Pose a{{rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65)}, rng.uniform(-std::numbers::pi, std::numbers::pi)};
        scene::Pose b = a;
        double dz;
        if (translation) {
            const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            b.translation = a.translation + opt.translation * scene::Vec2{std::cos(phi), std::sin(phi)};
            dz = opt.translation;
        } else {
            b.theta += opt.rotation;
            dz = opt.rotation;
        }
        if (!central(body, a, opt.margin) || !central(body, b, opt.margin)) {
            ++skipped;
            continue;
        }
        pairs.push_back({a, b, dz, translation});
    }

    auto render = [&](const scene::Pose& p) {
        scene::SceneState st;
        st.shapes.push_back(body);
        st.poses.push_back(p);
        return scene::rasterize_binary(st, opt.resolution);
    };
    std::vector<std::pair<scene::PixelImage, scene::PixelImage>> images;
    for (const auto& p : pairs) images.emplace_back(render(p.a), render(p.b));

    Theorem1Report rep;
    std::vector<int> ls = opt.l_stars;
    std::sort(ls.begin(), ls.end());
    for (int l_star : ls) {
        if (l_star < 1) throw ConfigError("L* must be >= 1");
        const Stack st = build_stack(l_star, opt);
        Theorem1Row row;
        row.l_star = l_star;
        row.skipped = skipped;
        for (std::size_t i = 0; i < st.spacing.size(); ++i) {
            const Tensor& w = i < st.layers.size() ? st.layers[i] : st.readout;
            row.c_w = std::max(row.c_w, cont::lipschitz_estimate(w, st.spacing[i], false));
        }
        std::vector<double> tr, rot;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const double r = norm_diff(encode_stack(st, images[i].first, opt.kernel),
                                       encode_stack(st, images[i].second, opt.kernel)) / pairs[i].dz;
            (pairs[i].translation ? tr : rot).push_back(r);
        }
        row.translation = stats_of(tr);
        row.rotation = stats_of(rot);
        // Least squares ratio ~ C f with a constant regressor f gives C = mean / f.
        const double ft = row.c_w / std::pow(2.0, l_star - 1);
        row.fitted_c_translation = ft > 0.0 ? row.translation.mean / ft : 0.0;
        row.fitted_c_rotation = row.c_w > 0.0 ? row.rotation.mean / row.c_w : 0.0;
        rep.rows.push_back(row);
    }
    rep.translation_shrinks = rep.rows.size() >= 2;
    for (std::size_t i = 1; i < rep.rows.size(); ++i)
        if (!(rep.rows[i].translation.mean < rep.rows[i - 1].translation.mean)) rep.translation_shrinks = false;
    return rep;
}

}  // namespace cpae::diag
