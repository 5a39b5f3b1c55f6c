#include "cpae/evaluation.hpp"

#include <cmath>

namespace cpae::eval {

using ad::Var;

double pmse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("pmse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.size() == 0) throw ShapeError("pmse: empty images");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double vpt(const std::vector<double>& errors, double epsilon, double horizon) {
    if (errors.empty()) throw StateError("vpt: empty sequence");
    const std::size_t n = errors.size();
    std::size_t ok = 0;
    while (ok < n && errors[ok] <= epsilon) ++ok;
    return horizon * static_cast<double>(ok) / static_cast<double>(n);
}

double vpt(const Tensor& truth, const Tensor& prediction, double epsilon, double horizon) {
    if (truth.shape() != prediction.shape())
        throw ShapeError("vpt: " + shape_str(truth.shape()) + " vs " + shape_str(prediction.shape()));
    if (truth.rank() < 1 || truth.dim(0) < 1) throw StateError("vpt: empty sequence");
    const int n = truth.dim(0);
    const std::size_t per = truth.size() / static_cast<std::size_t>(n);
    std::vector<double> errs;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
            const double d = truth[i * per + k] - prediction[i * per + k];
            s += d * d;
        }
        errs.push_back(s / static_cast<double>(per));
    }
    return vpt(errs, epsilon, horizon);
}

double vpf(const std::vector<double>& vpts, double horizon) {
    if (vpts.empty()) throw StateError("vpf: no trajectories");
    int full = 0;
    for (double v : vpts)
        if (std::abs(v - horizon) <= 1e-12) ++full;
    return static_cast<double>(full) / static_cast<double>(vpts.size());
}

namespace {

Tensor batch_of_one(const Tensor& x0) {
    if (x0.rank() == 3) return x0.reshaped({1, x0.dim(0), x0.dim(1), x0.dim(2)});
    if (x0.rank() == 4 && x0.dim(0) == 1) return x0;
    throw ShapeError("rollout: initial frame must be (C,H,W) or (1,C,H,W), got " + shape_str(x0.shape()));
}

}  // namespace

Rollout rollout_latent(ae::Codec& codec, const lat::FlowModel& flow, const std::vector<double>& z0,
                       const RolloutOptions& opt) {
    if (opt.steps < 0) throw ConfigError("rollout steps must be >= 0");
    if (opt.direction != 1 && opt.direction != -1) throw ConfigError("rollout direction must be +1 or -1");
    if (opt.substeps < 1) throw ConfigError("substep factor must be >= 1");
    if (!flow.continuous() && (opt.direction != 1 || opt.substeps != 1))
        throw ConfigError(lat::to_string(flow.kind()) + " supports forward unit steps only");
    ad::NoGradGuard guard;
    const double dt = opt.direction * flow.config().dt / opt.substeps;
    Rollout r;
    r.latents.push_back(z0);
    const int total = opt.steps * opt.substeps;
    for (int s = 0; s < total; ++s) {
        try {
            r.latents.push_back(flow.advance(r.latents.back(), dt));
        } catch (const DivergenceError&) {
            throw DivergenceError("rollout diverged at step " + std::to_string(s + 1), s + 1);
        }
    }
    const int d = flow.dim();
    Tensor z({total + 1, d});
    for (int i = 0; i <= total; ++i)
        for (int j = 0; j < d; ++j) z.at(i, j) = r.latents[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    r.frames = codec.decode(Var(std::move(z)), false).value();
    return r;
}

Rollout rollout(ae::Codec& codec, const lat::FlowModel& flow, const Tensor& x0, const RolloutOptions& opt) {
    ad::NoGradGuard guard;
    Tensor z = codec.encode(Var(batch_of_one(x0)), false).value();
    return rollout_latent(codec, flow, z.vec(), opt);
}

void summarize(MetricReport& report) {
    std::vector<double> v;
    for (const auto& t : report.trajectories) v.push_back(t.vpt);
    if (v.empty()) throw StateError("evaluate: no trajectories");
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    report.vpt_mean = 100.0 * mean;
    report.vpt_std = 100.0 * std::sqrt(var);
    report.vpf = 100.0 * vpf(v, report.horizon);
}

MetricReport evaluate(ae::Codec& codec, const lat::FlowModel& flow, const std::vector<Tensor>& trajectories,
                      const EvalOptions& opt) {
    if (trajectories.empty()) throw StateError("evaluate: empty test set");
    MetricReport rep;
    rep.epsilon = opt.epsilon;
    rep.horizon = opt.horizon;
    rep.model = lat::to_string(flow.kind());
    for (const Tensor& traj : trajectories) {
        if (traj.rank() != 4) throw ShapeError("evaluate: trajectory must be (T,C,H,W)");
        const int t = traj.dim(0);
        int steps = t - 1 - opt.start_frame;
        if (opt.max_steps >= 0) steps = std::min(steps, opt.max_steps);
        if (opt.start_frame < 0 || steps < 1) throw ConfigError("evaluate: trajectory too short for the horizon");
        const std::size_t per = traj.size() / static_cast<std::size_t>(t);
        auto frame = [&](int n) {
            const double* p = traj.data() + static_cast<std::size_t>(n) * per;
            return Tensor({1, traj.dim(1), traj.dim(2), traj.dim(3)}, std::vector<double>(p, p + per));
        };
        TrajectoryResult res;
        try {
            Rollout r = rollout(codec, flow, frame(opt.start_frame), {steps, 1, 1});
            const double* pred = r.frames.data();
            res.reconstruction = pmse(frame(opt.start_frame),
                                      Tensor({1, traj.dim(1), traj.dim(2), traj.dim(3)}, std::vector<double>(pred, pred + per)));
            for (int n = 1; n <= steps; ++n) {
                const double* p = pred + static_cast<std::size_t>(n) * per;
                res.pmse.push_back(pmse(frame(opt.start_frame + n),
                                        Tensor({1, traj.dim(1), traj.dim(2), traj.dim(3)}, std::vector<double>(p, p + per))));
            }
            res.vpt = vpt(res.pmse, opt.epsilon, opt.horizon);
        } catch (const DivergenceError& e) {
            res.vpt = 0.0;
            res.diverged = true;
            res.error = e.what();
        }
        rep.trajectories.push_back(std::move(res));
    }
    summarize(rep);
    return rep;
}

}  // namespace cpae::eval
