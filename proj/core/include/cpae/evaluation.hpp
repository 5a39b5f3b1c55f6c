#pragma once

// Latent rollouts and the prediction metrics PMSE, VPT and VPF.

#include <string>
#include <vector>

#include "cpae/autoencoder.hpp"
#include "cpae/latent_models.hpp"

namespace cpae::eval {

// Mean squared difference over all entries. Throws ShapeError on mismatch.
double pmse(const Tensor& a, const Tensor& b);

// errors[n-1] is the PMSE of predicted frame n (n = 1..N); frame n sits at
// time n/N * horizon. Returns the largest such time whose whole prefix is
// within epsilon, or 0 when frame 1 already fails. Throws StateError when
// empty.
double vpt(const std::vector<double>& errors, double epsilon, double horizon = 1.0);
// truth/prediction: (N, C, H, W) predicted frames only.
double vpt(const Tensor& truth, const Tensor& prediction, double epsilon, double horizon = 1.0);
// Fraction of values equal to the horizon (within 1e-12).
double vpf(const std::vector<double>& vpts, double horizon = 1.0);

struct RolloutOptions {
    int steps = 0;
    int direction = 1;  // +1 forward, -1 backward (continuous kinds)
    int substeps = 1;   // dt / substeps per step (continuous kinds)
};

struct Rollout {
    std::vector<std::vector<double>> latents;  // steps*substeps + 1
    Tensor frames;                             // (steps*substeps + 1, C, H, W)
};

// Z_0 = E(x0), iterate the flow map, decode every latent. x0 is (C,H,W) or
// (1,C,H,W). Throws DivergenceError carrying the step reached and
// ConfigError for unsupported direction/substeps.
Rollout rollout(ae::Codec& codec, const lat::FlowModel& flow, const Tensor& x0, const RolloutOptions& opt);
// Same, starting from a latent state.
Rollout rollout_latent(ae::Codec& codec, const lat::FlowModel& flow, const std::vector<double>& z0,
                       const RolloutOptions& opt);

struct EvalOptions {
    double epsilon = 0.007;
    double horizon = 1.0;
    int start_frame = 0;  // rollout starts from this frame of each trajectory
    int max_steps = -1;   // -1: up to the trajectory end
};

struct TrajectoryResult {
    double vpt = 0.0;
    double reconstruction = 0.0;  // PMSE of D(E(X_start)) vs X_start
    std::vector<double> pmse;     // predicted frames
    bool diverged = false;
    std::string error;
};

struct MetricReport {
    std::string dataset, model;
    double epsilon = 0.0, horizon = 1.0;
    std::vector<TrajectoryResult> trajectories;
    double vpt_mean = 0.0;  // x100
    double vpt_std = 0.0;   // x100, population std
    double vpf = 0.0;       // x100
};

// Each trajectory tensor is (T, C, H, W). Throws StateError on an empty set.
MetricReport evaluate(ae::Codec& codec, const lat::FlowModel& flow, const std::vector<Tensor>& trajectories,
                      const EvalOptions& opt);
void summarize(MetricReport& report);

}  // namespace cpae::eval
