#pragma once

// Datasets of frame pairs and the optimization loops:
//  train_joint          lambda*(recon x + recon y) + |Phi(E x) - E y|^2
//  train_cpae_stage1    recon x + lambda_R*(|Phi_vp(E x) - E y|^2 + |D Phi_vp(E x) - y|^2)
//                       + continuity penalty (+ optional L2 on the same filters)
//  train_latent_stage2  |Phi(Z_n) - Z_{n+1}|^2 on frozen-encoder latents
// Squared norms are per sample and averaged over the batch.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cpae/autoencoder.hpp"
#include "cpae/continuity.hpp"
#include "cpae/latent_models.hpp"
#include "cpae/scene.hpp"

namespace cpae::train {

struct TrainConfig {
    int epochs = 500;
    double learning_rate = 1e-3;
    int batch_size = 512;
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
    double lambda = 1.0;    // reconstruction weight in the joint loss
    double lambda_r = 1.0;  // stage-1 latent regularizer weight
    cont::KernelSpec kernel;
    double l2_weight = 0.0;  // stage-1 L2 penalty on the regularized filters
    std::uint64_t seed = 0;
    bool early_stopping = false;
    int patience = 20;

    void validate() const;
};

// Frames of M trajectories; each tensor is (T, C, H, W).
struct VideoDataset {
    std::vector<Tensor> trajectories;

    int size() const { return static_cast<int>(trajectories.size()); }
    std::array<int, 3> frame_shape() const;
    int frames(int m) const { return trajectories.at(static_cast<std::size_t>(m)).dim(0); }
};

Tensor to_tensor(const scene::ImageSequence& seq);
VideoDataset make_dataset(const std::vector<scene::ImageSequence>& seqs);

struct Split {
    std::vector<int> train, val, test;
};

// Trajectory-level partition, deterministic in the seed. Counts are rounded
// and every nonzero fraction gets at least one trajectory when M allows it;
// M = 1 puts the single trajectory in train.
Split split_trajectories(int m, const TrainConfig& cfg, std::uint64_t seed);

// Consecutive-frame pairs taken within trajectories. With concat_frames the
// samples are two-frame stacks along channels: x = [X_n, X_{n+1}],
// y = [X_{n+1}, X_{n+2}].
class PairDataset {
public:
    PairDataset() = default;
    PairDataset(const VideoDataset& data, const std::vector<int>& trajectories, bool concat_frames = false);

    int size() const { return static_cast<int>(pairs_.size()); }
    bool empty() const { return pairs_.empty(); }
    std::array<int, 3> sample_shape() const;
    // (m, n) of each pair.
    const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }
    void gather(const std::vector<int>& idx, Tensor& x, Tensor& y) const;

private:
    void frame(int m, int n, double* dst) const;

    const VideoDataset* data_ = nullptr;
    std::vector<std::pair<int, int>> pairs_;
    bool concat_ = false;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double reconstruction = 0.0;
    double latent = 0.0;
    double penalty = 0.0;
    std::optional<double> lipschitz;  // first regularized layer, 1/delta units
};

struct History {
    std::string stage;
    std::vector<EpochRecord> epochs;
    bool diverged = false;
    std::string message;
    long steps = 0;
};

History train_joint(const PairDataset& train, const PairDataset* val, ae::Codec& codec, lat::FlowModel& flow,
                    const TrainConfig& cfg);
History train_cpae_stage1(const PairDataset& train, const PairDataset* val, ae::Codec& codec, lat::FlowModel& vp,
                          const TrainConfig& cfg);
// Each latent trajectory is a (T, d) tensor. Throws StateError if no pair exists.
History train_latent_stage2(const std::vector<Tensor>& latents, lat::FlowModel& flow, const TrainConfig& cfg);

// Encodes every frame of every trajectory in evaluation mode.
std::vector<Tensor> encode_trajectories(ae::Codec& codec, const VideoDataset& data, const std::vector<int>& ids);

// Evaluation-mode losses on a dataset (same terms as the training loss).
double joint_loss(const PairDataset& data, ae::Codec& codec, lat::FlowModel& flow, const TrainConfig& cfg);
double cpae_loss(const PairDataset& data, ae::Codec& codec, lat::FlowModel& vp, const TrainConfig& cfg);

}  // namespace cpae::train
