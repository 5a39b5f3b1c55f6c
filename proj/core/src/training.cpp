#include "cpae/training.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace cpae::train {

using ad::Var;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    for (double f : {train_fraction, val_fraction, test_fraction})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0,1]");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    if (!(train_fraction > 0.0)) throw ConfigError("train fraction must be > 0");
    if (!(lambda >= 0.0) || !(lambda_r >= 0.0) || !(l2_weight >= 0.0))
        throw ConfigError("loss weights must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    kernel.validate();
}

std::array<int, 3> VideoDataset::frame_shape() const {
    if (trajectories.empty()) throw StateError("empty dataset");
    const Tensor& t = trajectories.front();
    return {t.dim(1), t.dim(2), t.dim(3)};
}

Tensor to_tensor(const scene::ImageSequence& seq) {
    if (seq.empty()) throw StateError("empty image sequence");
    const int c = seq.front().channels, s = seq.front().size;
    Tensor out({static_cast<int>(seq.size()), c, s, s});
    const std::size_t frame = static_cast<std::size_t>(c) * s * s;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq[i].channels != c || seq[i].size != s) throw ShapeError("frames of one sequence differ in shape");
        std::copy(seq[i].data.begin(), seq[i].data.end(), out.data() + i * frame);
    }
    return out;
}

VideoDataset make_dataset(const std::vector<scene::ImageSequence>& seqs) {
    VideoDataset d;
    for (const auto& s : seqs) d.trajectories.push_back(to_tensor(s));
    return d;
}

Split split_trajectories(int m, const TrainConfig& cfg, std::uint64_t seed) {
    if (m < 1) throw ConfigError("need at least one trajectory to split");
    std::vector<int> ids(static_cast<std::size_t>(m));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed);
    rng.shuffle(ids);
    int n_val = static_cast<int>(std::lround(cfg.val_fraction * m));
    int n_test = static_cast<int>(std::lround(cfg.test_fraction * m));
    if (m >= 3) {
        if (cfg.val_fraction > 0.0) n_val = std::max(n_val, 1);
        if (cfg.test_fraction > 0.0) n_test = std::max(n_test, 1);
    } else {
        n_val = n_test = 0;
    }
    while (m - n_val - n_test < 1) (n_test > n_val ? n_test : n_val)--;
    Split s;
    s.train.assign(ids.begin(), ids.end() - n_val - n_test);
    s.val.assign(ids.end() - n_val - n_test, ids.end() - n_test);
    s.test.assign(ids.end() - n_test, ids.end());
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

PairDataset::PairDataset(const VideoDataset& data, const std::vector<int>& trajectories, bool concat_frames)
    : data_(&data), concat_(concat_frames) {
    const int span = concat_ ? 2 : 1;
    for (int m : trajectories) {
        if (m < 0 || m >= data.size()) throw ConfigError("trajectory index out of range");
        for (int n = 0; n + span < data.frames(m); ++n) pairs_.emplace_back(m, n);
    }
}

std::array<int, 3> PairDataset::sample_shape() const {
    auto s = data_->frame_shape();
    if (concat_) s[0] *= 2;
    return s;
}

void PairDataset::frame(int m, int n, double* dst) const {
    const Tensor& t = data_->trajectories[static_cast<std::size_t>(m)];
    const std::size_t per = t.size() / static_cast<std::size_t>(t.dim(0));
    std::memcpy(dst, t.data() + static_cast<std::size_t>(n) * per, per * sizeof(double));
    if (concat_) std::memcpy(dst + per, t.data() + static_cast<std::size_t>(n + 1) * per, per * sizeof(double));
}

void PairDataset::gather(const std::vector<int>& idx, Tensor& x, Tensor& y) const {
    const auto s = sample_shape();
    const int b = static_cast<int>(idx.size());
    x = Tensor({b, s[0], s[1], s[2]});
    y = Tensor({b, s[0], s[1], s[2]});
    const std::size_t per = static_cast<std::size_t>(s[0]) * s[1] * s[2];
    for (int i = 0; i < b; ++i) {
        const auto [m, n] = pairs_.at(static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]));
        frame(m, n, x.data() + i * per);
        frame(m, n + 1, y.data() + i * per);
    }
}

namespace {

struct Terms {
    Var total;
    double reconstruction = 0.0, latent = 0.0, penalty = 0.0;
};

using BatchLoss = std::function<Terms(const std::vector<int>&, bool training)>;

Var mean_sq(const Var& a, const Var& b) { return ad::scale(ad::sum_squares(a - b), 1.0 / a.shape()[0]); }

std::vector<std::vector<int>> batches(int n, int batch, Rng* rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (rng) rng->shuffle(order);
    std::vector<std::vector<int>> out;
    for (int s = 0; s < n; s += batch) out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + batch));
    // A trailing singleton cannot be batch-normalized; fold it into the previous batch.
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back().front());
        out.pop_back();
    }
    return out;
}

double evaluate_loss(int n, int batch, const BatchLoss& loss) {
    ad::NoGradGuard guard;
    double total = 0.0;
    for (const auto& b : batches(n, batch, nullptr)) total += loss(b, false).total.item() * static_cast<double>(b.size());
    return total / n;
}

std::optional<double> first_lipschitz(const std::vector<Var>& filters) {
    if (filters.empty()) return std::nullopt;
    return cont::lipschitz_estimate(filters.front().value(), 1.0);
}

History run(const std::string& stage, int n_train, int n_val, std::vector<NamedParam> params,
            const std::vector<Var>& filters, const TrainConfig& cfg, const BatchLoss& loss) {
    cfg.validate();
    if (n_train < 1) throw StateError(stage + ": no training pairs");
    History h;
    h.stage = stage;
    Adam opt(std::move(params), AdamConfig{cfg.learning_rate});
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
        EpochRecord rec;
        rec.epoch = e + 1;
        double seen = 0.0;
        for (const auto& b : batches(n_train, cfg.batch_size, &rng)) {
            opt.zero_grad();
            Terms t = loss(b, true);
            const double v = t.total.item();
            if (!std::isfinite(v)) {
                h.diverged = true;
                h.message = stage + ": non-finite loss at epoch " + std::to_string(e + 1);
                h.steps = opt.steps();
                return h;
            }
            ad::backward(t.total);
            opt.step();
            const double w = static_cast<double>(b.size());
            rec.train_loss += v * w;
            rec.reconstruction += t.reconstruction * w;
            rec.latent += t.latent * w;
            rec.penalty += t.penalty * w;
            seen += w;
        }
        rec.train_loss /= seen;
        rec.reconstruction /= seen;
        rec.latent /= seen;
        rec.penalty /= seen;
        rec.lipschitz = first_lipschitz(filters);
        if (n_val > 0) rec.val_loss = evaluate_loss(n_val, cfg.batch_size, loss);
        h.epochs.push_back(rec);
        if (cfg.early_stopping && rec.val_loss) {
            if (*rec.val_loss < best) {
                best = *rec.val_loss;
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
    }
    h.steps = opt.steps();
    return h;
}

std::vector<NamedParam> params_of(ae::Codec& codec, lat::FlowModel& flow) {
    std::vector<NamedParam> p;
    codec.collect(p);
    flow.collect("", p);
    return p;
}

// Loss closures bind a dataset that may differ between training and validation.
BatchLoss joint_batch(const PairDataset& data, ae::Codec& codec, lat::FlowModel& flow, const TrainConfig& cfg) {
    return [&data, &codec, &flow, cfg](const std::vector<int>& idx, bool training) {
        Tensor xt, yt;
        data.gather(idx, xt, yt);
        Var x(std::move(xt)), y(std::move(yt));
        Var zx = codec.encode(x, training);
        Var zy = codec.encode(y, training);
        Var recon = mean_sq(codec.decode(zx, training), x) + mean_sq(codec.decode(zy, training), y);
        Var latent = mean_sq(flow.step(zx), zy);
        Terms t;
        t.total = ad::scale(recon, cfg.lambda) + latent;
        t.reconstruction = recon.item();
        t.latent = latent.item();
        return t;
    };
}

BatchLoss cpae_batch(const PairDataset& data, ae::Codec& codec, lat::FlowModel& vp, const TrainConfig& cfg) {
    return [&data, &codec, &vp, cfg](const std::vector<int>& idx, bool training) {
        Tensor xt, yt;
        data.gather(idx, xt, yt);
        Var x(std::move(xt)), y(std::move(yt));
        Var zx = codec.encode(x, training);
        Var recon = mean_sq(codec.decode(zx, training), x);
        Terms t;
        t.total = recon;
        t.reconstruction = recon.item();
        if (cfg.lambda_r > 0.0) {
            Var zp = vp.step(zx);
            Var zy = codec.encode(y, training);
            Var jr = mean_sq(zp, zy) + mean_sq(codec.decode(zp, training), y);
            t.total = t.total + ad::scale(jr, cfg.lambda_r);
            t.latent = jr.item();
        }
        const auto filters = codec.regularized_filters();
        if (!filters.empty()) {
            Var pen = ad::constant(Tensor::scalar(0.0));
            if (cfg.kernel.lambda_j > 0.0) pen = pen + cont::continuity_penalty(filters, cfg.kernel);
            if (cfg.l2_weight > 0.0) pen = pen + cont::l2_penalty(filters, cfg.l2_weight);
            t.total = t.total + pen;
            t.penalty = pen.item();
        }
        return t;
    };
}

}  // namespace

History train_joint(const PairDataset& train, const PairDataset* val, ae::Codec& codec, lat::FlowModel& flow,
                    const TrainConfig& cfg) {
    const PairDataset& v = val ? *val : train;
    const BatchLoss tl = joint_batch(train, codec, flow, cfg);
    const BatchLoss vl = joint_batch(v, codec, flow, cfg);
    const int n_val = val ? val->size() : 0;
    return run("joint", train.size(), n_val, params_of(codec, flow), codec.regularized_filters(), cfg,
               [&](const std::vector<int>& idx, bool training) { return training ? tl(idx, true) : vl(idx, false); });
}

History train_cpae_stage1(const PairDataset& train, const PairDataset* val, ae::Codec& codec, lat::FlowModel& vp,
                          const TrainConfig& cfg) {
    if (vp.kind() != lat::FlowKind::vpnet) throw ConfigError("stage 1 regularizer must be a vpnet");
    const PairDataset& v = val ? *val : train;
    const BatchLoss tl = cpae_batch(train, codec, vp, cfg);
    const BatchLoss vl = cpae_batch(v, codec, vp, cfg);
    const int n_val = val ? val->size() : 0;
    return run("cpae_stage1", train.size(), n_val, params_of(codec, vp), codec.regularized_filters(), cfg,
               [&](const std::vector<int>& idx, bool training) { return training ? tl(idx, true) : vl(idx, false); });
}

History train_latent_stage2(const std::vector<Tensor>& latents, lat::FlowModel& flow, const TrainConfig& cfg) {
    const int d = flow.dim();
    std::vector<std::pair<std::size_t, int>> pairs;
    for (std::size_t m = 0; m < latents.size(); ++m) {
        const Tensor& z = latents[m];
        if (z.rank() != 2 || z.dim(1) != d) throw ShapeError("latent trajectory must be (T," + std::to_string(d) + ")");
        for (int n = 0; n + 1 < z.dim(0); ++n) pairs.emplace_back(m, n);
    }
    if (pairs.empty()) throw StateError("stage 2: no latent pairs to train on");
    std::vector<NamedParam> params;
    flow.collect("", params);
    auto loss = [&](const std::vector<int>& idx, bool) {
        const int b = static_cast<int>(idx.size());
        Tensor zt({b, d}), yt({b, d});
        for (int i = 0; i < b; ++i) {
            const auto [m, n] = pairs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
            for (int j = 0; j < d; ++j) {
                zt.at(i, j) = latents[m].at(n, j);
                yt.at(i, j) = latents[m].at(n + 1, j);
            }
        }
        Terms t;
        t.total = mean_sq(flow.step(Var(std::move(zt))), Var(std::move(yt)));
        t.latent = t.total.item();
        return t;
    };
    return run("latent_stage2", static_cast<int>(pairs.size()), 0, std::move(params), {}, cfg, loss);
}

std::vector<Tensor> encode_trajectories(ae::Codec& codec, const VideoDataset& data, const std::vector<int>& ids) {
    ad::NoGradGuard guard;
    std::vector<Tensor> out;
    for (int m : ids) {
        const Tensor& frames = data.trajectories.at(static_cast<std::size_t>(m));
        out.push_back(codec.encode(Var(frames), false).value());
    }
    return out;
}

double joint_loss(const PairDataset& data, ae::Codec& codec, lat::FlowModel& flow, const TrainConfig& cfg) {
    if (data.empty()) throw StateError("joint_loss: empty dataset");
    return evaluate_loss(data.size(), cfg.batch_size, joint_batch(data, codec, flow, cfg));
}

double cpae_loss(const PairDataset& data, ae::Codec& codec, lat::FlowModel& vp, const TrainConfig& cfg) {
    if (data.empty()) throw StateError("cpae_loss: empty dataset");
    return evaluate_loss(data.size(), cfg.batch_size, cpae_batch(data, codec, vp, cfg));
}

}  // namespace cpae::train
