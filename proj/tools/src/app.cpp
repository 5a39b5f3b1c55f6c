#include "app.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "cpae/continuity.hpp"
#include "cpae/error.hpp"
#include "svg.hpp"

namespace cpae::app {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

template <typename T>
void read_into(const json& j, const char* key, T& dst, const std::string& where) {
    dst = get_or<T>(j, key, dst, where);
}

// Numbers, or the strings "inf" / "infinity".
double number_or_inf(const json& v, const std::string& where) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string() && (v == "inf" || v == "infinity")) return cont::kInfiniteSigma;
    throw ConfigError(where + " must be a number or \"inf\"");
}

std::vector<double> number_list(const json& j, const char* key, const std::string& where) {
    std::vector<double> out;
    if (!j.contains(key)) return out;
    const json& a = j.at(key);
    if (!a.is_array()) throw ConfigError(std::string(key) + " in " + where + " must be an array");
    for (const auto& v : a) out.push_back(number_or_inf(v, where + "." + key));
    return out;
}

scene::RenderMode parse_render(const std::string& s) {
    if (s == "binary") return scene::RenderMode::binary;
    if (s == "soft") return scene::RenderMode::soft;
    throw ConfigError("unknown render mode '" + s + "'");
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

diag::BarOptions parse_bar(const json& j, std::uint64_t seed) {
    const std::string w = "diagnostics.bar";
    reject_unknown(j, {"bar_width", "delta", "mode", "trials", "seed", "filter_size", "c_g", "bandwidth"}, w);
    diag::BarOptions o;
    o.seed = seed;
    read_into(j, "bar_width", o.bar_width, w);
    read_into(j, "delta", o.delta, w);
    if (j.contains("mode")) o.mode = diag::parse_filter_mode(get_or<std::string>(j, "mode", "", w));
    read_into(j, "trials", o.trials, w);
    read_into(j, "seed", o.seed, w);
    read_into(j, "filter_size", o.filter_size, w);
    read_into(j, "c_g", o.c_g, w);
    read_into(j, "bandwidth", o.bandwidth_px, w);
    if (o.trials < 1) throw ConfigError("diagnostics.bar.trials must be >= 1");
    return o;
}

diag::ProfileOptions parse_profile(const json& j, std::uint64_t seed) {
    const std::string w = "diagnostics.profile";
    reject_unknown(j, {"system", "resolutions", "trials", "steps", "dt", "channels", "bandwidth", "render", "seed"}, w);
    diag::ProfileOptions o;
    o.seed = seed;
    if (j.contains("system")) o.system = sim::parse_system(get_or<std::string>(j, "system", "", w));
    read_into(j, "resolutions", o.resolutions, w);
    read_into(j, "trials", o.trials, w);
    read_into(j, "steps", o.steps, w);
    read_into(j, "dt", o.dt, w);
    read_into(j, "channels", o.channels, w);
    read_into(j, "bandwidth", o.bandwidth_px, w);
    if (j.contains("render")) o.render = parse_render(get_or<std::string>(j, "render", "", w));
    read_into(j, "seed", o.seed, w);
    if (o.resolutions.empty() || o.trials < 1 || o.steps < 1 || !(o.dt > 0) || o.channels < 1)
        throw ConfigError("diagnostics.profile needs resolutions, trials, steps, channels >= 1 and dt > 0");
    return o;
}

diag::Theorem1Options parse_theorem1(const json& j, std::uint64_t seed) {
    const std::string w = "diagnostics.theorem1";
    reject_unknown(j,
                   {"l_stars", "resolution", "perturbations", "translation", "rotation", "kernel", "channels",
                    "bandwidth", "margin", "zero_filters", "seed"},
                   w);
    diag::Theorem1Options o;
    o.seed = seed;
    read_into(j, "l_stars", o.l_stars, w);
    read_into(j, "resolution", o.resolution, w);
    read_into(j, "perturbations", o.perturbations, w);
    read_into(j, "translation", o.translation, w);
    read_into(j, "rotation", o.rotation, w);
    read_into(j, "kernel", o.kernel, w);
    read_into(j, "channels", o.channels, w);
    read_into(j, "bandwidth", o.bandwidth_px, w);
    read_into(j, "margin", o.margin, w);
    read_into(j, "zero_filters", o.zero_filters, w);
    read_into(j, "seed", o.seed, w);
    if (o.l_stars.empty() || o.perturbations < 1) throw ConfigError("diagnostics.theorem1 needs l_stars and perturbations");
    return o;
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.is_absolute() || base.empty()) return p;
    return base / p;
}

}  // namespace

io::DatasetManifest parse_manifest_section(const json& j) {
    const std::string w = "dataset.generate";
    reject_unknown(j,
                   {"system", "params", "dt", "frames", "trajectories", "resolution", "channels", "render",
                    "supersample", "substeps", "seed", "split", "states", "initial_state"},
                   w);
    io::DatasetManifest m;
    if (!j.contains("system")) throw ConfigError("missing key 'system' in " + w);
    m.system = sim::parse_system(get_or<std::string>(j, "system", "", w));
    read_into(j, "params", m.params, w);
    read_into(j, "dt", m.dt, w);
    read_into(j, "frames", m.frames, w);
    read_into(j, "trajectories", m.trajectories, w);
    read_into(j, "resolution", m.resolution, w);
    read_into(j, "channels", m.channels, w);
    if (j.contains("render")) m.render = parse_render(get_or<std::string>(j, "render", "", w));
    read_into(j, "supersample", m.supersample, w);
    read_into(j, "substeps", m.substeps, w);
    read_into(j, "seed", m.seed, w);
    if (j.contains("split")) {
        const json& s = j.at("split");
        reject_unknown(s, {"train", "val", "test"}, w + ".split");
        read_into(s, "train", m.train_fraction, w + ".split");
        read_into(s, "val", m.val_fraction, w + ".split");
        read_into(s, "test", m.test_fraction, w + ".split");
    }
    read_into(j, "states", m.states, w);
    read_into(j, "initial_state", m.initial_state, w);
    m.validate();
    return m;
}

RunConfig parse_run_config(const json& j, const fs::path& base) {
    reject_unknown(j,
                   {"seed", "out", "dataset", "split", "architecture", "model", "vp", "pipeline", "train", "stage2",
                    "continuity", "eval", "sweep", "diagnostics"},
                   "config");
    RunConfig c;
    c.source = j;
    read_into(j, "seed", c.seed, "config");
    if (j.contains("out")) c.out = resolve(get_or<std::string>(j, "out", "", "config"), base);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown(d, {"path", "generate"}, "dataset");
        if (d.contains("path") == d.contains("generate"))
            throw ConfigError("dataset needs exactly one of 'path' or 'generate'");
        if (d.contains("path")) c.dataset_path = resolve(get_or<std::string>(d, "path", "", "dataset"), base);
        if (d.contains("generate")) {
            json g = d.at("generate");
            if (g.is_object() && !g.contains("seed")) g["seed"] = c.seed;
            c.generate = parse_manifest_section(g);
        }
    }

    if (j.contains("split")) {
        const json& s = j.at("split");
        reject_unknown(s, {"mode", "train_frames", "fractions"}, "split");
        const std::string mode = get_or<std::string>(s, "mode", "trajectories", "split");
        if (mode == "trajectories")
            c.split = SplitMode::trajectories;
        else if (mode == "frames")
            c.split = SplitMode::frames;
        else
            throw ConfigError("split.mode must be 'trajectories' or 'frames'");
        read_into(s, "train_frames", c.train_frames, "split");
        if (c.split == SplitMode::frames && c.train_frames < 2)
            throw ConfigError("split.train_frames must be >= 2 in frames mode");
        if (s.contains("fractions")) {
            const json& f = s.at("fractions");
            reject_unknown(f, {"train", "val", "test"}, "split.fractions");
            read_into(f, "train", c.train.train_fraction, "split.fractions");
            read_into(f, "val", c.train.val_fraction, "split.fractions");
            read_into(f, "test", c.train.test_fraction, "split.fractions");
        } else if (c.generate) {
            c.train.train_fraction = c.generate->train_fraction;
            c.train.val_fraction = c.generate->val_fraction;
            c.train.test_fraction = c.generate->test_fraction;
        }
    } else if (c.generate) {
        c.train.train_fraction = c.generate->train_fraction;
        c.train.val_fraction = c.generate->val_fraction;
        c.train.test_fraction = c.generate->test_fraction;
    }

    if (j.contains("architecture")) {
        const json& a = j.at("architecture");
        const std::string w = "architecture";
        reject_unknown(a, {"preset", "latent_dim", "fnn"}, w);
        read_into(a, "preset", c.arch.preset, w);
        read_into(a, "latent_dim", c.arch.latent_dim, w);
        if (a.contains("fnn")) {
            if (a.contains("preset")) throw ConfigError("architecture takes either 'preset' or 'fnn'");
            const json& f = a.at("fnn");
            reject_unknown(f, {"hidden", "activation"}, w + ".fnn");
            c.arch.dense = true;
            read_into(f, "hidden", c.arch.hidden, w + ".fnn");
            if (f.contains("activation"))
                c.arch.activation = nn::parse_activation(get_or<std::string>(f, "activation", "", w + ".fnn"));
        }
        if (c.arch.latent_dim < 1) throw ConfigError("architecture.latent_dim must be >= 1");
    }
    c.model.latent_dim = c.arch.latent_dim;

    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, {"kind", "hidden", "layers", "dt"}, "model");
        if (m.contains("kind")) c.model.kind = lat::parse_flow_kind(get_or<std::string>(m, "kind", "", "model"));
        read_into(m, "hidden", c.model.hidden, "model");
        read_into(m, "layers", c.model.layers, "model");
        if (m.contains("dt")) {
            read_into(m, "dt", c.model.dt, "model");
            c.model_dt_set = true;
        }
    }
    if (!c.model_dt_set && c.generate) c.model.dt = c.generate->dt;
    c.model.validate();

    if (j.contains("vp")) {
        reject_unknown(j.at("vp"), {"layers"}, "vp");
        read_into(j.at("vp"), "layers", c.vp_layers, "vp");
        if (c.vp_layers < 1) throw ConfigError("vp.layers must be >= 1");
    }

    if (j.contains("pipeline")) {
        const std::string p = get_or<std::string>(j, "pipeline", "", "config");
        if (p == "cpae")
            c.pipeline = Pipeline::cpae;
        else if (p == "joint")
            c.pipeline = Pipeline::joint;
        else
            throw ConfigError("pipeline must be 'cpae' or 'joint'");
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        const std::string w = "train";
        reject_unknown(t,
                       {"epochs", "learning_rate", "batch_size", "lambda", "lambda_R", "l2_weight", "early_stopping",
                        "patience", "concat_frames"},
                       w);
        read_into(t, "epochs", c.train.epochs, w);
        read_into(t, "learning_rate", c.train.learning_rate, w);
        read_into(t, "batch_size", c.train.batch_size, w);
        read_into(t, "lambda", c.train.lambda, w);
        read_into(t, "lambda_R", c.train.lambda_r, w);
        read_into(t, "l2_weight", c.train.l2_weight, w);
        read_into(t, "early_stopping", c.train.early_stopping, w);
        read_into(t, "patience", c.train.patience, w);
        read_into(t, "concat_frames", c.concat_frames, w);
    }
    c.train.seed = c.seed;

    if (j.contains("stage2")) {
        const json& s = j.at("stage2");
        reject_unknown(s, {"epochs", "learning_rate", "batch_size"}, "stage2");
        read_into(s, "epochs", c.stage2.epochs, "stage2");
        read_into(s, "learning_rate", c.stage2.learning_rate, "stage2");
        read_into(s, "batch_size", c.stage2.batch_size, "stage2");
        if (c.stage2.epochs < 0 || !(c.stage2.learning_rate > 0) || c.stage2.batch_size < 1)
            throw ConfigError("stage2 needs epochs >= 0, learning_rate > 0, batch_size >= 1");
    }

    if (j.contains("continuity")) {
        const json& k = j.at("continuity");
        const std::string w = "continuity";
        reject_unknown(k, {"lambda_J", "sigma", "J_hat", "regularized_layers"}, w);
        read_into(k, "lambda_J", c.train.kernel.lambda_j, w);
        if (k.contains("sigma")) c.train.kernel.sigma = number_or_inf(k.at("sigma"), "continuity.sigma");
        read_into(k, "J_hat", c.train.kernel.j_hat, w);
        if (k.contains("regularized_layers"))
            c.arch.regularized_layers = get_or<std::vector<int>>(k, "regularized_layers", {}, w);
    }
    c.train.validate();

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        reject_unknown(e, {"epsilon", "horizon"}, "eval");
        read_into(e, "epsilon", c.eval.epsilon, "eval");
        read_into(e, "horizon", c.eval.horizon, "eval");
        if (!(c.eval.epsilon > 0) || !(c.eval.horizon > 0)) throw ConfigError("eval.epsilon and eval.horizon must be > 0");
    }

    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        reject_unknown(s, {"lambda_J", "lambda_R", "sigma"}, "sweep");
        c.sweep.lambda_j = number_list(s, "lambda_J", "sweep");
        c.sweep.lambda_r = number_list(s, "lambda_R", "sweep");
        c.sweep.sigma = number_list(s, "sigma", "sweep");
    }

    if (j.contains("diagnostics")) {
        const json& d = j.at("diagnostics");
        reject_unknown(d, {"bar", "profile", "theorem1", "latents"}, "diagnostics");
        if (d.contains("bar")) c.diagnostics.bar = parse_bar(d.at("bar"), c.seed);
        if (d.contains("profile")) c.diagnostics.profile = parse_profile(d.at("profile"), c.seed);
        if (d.contains("theorem1")) c.diagnostics.theorem1 = parse_theorem1(d.at("theorem1"), c.seed);
        if (d.contains("latents")) {
            const json& l = d.at("latents");
            reject_unknown(l, {"checkpoint"}, "diagnostics.latents");
            c.diagnostics.latents_checkpoint =
                resolve(get_or<std::string>(l, "checkpoint", "", "diagnostics.latents"), base);
        }
    }
    return c;
}

RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed) {
    json j;
    try {
        j = json::parse(io::read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (seed) {
        if (!j.is_object()) throw ConfigError("config must be an object");
        j["seed"] = *seed;
    }
    return parse_run_config(j, path.parent_path());
}

// ---- data and pipeline -------------------------------------------------------

namespace {

Tensor quantized(Tensor t) {
    for (double& v : t.span()) v = io::quantize(v);
    return t;
}

// Frames [0, k) of a (T,C,H,W) tensor.
Tensor head_frames(const Tensor& t, int k) {
    const std::size_t per = t.size() / static_cast<std::size_t>(t.dim(0));
    Tensor out({k, t.dim(1), t.dim(2), t.dim(3)});
    std::copy(t.data(), t.data() + per * static_cast<std::size_t>(k), out.data());
    return out;
}

// (T,C,H,W) -> (T-1, 2C, H, W) stacks of consecutive frames.
Tensor stack_pairs(const Tensor& t) {
    const int T = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    const std::size_t per = static_cast<std::size_t>(C) * H * W;
    Tensor out({T - 1, 2 * C, H, W});
    for (int n = 0; n + 1 < T; ++n) {
        std::copy(t.data() + per * n, t.data() + per * (n + 2), out.data() + 2 * per * n);
    }
    return out;
}

}  // namespace

Prepared prepare_data(const RunConfig& cfg) {
    Prepared p;
    if (cfg.dataset_path) {
        auto loaded = io::load_dataset(*cfg.dataset_path);
        p.manifest = loaded.manifest;
        p.video = std::move(loaded.video);
    } else if (cfg.generate) {
        p.manifest = *cfg.generate;
        auto rendered = io::render_dataset(p.manifest);
        // Match what a reload from PNG would give.
        for (const auto& seq : rendered.frames) p.video.trajectories.push_back(quantized(train::to_tensor(seq)));
    } else {
        throw ConfigError("config has no dataset");
    }
    const int M = p.video.size();
    if (cfg.split == SplitMode::frames) {
        for (const auto& t : p.video.trajectories) {
            if (cfg.train_frames >= t.dim(0))
                throw ConfigError("split.train_frames must be smaller than the trajectory length");
            p.train_video.trajectories.push_back(head_frames(t, cfg.train_frames));
        }
        for (int m = 0; m < M; ++m) p.split.train.push_back(m);
        p.eval_ids = p.split.train;
        p.eval_start = cfg.train_frames - 1;
    } else {
        p.train_video = p.video;
        p.split = train::split_trajectories(M, cfg.train, cfg.seed);
        p.eval_ids = !p.split.test.empty() ? p.split.test : !p.split.val.empty() ? p.split.val : p.split.train;
        p.eval_start = 0;
    }
    return p;
}

io::ModelSpec model_spec(const RunConfig& cfg, const Prepared& data) {
    io::ModelSpec s;
    s.seed = cfg.seed;
    const auto fs3 = data.video.frame_shape();
    const int channels = fs3[0] * (cfg.concat_frames ? 2 : 1);
    if (cfg.arch.dense) {
        s.codec = io::CodecKind::fnn;
        s.dense.image = {channels, fs3[1], fs3[2]};
        s.dense.hidden = cfg.arch.hidden;
        s.dense.latent_dim = cfg.arch.latent_dim;
        s.dense.activation = cfg.arch.activation;
        s.dense.validate();
    } else {
        if (fs3[1] != fs3[2] && cfg.arch.preset.rfind("paper", 0) != 0)
            throw ConfigError("preset '" + cfg.arch.preset + "' needs square frames");
        s.arch = ae::preset(cfg.arch.preset, fs3[1], channels, cfg.arch.latent_dim);
        if (cfg.arch.regularized_layers) {
            s.arch.encoder.regularized_layers = *cfg.arch.regularized_layers;
            s.arch.encoder.validate();
        }
    }
    s.flow = cfg.model;
    s.flow.latent_dim = cfg.arch.latent_dim;
    if (cfg.pipeline == Pipeline::cpae) {
        lat::FlowConfig vp;
        vp.kind = lat::FlowKind::vpnet;
        vp.latent_dim = cfg.arch.latent_dim;
        vp.dt = cfg.model.dt;
        vp.layers = cfg.vp_layers;
        vp.validate();
        s.vp = vp;
    }
    s.flow.validate();
    return s;
}

TrainOutcome train_pipeline(const RunConfig& cfg, const Prepared& data) {
    TrainOutcome out;
    out.models = io::build_models(model_spec(cfg, data));
    auto& mods = out.models;
    const train::PairDataset tr(data.train_video, data.split.train, cfg.concat_frames);
    std::optional<train::PairDataset> va;
    if (!data.split.val.empty()) va.emplace(data.train_video, data.split.val, cfg.concat_frames);
    const train::PairDataset* vp = va ? &*va : nullptr;

    if (cfg.pipeline == Pipeline::joint) {
        out.histories.push_back(train::train_joint(tr, vp, *mods.codec, mods.flow, cfg.train));
    } else {
        out.histories.push_back(train::train_cpae_stage1(tr, vp, *mods.codec, *mods.vp, cfg.train));
        if (!out.histories.back().diverged) {
            train::VideoDataset enc_video = data.train_video;
            if (cfg.concat_frames)
                for (auto& t : enc_video.trajectories) t = stack_pairs(t);
            const auto latents = train::encode_trajectories(*mods.codec, enc_video, data.split.train);
            train::TrainConfig s2 = cfg.train;
            s2.epochs = cfg.stage2.epochs;
            s2.learning_rate = cfg.stage2.learning_rate;
            s2.batch_size = cfg.stage2.batch_size;
            out.histories.push_back(train::train_latent_stage2(latents, mods.flow, s2));
        }
    }
    for (const auto& h : out.histories)
        if (h.diverged) {
            out.diverged = true;
            out.message = h.stage + ": " + h.message;
        }
    return out;
}

namespace {

std::vector<Tensor> eval_trajectories(const RunConfig& cfg, const Prepared& data) {
    std::vector<Tensor> out;
    for (int id : data.eval_ids) {
        const Tensor& t = data.video.trajectories.at(static_cast<std::size_t>(id));
        out.push_back(cfg.concat_frames ? stack_pairs(t) : t);
    }
    return out;
}

std::string model_label(const RunConfig& cfg, const io::Models& m) {
    const std::string flow = lat::to_string(m.flow.kind());
    if (cfg.pipeline == Pipeline::cpae) return "cpae+" + flow;
    return m.codec->name() + "+" + flow;
}

}  // namespace

json evaluate_pipeline(const RunConfig& cfg, const Prepared& data, io::Models& models) {
    const auto trajs = eval_trajectories(cfg, data);
    eval::EvalOptions eo;
    eo.epsilon = cfg.eval.epsilon;
    eo.horizon = cfg.eval.horizon;
    eo.start_frame = data.eval_start;
    auto report = eval::evaluate(*models.codec, models.flow, trajs, eo);
    report.dataset = sim::to_string(data.manifest.system);
    report.model = model_label(cfg, models);

    json j;
    j["dataset"] = report.dataset;
    j["model"] = report.model;
    j["codec"] = models.codec->name();
    j["epsilon"] = report.epsilon;
    j["horizon"] = report.horizon;
    j["start_frame"] = data.eval_start;
    j["vpt_mean"] = report.vpt_mean;
    j["vpt_std"] = report.vpt_std;
    j["vpf"] = report.vpf;
    json per = json::array();
    for (std::size_t i = 0; i < report.trajectories.size(); ++i) {
        const auto& r = report.trajectories[i];
        json t;
        t["id"] = data.eval_ids[i];
        t["vpt"] = r.vpt;
        t["reconstruction"] = finite_or_null(r.reconstruction);
        t["diverged"] = r.diverged;
        if (!r.error.empty()) t["error"] = r.error;
        json pm = json::array();
        for (double v : r.pmse) pm.push_back(finite_or_null(v));
        t["pmse"] = pm;
        per.push_back(t);
    }
    j["trajectories"] = per;

    // Smoothness of the encoded ground-truth sequences.
    train::VideoDataset ev;
    ev.trajectories = trajs;
    std::vector<int> ids(trajs.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    const auto latents = train::encode_trajectories(*models.codec, ev, ids);
    double sum = 0.0, mx = 0.0;
    json sm = json::array();
    for (const auto& z : latents) {
        if (z.dim(0) < 3) continue;
        const auto s = diag::latent_smoothness(z);
        sum += s.spikiness;
        mx = std::max(mx, s.spikiness);
        sm.push_back({{"spikiness", finite_or_null(s.spikiness)},
                      {"max_step", s.max_step},
                      {"median_step", s.median_step}});
    }
    j["smoothness"] = {{"spikiness_mean", sm.empty() ? json(nullptr) : finite_or_null(sum / sm.size())},
                       {"spikiness_max", sm.empty() ? json(nullptr) : finite_or_null(mx)},
                       {"per_trajectory", sm}};
    const auto filters = models.codec->regularized_filters();
    if (!filters.empty()) {
        const auto shape = models.codec->image_shape();
        j["lipschitz_first_layer"] = cont::lipschitz_estimate(filters.front().value(), 1.0 / shape[1]);
    }
    return j;
}

json history_json(const std::vector<train::History>& hs) {
    json arr = json::array();
    for (const auto& h : hs) {
        json e = json::array();
        for (const auto& r : h.epochs) {
            e.push_back({{"epoch", r.epoch},
                         {"train_loss", finite_or_null(r.train_loss)},
                         {"val_loss", r.val_loss ? finite_or_null(*r.val_loss) : json(nullptr)},
                         {"reconstruction", finite_or_null(r.reconstruction)},
                         {"latent", finite_or_null(r.latent)},
                         {"penalty", finite_or_null(r.penalty)},
                         {"lipschitz", r.lipschitz ? finite_or_null(*r.lipschitz) : json(nullptr)}});
        }
        arr.push_back({{"stage", h.stage},
                       {"diverged", h.diverged},
                       {"message", h.message},
                       {"steps", h.steps},
                       {"epochs", e}});
    }
    return arr;
}

std::string table_csv(const json& r) {
    char buf[256];
    std::ostringstream os;
    os << "dataset,model,vpt,vpt_mean,vpt_std,vpf\n";
    const double m = r.at("vpt_mean").get<double>(), s = r.at("vpt_std").get<double>(), f = r.at("vpf").get<double>();
    std::snprintf(buf, sizeof buf, "%s,%s,%.1f±%.1f,%.4f,%.4f,%.4f\n", r.at("dataset").get<std::string>().c_str(),
                  r.at("model").get<std::string>().c_str(), m, s, m, s, f);
    os << buf;
    return os.str();
}

// ---- commands ----------------------------------------------------------------

RunLock::RunLock(const fs::path& dir) {
    fs::create_directories(dir);
    path_ = dir / ".lock";
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        const int err = errno;
        path_.clear();
        if (err == EEXIST) throw StateError("run directory " + dir.string() + " is locked by another process");
        throw IoError("cannot create lock in " + dir.string() + ": " + std::strerror(err));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() {
    if (!path_.empty()) {
        std::error_code ec;
        fs::remove(path_, ec);
    }
}

namespace {

void write_json(const fs::path& p, const json& j) { io::write_text(p, j.dump(2) + "\n"); }

std::string latents_csv(const std::vector<Tensor>& latents, const std::vector<int>& ids) {
    std::ostringstream os;
    os.precision(17);
    os << "trajectory,frame";
    const int d = latents.empty() ? 0 : latents.front().dim(1);
    for (int k = 0; k < d; ++k) os << ",z" << k;
    os << "\n";
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const Tensor& z = latents[i];
        for (int n = 0; n < z.dim(0); ++n) {
            os << ids[i] << "," << n;
            for (int k = 0; k < d; ++k) os << "," << z.data()[static_cast<std::size_t>(n) * d + k];
            os << "\n";
        }
    }
    return os.str();
}

std::string latent_scatter(const std::vector<Tensor>& latents, const std::string& title) {
    std::vector<svg::Series> series;
    for (std::size_t i = 0; i < latents.size() && i < 8; ++i) {
        svg::Series s;
        s.label = "trajectory " + std::to_string(i);
        const Tensor& z = latents[i];
        const int d = z.dim(1);
        for (int n = 0; n < z.dim(0); ++n) {
            s.x.push_back(z.data()[static_cast<std::size_t>(n) * d]);
            s.y.push_back(d > 1 ? z.data()[static_cast<std::size_t>(n) * d + 1] : static_cast<double>(n));
        }
        series.push_back(std::move(s));
    }
    svg::ChartOptions o;
    o.title = title;
    o.x_label = "z0";
    o.y_label = latents.empty() || latents.front().dim(1) > 1 ? "z1" : "frame";
    o.markers_only = true;
    return svg::line_chart(series, o);
}

json stats_json(const diag::RatioStats& s) {
    return {{"mean", finite_or_null(s.mean)}, {"std", finite_or_null(s.std)}, {"max", finite_or_null(s.max)}, {"count", s.count}};
}

json profile_json(const diag::ContinuityProfile& p) {
    json e = json::array();
    for (const auto& r : p.entries)
        e.push_back({{"resolution", r.resolution},
                     {"delta", r.delta},
                     {"random", stats_json(r.random)},
                     {"smoothed", stats_json(r.smoothed)}});
    return {{"system", p.system}, {"entries", e}};
}

std::string profile_svg(const json& p) {
    svg::Series rnd{"random filters", {}, {}, {}}, smo{"smoothed filters", {}, {}, {}};
    for (const auto& e : p.at("entries")) {
        const double d = e.at("delta").get<double>();
        if (!e.at("random").at("max").is_null()) {
            rnd.x.push_back(d);
            rnd.y.push_back(e.at("random").at("max").get<double>());
        }
        if (!e.at("smoothed").at("max").is_null()) {
            smo.x.push_back(d);
            smo.y.push_back(e.at("smoothed").at("max").get<double>());
        }
    }
    svg::ChartOptions o;
    o.title = "max |dZ|/dt vs pixel size (" + p.at("system").get<std::string>() + ")";
    o.x_label = "delta";
    o.y_label = "max |dZ|/dt";
    o.log_y = true;
    return svg::line_chart({rnd, smo}, o);
}

json bar_json(const diag::BarStats& s, const diag::BarOptions& o) {
    return {{"mode", diag::to_string(o.mode)},
            {"bar_width", o.bar_width},
            {"delta", o.delta},
            {"trials", o.trials},
            {"filter_size", s.filter_size},
            {"epsilon", s.epsilon},
            {"mean", s.mean},
            {"std", s.std},
            {"max", s.max},
            {"fraction_within", s.fraction_within},
            {"gaps", s.gaps},
            {"bounds", s.bounds}};
}

std::string bar_svg(const diag::BarStats& s, const diag::BarOptions& o) {
    svg::Series g{"|g(2D) - g(0)|", {}, s.gaps, {}}, b{"bound", {}, s.bounds, {}};
    for (std::size_t i = 0; i < s.gaps.size(); ++i) {
        g.x.push_back(static_cast<double>(i));
        b.x.push_back(static_cast<double>(i));
    }
    svg::ChartOptions opt;
    opt.title = "moving bar, " + diag::to_string(o.mode);
    opt.x_label = "trial";
    opt.y_label = "gap";
    opt.markers_only = true;
    return svg::line_chart({g, b}, opt);
}

json theorem1_json(const diag::Theorem1Report& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"l_star", row.l_star},
                        {"c_w", row.c_w},
                        {"translation", stats_json(row.translation)},
                        {"rotation", stats_json(row.rotation)},
                        {"fitted_c_translation", finite_or_null(row.fitted_c_translation)},
                        {"fitted_c_rotation", finite_or_null(row.fitted_c_rotation)},
                        {"skipped", row.skipped}});
    return {{"rows", rows}, {"translation_shrinks", r.translation_shrinks}};
}

std::string theorem1_svg(const json& r) {
    svg::Series tr{"translation", {}, {}, {}}, ro{"rotation", {}, {}, {}};
    for (const auto& row : r.at("rows")) {
        const double l = row.at("l_star").get<double>();
        for (auto* s : {&tr, &ro}) {
            const json& st = row.at(s == &tr ? "translation" : "rotation");
            if (st.at("mean").is_null()) continue;
            s->x.push_back(l);
            s->y.push_back(st.at("mean").get<double>());
            s->y_err.push_back(st.at("std").is_null() ? 0.0 : st.at("std").get<double>());
        }
    }
    svg::ChartOptions o;
    o.title = "feature change ratio vs number of strided layers";
    o.x_label = "L*";
    o.y_label = "mean ratio";
    return svg::line_chart({tr, ro}, o);
}

std::string loss_svg(const json& hist) {
    std::vector<svg::Series> series;
    for (const auto& h : hist) {
        svg::Series tr{h.at("stage").get<std::string>() + " train", {}, {}, {}};
        svg::Series va{h.at("stage").get<std::string>() + " val", {}, {}, {}};
        for (const auto& e : h.at("epochs")) {
            const double ep = e.at("epoch").get<double>();
            if (!e.at("train_loss").is_null() && e.at("train_loss").get<double>() > 0) {
                tr.x.push_back(ep);
                tr.y.push_back(e.at("train_loss").get<double>());
            }
            if (!e.at("val_loss").is_null() && e.at("val_loss").get<double>() > 0) {
                va.x.push_back(ep);
                va.y.push_back(e.at("val_loss").get<double>());
            }
        }
        if (!tr.x.empty()) series.push_back(tr);
        if (!va.x.empty()) series.push_back(va);
    }
    svg::ChartOptions o;
    o.title = "training loss";
    o.x_label = "epoch";
    o.y_label = "loss";
    o.log_y = true;
    return svg::line_chart(series, o);
}

std::string pmse_svg(const json& report) {
    std::vector<svg::Series> series;
    for (const auto& t : report.at("trajectories")) {
        if (series.size() >= 10) break;
        svg::Series s{"trajectory " + std::to_string(t.at("id").get<int>()), {}, {}, {}};
        int n = 1;
        for (const auto& v : t.at("pmse")) {
            if (!v.is_null() && v.get<double>() > 0) {
                s.x.push_back(n);
                s.y.push_back(v.get<double>());
            }
            ++n;
        }
        series.push_back(s);
    }
    svg::Series eps{"epsilon", {}, {}, {}};
    double last = 1;
    for (const auto& s : series)
        if (!s.x.empty()) last = std::max(last, s.x.back());
    eps.x = {1, last};
    eps.y = {report.at("epsilon").get<double>(), report.at("epsilon").get<double>()};
    series.push_back(eps);
    svg::ChartOptions o;
    o.title = "prediction error (" + report.at("model").get<std::string>() + ")";
    o.x_label = "predicted frame";
    o.y_label = "PMSE";
    o.log_y = true;
    return svg::line_chart(series, o);
}

std::string sweep_svg(const json& sweep) {
    std::vector<svg::Bar> bars;
    for (const auto& p : sweep.at("points")) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "J=%g R=%g s=%g", p.at("lambda_J").get<double>(), p.at("lambda_R").get<double>(),
                      p.at("sigma").is_null() ? std::numeric_limits<double>::infinity() : p.at("sigma").get<double>());
        bars.push_back({buf, p.at("vpt_mean").get<double>(), p.at("vpt_std").get<double>()});
    }
    svg::ChartOptions o;
    o.title = "VPT across regularization weights";
    o.y_label = "VPT x100";
    return svg::bar_chart(bars, o);
}

}  // namespace

json cmd_generate(const RunConfig& cfg, const fs::path& out) {
    if (!cfg.generate) throw ConfigError("generate needs a dataset.generate section");
    const io::DatasetManifest& m = *cfg.generate;
    m.validate();
    RunLock lock(out);
    io::generate_dataset(m, out);
    return {{"dataset", out.string()},
            {"system", sim::to_string(m.system)},
            {"trajectories", m.trajectories},
            {"frames", m.frames}};
}

json cmd_train(const RunConfig& cfg, const fs::path& out) {
    const Prepared data = prepare_data(cfg);
    RunLock lock(out);
    write_json(out / "config.json", cfg.source);
    auto result = train_pipeline(cfg, data);
    const json hist = history_json(result.histories);
    write_json(out / "history.json", hist);
    if (result.diverged) throw DivergenceError(result.message, result.histories.back().steps);
    io::save_checkpoint(out / "checkpoint.json", result.models);
    json summary = {{"checkpoint", (out / "checkpoint.json").string()}, {"history", (out / "history.json").string()}};
    json last = json::array();
    for (const auto& h : result.histories)
        if (!h.epochs.empty()) last.push_back({{"stage", h.stage}, {"train_loss", finite_or_null(h.epochs.back().train_loss)}});
    summary["final"] = last;
    return summary;
}

json cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out) {
    const Prepared data = prepare_data(cfg);
    io::Models models = io::load_checkpoint(checkpoint);
    RunLock lock(out);
    const json report = evaluate_pipeline(cfg, data, models);
    write_json(out / "report.json", report);
    io::write_text(out / "table.csv", table_csv(report));
    train::VideoDataset ev;
    ev.trajectories = eval_trajectories(cfg, data);
    std::vector<int> idx(ev.trajectories.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    io::write_text(out / "latents.csv", latents_csv(train::encode_trajectories(*models.codec, ev, idx), data.eval_ids));
    return report;
}

json cmd_diagnose(const RunConfig& cfg, const fs::path& out) {
    const auto& d = cfg.diagnostics;
    if (!d.bar && !d.profile && !d.theorem1 && !d.latents_checkpoint)
        throw ConfigError("diagnose needs at least one diagnostics section");
    RunLock lock(out);
    json summary = json::object();
    if (d.bar) {
        const auto stats = diag::bar_counterexample(*d.bar);
        json j = bar_json(stats, *d.bar);
        write_json(out / "bar.json", j);
        io::write_text(out / "bar.svg", bar_svg(stats, *d.bar));
        summary["bar"] = {{"fraction_within", stats.fraction_within}, {"mean", stats.mean}, {"std", stats.std}};
    }
    if (d.profile) {
        const json j = profile_json(diag::random_filter_profile(*d.profile));
        write_json(out / "profile.json", j);
        io::write_text(out / "profile.svg", profile_svg(j));
        summary["profile"] = j;
    }
    if (d.theorem1) {
        const json j = theorem1_json(diag::theorem1_check(*d.theorem1));
        write_json(out / "theorem1.json", j);
        io::write_text(out / "theorem1.svg", theorem1_svg(j));
        summary["theorem1"] = j;
    }
    if (d.latents_checkpoint) {
        const Prepared data = prepare_data(cfg);
        io::Models models = io::load_checkpoint(*d.latents_checkpoint);
        train::VideoDataset ev;
        ev.trajectories = eval_trajectories(cfg, data);
        std::vector<int> idx(ev.trajectories.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        const auto latents = train::encode_trajectories(*models.codec, ev, idx);
        json sm = json::array();
        for (const auto& z : latents)
            if (z.dim(0) >= 3) {
                const auto s = diag::latent_smoothness(z);
                sm.push_back({{"spikiness", finite_or_null(s.spikiness)},
                              {"max_step", s.max_step},
                              {"median_step", s.median_step}});
            }
        write_json(out / "latents.json", {{"smoothness", sm}});
        io::write_text(out / "latents.csv", latents_csv(latents, data.eval_ids));
        io::write_text(out / "latents.svg", latent_scatter(latents, "encoded trajectory"));
        summary["latents"] = sm;
    }
    return summary;
}

json cmd_sweep(const RunConfig& cfg, const fs::path& out) {
    const Prepared data = prepare_data(cfg);
    RunLock lock(out);
    auto or_base = [](const std::vector<double>& v, double base) { return v.empty() ? std::vector<double>{base} : v; };
    const auto lj = or_base(cfg.sweep.lambda_j, cfg.train.kernel.lambda_j);
    const auto lr = or_base(cfg.sweep.lambda_r, cfg.train.lambda_r);
    const auto sg = or_base(cfg.sweep.sigma, cfg.train.kernel.sigma);
    json points = json::array();
    std::ostringstream csv;
    csv.precision(10);
    csv << "lambda_J,lambda_R,sigma,vpt_mean,vpt_std,vpf,spikiness_mean,diverged\n";
    for (double a : lj)
        for (double b : lr)
            for (double s : sg) {
                RunConfig c = cfg;
                c.train.kernel.lambda_j = a;
                c.train.lambda_r = b;
                c.train.kernel.sigma = s;
                c.train.validate();
                auto trained = train_pipeline(c, data);
                json p = {{"lambda_J", a}, {"lambda_R", b}, {"sigma", finite_or_null(s)}};
                if (trained.diverged) {
                    p.update({{"vpt_mean", 0.0}, {"vpt_std", 0.0}, {"vpf", 0.0}, {"spikiness_mean", nullptr},
                              {"diverged", true}, {"message", trained.message}});
                } else {
                    const json r = evaluate_pipeline(c, data, trained.models);
                    p.update({{"vpt_mean", r.at("vpt_mean")}, {"vpt_std", r.at("vpt_std")}, {"vpf", r.at("vpf")},
                              {"spikiness_mean", r.at("smoothness").at("spikiness_mean")}, {"diverged", false}});
                }
                csv << a << "," << b << "," << s << "," << p.at("vpt_mean").get<double>() << ","
                    << p.at("vpt_std").get<double>() << "," << p.at("vpf").get<double>() << ",";
                if (!p.at("spikiness_mean").is_null()) csv << p.at("spikiness_mean").get<double>();
                csv << "," << (p.at("diverged").get<bool>() ? 1 : 0) << "\n";
                points.push_back(p);
            }
    const json sweep = {{"dataset", sim::to_string(data.manifest.system)}, {"points", points}};
    write_json(out / "sweep.json", sweep);
    io::write_text(out / "summary.csv", csv.str());
    io::write_text(out / "sweep.svg", sweep_svg(sweep));
    return sweep;
}

json cmd_plot(const fs::path& dir) {
    auto load = [&](const char* name) { return json::parse(io::read_text(dir / name)); };
    json written = json::array();
    auto emit = [&](const char* name, const std::string& text) {
        io::write_text(dir / name, text);
        written.push_back((dir / name).string());
    };
    if (fs::exists(dir / "history.json")) emit("loss.svg", loss_svg(load("history.json")));
    if (fs::exists(dir / "report.json")) emit("pmse.svg", pmse_svg(load("report.json")));
    if (fs::exists(dir / "sweep.json")) emit("sweep.svg", sweep_svg(load("sweep.json")));
    if (fs::exists(dir / "profile.json")) emit("profile.svg", profile_svg(load("profile.json")));
    if (fs::exists(dir / "theorem1.json")) emit("theorem1.svg", theorem1_svg(load("theorem1.json")));
    if (fs::exists(dir / "latents.csv")) {
        std::istringstream in(io::read_text(dir / "latents.csv"));
        std::string line;
        std::getline(in, line);
        std::map<int, std::vector<std::vector<double>>> rows;
        while (std::getline(in, line)) {
            std::istringstream ls(line);
            std::string cell;
            std::vector<double> v;
            while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
            if (v.size() < 3) continue;
            rows[static_cast<int>(v[0])].push_back(std::vector<double>(v.begin() + 2, v.end()));
        }
        std::vector<Tensor> lat;
        for (const auto& [id, r] : rows) {
            const int d = static_cast<int>(r.front().size());
            Tensor t({static_cast<int>(r.size()), d});
            for (std::size_t n = 0; n < r.size(); ++n)
                std::copy(r[n].begin(), r[n].end(), t.data() + n * static_cast<std::size_t>(d));
            lat.push_back(std::move(t));
        }
        emit("latents.svg", latent_scatter(lat, "encoded trajectory"));
    }
    if (written.empty()) throw IoError("nothing to plot in " + dir.string());
    return {{"written", written}};
}

json error_json(const std::exception& e) {
    json j;
    if (const auto* ce = dynamic_cast<const Error*>(&e)) {
        j["code"] = ce->code();
        if (const auto* d = dynamic_cast<const DivergenceError*>(&e)) j["step"] = d->step();
        if (const auto* d = dynamic_cast<const IntegrationError*>(&e)) j["step"] = d->step();
    } else if (dynamic_cast<const json::exception*>(&e)) {
        j["code"] = "invalid_json";
    } else {
        j["code"] = "internal";
    }
    j["message"] = e.what();
    return {{"error", j}};
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const json::exception*>(&e)) return 2;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
    if (dynamic_cast<const StateError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return 4;
    if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const IntegrationError*>(&e)) return 5;
    return 1;
}

// ---- CLI ---------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App cli{"Continuity-preserving autoencoders for latent dynamics"};
    cli.require_subcommand(1);

    std::string config, out, checkpoint, run_dir;
    std::optional<std::uint64_t> seed;
    auto common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config,-c", config, "run configuration (JSON)");
        if (needs_config) c->required();
        sub->add_option("--seed", seed, "overrides the config seed");
        sub->add_option("--out,-o", out, "output directory");
    };
    auto* gen = cli.add_subcommand("generate", "render a dataset");
    auto* trn = cli.add_subcommand("train", "train a model");
    auto* evl = cli.add_subcommand("eval", "evaluate a checkpoint");
    auto* dia = cli.add_subcommand("diagnose", "continuity diagnostics");
    auto* swp = cli.add_subcommand("sweep", "regularization weight sweep");
    auto* plt = cli.add_subcommand("plot", "render SVG plots for a run directory");
    for (auto* s : {gen, trn, evl, dia, swp}) common(s, true);
    common(plt, false);
    evl->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out>/checkpoint.json)");
    plt->add_option("--run", run_dir, "run directory (default: --out)");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return cli.exit(e);
    }

    try {
        auto* sub = cli.get_subcommands().front();
        const std::string name = sub->get_name();
        std::optional<RunConfig> cfg;
        if (!config.empty()) cfg = load_run_config(config, seed);

        fs::path out_dir;
        if (!out.empty())
            out_dir = out;
        else if (cfg && cfg->out)
            out_dir = *cfg->out;
        else {
            const char* root = std::getenv("CPAE_OUT_ROOT");
            out_dir = fs::path(root && *root ? root : "runs") / (name + "-" + std::to_string(cfg ? cfg->seed : 0));
        }

        json result;
        if (name == "generate")
            result = cmd_generate(*cfg, out_dir);
        else if (name == "train")
            result = cmd_train(*cfg, out_dir);
        else if (name == "eval")
            result = cmd_eval(*cfg, checkpoint.empty() ? out_dir / "checkpoint.json" : fs::path(checkpoint), out_dir);
        else if (name == "diagnose")
            result = cmd_diagnose(*cfg, out_dir);
        else if (name == "sweep")
            result = cmd_sweep(*cfg, out_dir);
        else
            result = cmd_plot(run_dir.empty() ? out_dir : fs::path(run_dir));
        std::cout << result.dump(2) << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << error_json(e).dump() << "\n";
        return exit_code(e);
    }
}

}  // namespace cpae::app
