#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include <unistd.h>

#include "app.hpp"
#include "cpae/error.hpp"

using namespace cpae;
using namespace cpae::app;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("cpae_app_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

json tiny_config() {
    return json::parse(R"({
      "seed": 3,
      "dataset": {"generate": {"system": "circular_motion", "frames": 12, "trajectories": 1,
                               "resolution": 16, "dt": 0.3, "supersample": 2}},
      "split": {"mode": "frames", "train_frames": 8},
      "architecture": {"preset": "single_layer", "latent_dim": 2},
      "model": {"kind": "neural_ode", "hidden": [8]},
      "train": {"epochs": 3, "batch_size": 4},
      "stage2": {"epochs": 3, "batch_size": 4},
      "continuity": {"lambda_J": 0.5, "sigma": "inf"},
      "eval": {"epsilon": 0.01}
    })");
}

int run_cli(std::vector<std::string> args) {
    std::vector<char*> argv;
    static std::string prog = "cpae";
    argv.push_back(prog.data());
    for (auto& a : args) argv.push_back(a.data());
    return cpae::app::main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("run config: defaults, overrides and strictness") {
    const auto c = parse_run_config(tiny_config());
    CHECK(c.seed == 3);
    CHECK(c.generate->seed == 3);  // inherited
    CHECK(c.model.dt == 0.3);      // from the dataset
    CHECK(std::isinf(c.train.kernel.sigma));
    CHECK(c.train.kernel.lambda_j == 0.5);
    CHECK(c.split == SplitMode::frames);
    CHECK(c.pipeline == Pipeline::cpae);

    for (const char* bad : {R"({"sed": 1})", R"({"train": {"epoch": 3}})", R"({"continuity": {"sigma": "wide"}})",
                            R"({"split": {"mode": "random"}})", R"({"pipeline": "three_stage"})",
                            R"({"dataset": {"generate": {"system": "bar", "colour": 2}}})",
                            R"({"dataset": {"path": "a", "generate": {"system": "bar"}}})",
                            R"({"train": {"epochs": "many"}})", R"({"model": {"kind": "hnn"}, "architecture": {"latent_dim": 3}})",
                            R"({"dataset": {"generate": {"system": "bar", "trajectories": 0}}})"}) {
        CAPTURE(bad);
        CHECK_THROWS_AS(parse_run_config(json::parse(bad)), ConfigError);
    }
}

TEST_CASE("frames split trains on the prefix and evaluates from its last frame") {
    const auto c = parse_run_config(tiny_config());
    const auto d = prepare_data(c);
    CHECK(d.video.trajectories[0].dim(0) == 12);
    CHECK(d.train_video.trajectories[0].dim(0) == 8);
    CHECK(d.eval_start == 7);
    CHECK(d.eval_ids == std::vector<int>{0});
}

TEST_CASE("train then eval through the commands; reruns are identical") {
    TempDir t("e2e");
    const auto c = parse_run_config(tiny_config());
    cmd_train(c, t.path / "a");
    cmd_train(c, t.path / "b");
    for (const char* f : {"checkpoint.json", "history.json", "config.json"}) {
        CHECK(fs::exists(t.path / "a" / f));
        CHECK(io::read_text(t.path / "a" / f) == io::read_text(t.path / "b" / f));
    }
    CHECK_FALSE(fs::exists(t.path / "a" / ".lock"));
    const auto r = cmd_eval(c, t.path / "a" / "checkpoint.json", t.path / "a");
    cmd_eval(c, t.path / "b" / "checkpoint.json", t.path / "b");
    CHECK(io::read_text(t.path / "a" / "report.json") == io::read_text(t.path / "b" / "report.json"));
    CHECK(r.at("trajectories").size() == 1);
    CHECK(r.at("trajectories")[0].at("pmse").size() == 4);
    CHECK(r.at("model") == "cpae+neural_ode");
    const std::string table = io::read_text(t.path / "a" / "table.csv");
    CHECK(table.rfind("dataset,model,vpt,vpt_mean,vpt_std,vpf\ncircular_motion,cpae+neural_ode,", 0) == 0);
    const auto p = cmd_plot(t.path / "a");
    CHECK(p.at("written").size() == 3);
    CHECK(fs::exists(t.path / "a" / "loss.svg"));
}

TEST_CASE("joint pipeline and dense codec") {
    TempDir t("joint");
    json j = tiny_config();
    j["pipeline"] = "joint";
    j["architecture"] = json::parse(R"({"fnn": {"hidden": [16]}, "latent_dim": 2})");
    const auto c = parse_run_config(j);
    cmd_train(c, t.path);
    const auto r = cmd_eval(c, t.path / "checkpoint.json", t.path);
    CHECK(r.at("model") == "fnn+neural_ode");
    CHECK_FALSE(r.contains("lipschitz_first_layer"));
}

TEST_CASE("sweep covers the grid") {
    TempDir t("sweep");
    json j = tiny_config();
    j["sweep"] = json::parse(R"({"lambda_J": [0, 1], "sigma": [1, "inf"]})");
    const auto s = cmd_sweep(parse_run_config(j), t.path);
    CHECK(s.at("points").size() == 4);
    CHECK(s.at("points")[1].at("sigma").is_null());
    CHECK(fs::exists(t.path / "summary.csv"));
    CHECK(fs::exists(t.path / "sweep.svg"));
}

TEST_CASE("diagnose writes profiles and plots") {
    TempDir t("diag");
    json j = json::parse(R"({"seed": 1, "diagnostics": {
        "bar": {"delta": 0.015625, "bar_width": 0.0625, "trials": 5, "mode": "smoothed"},
        "profile": {"resolutions": [16, 32], "trials": 1, "steps": 3, "channels": 2},
        "theorem1": {"l_stars": [1, 2], "resolution": 32, "perturbations": 2, "kernel": 4, "channels": 2,
                     "translation": 0.03125}}})");
    cmd_diagnose(parse_run_config(j), t.path);
    for (const char* f : {"bar.json", "bar.svg", "profile.json", "profile.svg", "theorem1.json", "theorem1.svg"})
        CHECK(fs::exists(t.path / f));
    CHECK_THROWS_AS(cmd_diagnose(parse_run_config(json::parse("{}")), t.path / "x"), ConfigError);
}

TEST_CASE("generate with M = 0 fails and writes nothing") {
    TempDir t("gen0");
    json j = json::parse(R"({"dataset": {"generate": {"system": "circular_motion", "trajectories": 1}}})");
    j["dataset"]["generate"]["trajectories"] = 0;
    CHECK_THROWS_AS(parse_run_config(j), ConfigError);
    io::write_text(t.path / "cfg.json", j.dump());
    CHECK(run_cli({"generate", "--config", (t.path / "cfg.json").string(), "--out", (t.path / "ds").string()}) == 2);
    CHECK_FALSE(fs::exists(t.path / "ds"));
}

TEST_CASE("CLI generate honours --seed and produces the documented layout") {
    TempDir t("gen");
    json j = json::parse(R"({"dataset": {"generate": {"system": "circular_motion", "frames": 5, "resolution": 16}}})");
    io::write_text(t.path / "cfg.json", j.dump());
    CHECK(run_cli({"generate", "-c", (t.path / "cfg.json").string(), "--seed", "9", "-o", (t.path / "ds").string()}) == 0);
    const auto m = io::DatasetManifest::from_json(io::read_text(t.path / "ds" / "manifest.json"));
    CHECK(m.seed == 9);
    CHECK(fs::exists(t.path / "ds" / "traj_0000" / "frame_0004.png"));
    CHECK(run_cli({"eval", "-c", (t.path / "cfg.json").string(), "-o", (t.path / "none").string()}) == 3);
}

TEST_CASE("error documents and exit codes") {
    CHECK(exit_code(ConfigError("x")) == 2);
    CHECK(exit_code(IoError("x")) == 3);
    CHECK(exit_code(StateError("x")) == 4);
    CHECK(exit_code(DivergenceError("x", 3)) == 5);
    CHECK(exit_code(std::runtime_error("x")) == 1);
    const json e = error_json(DivergenceError("blew up", 7));
    CHECK(e.at("error").at("code") == "diverged");
    CHECK(e.at("error").at("step") == 7);
    CHECK(e.at("error").at("message") == "blew up");
}

TEST_CASE("a run directory has a single owner") {
    TempDir t("lock");
    {
        RunLock a(t.path);
        CHECK_THROWS_AS(RunLock(t.path), StateError);
    }
    CHECK_NOTHROW(RunLock(t.path));
}
