#pragma once

// Run configuration, the train/eval pipeline and the CLI subcommands.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cpae/diagnostics.hpp"
#include "cpae/evaluation.hpp"
#include "cpae/io.hpp"
#include "cpae/training.hpp"

namespace cpae::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class SplitMode { trajectories, frames };
enum class Pipeline { cpae, joint };

struct ArchitectureConfig {
    bool dense = false;
    std::string preset = "desk_cpae";
    int latent_dim = 2;
    std::vector<int> hidden{512, 128};  // dense only
    nn::Activation activation = nn::Activation::relu;
    std::optional<std::vector<int>> regularized_layers;
};

struct Stage2Config {
    int epochs = 500;
    double learning_rate = 1e-3;
    int batch_size = 512;
};

struct EvalConfig {
    double epsilon = 0.007;
    double horizon = 1.0;
};

struct SweepConfig {
    std::vector<double> lambda_j, lambda_r, sigma;
};

struct DiagnosticsConfig {
    std::optional<diag::BarOptions> bar;
    std::optional<diag::ProfileOptions> profile;
    std::optional<diag::Theorem1Options> theorem1;
    std::optional<fs::path> latents_checkpoint;  // latent scatter of a trained model
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::optional<fs::path> dataset_path;
    std::optional<io::DatasetManifest> generate;
    SplitMode split = SplitMode::trajectories;
    int train_frames = 0;
    ArchitectureConfig arch;
    lat::FlowConfig model;
    bool model_dt_set = false;
    int vp_layers = 3;
    Pipeline pipeline = Pipeline::cpae;
    train::TrainConfig train;
    bool concat_frames = false;
    Stage2Config stage2;
    EvalConfig eval;
    SweepConfig sweep;
    DiagnosticsConfig diagnostics;
    std::optional<fs::path> out;
    json source;  // document as given, echoed into run directories
};

// Strict: unknown keys and wrong types raise ConfigError. Relative dataset
// paths are resolved against `base`.
RunConfig parse_run_config(const json& j, const fs::path& base = {});
RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed = std::nullopt);
io::DatasetManifest parse_manifest_section(const json& j);

struct Prepared {
    io::DatasetManifest manifest;
    train::VideoDataset video;        // full trajectories
    train::VideoDataset train_video;  // frames used for fitting
    train::Split split;               // trajectory ids into both videos
    std::vector<int> eval_ids;
    int eval_start = 0;
};

Prepared prepare_data(const RunConfig& cfg);

struct TrainOutcome {
    io::Models models;
    std::vector<train::History> histories;
    bool diverged = false;
    std::string message;
};

io::ModelSpec model_spec(const RunConfig& cfg, const Prepared& data);
TrainOutcome train_pipeline(const RunConfig& cfg, const Prepared& data);

// Metrics on the evaluation trajectories plus latent smoothness of the
// encoded full sequences.
json evaluate_pipeline(const RunConfig& cfg, const Prepared& data, io::Models& models);

json history_json(const std::vector<train::History>& hs);
std::string table_csv(const json& report);

// Subcommands. Each returns the JSON summary it wrote.
json cmd_generate(const RunConfig& cfg, const fs::path& out);
json cmd_train(const RunConfig& cfg, const fs::path& out);
json cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out);
json cmd_diagnose(const RunConfig& cfg, const fs::path& out);
json cmd_sweep(const RunConfig& cfg, const fs::path& out);
json cmd_plot(const fs::path& run_dir);

// Machine-readable error document.
json error_json(const std::exception& e);
int exit_code(const std::exception& e);

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const fs::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

int main(int argc, char** argv);

}  // namespace cpae::app
