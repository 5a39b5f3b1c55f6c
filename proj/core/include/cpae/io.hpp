#pragma once

// On-disk formats: 8-bit PNG frames, dataset directories (manifest.json,
// per-trajectory frame folders, states.csv) and model checkpoints.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cpae/autoencoder.hpp"
#include "cpae/fnn_baseline.hpp"
#include "cpae/latent_models.hpp"
#include "cpae/simulators.hpp"
#include "cpae/training.hpp"

namespace cpae::io {

namespace fs = std::filesystem;

// Grayscale or RGB, values rounded to the nearest of 256 levels.
void write_png(const fs::path& path, const scene::PixelImage& img);
// Square images only; throws IoError otherwise.
scene::PixelImage read_png(const fs::path& path);
double quantize(double v);

struct DatasetManifest {
    int format_version = 1;
    sim::SystemId system = sim::SystemId::damped_pendulum;
    sim::Params params;  // overrides merged with defaults on write
    double dt = 0.05;
    int frames = 30;  // per trajectory, including the initial frame
    int trajectories = 1;
    int resolution = 64;
    int channels = 1;
    scene::RenderMode render = scene::RenderMode::soft;
    int supersample = 8;
    int substeps = 10;
    std::uint64_t seed = 0;
    double train_fraction = 0.8, val_fraction = 0.1, test_fraction = 0.1;
    bool states = true;
    std::vector<double> initial_state;  // fixes z0 for every trajectory when set

    void validate() const;
    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

struct RenderedDataset {
    std::vector<sim::StateTrajectory> states;
    std::vector<scene::ImageSequence> frames;
};

// In-memory simulation and rendering, deterministic in the manifest.
RenderedDataset render_dataset(const DatasetManifest& m);

// Validates first, then writes into `dir` (created if missing).
void write_dataset(const DatasetManifest& m, const RenderedDataset& data, const fs::path& dir);
void generate_dataset(const DatasetManifest& m, const fs::path& dir);

struct LoadedDataset {
    DatasetManifest manifest;
    train::VideoDataset video;
    std::vector<std::vector<std::vector<double>>> states;  // empty without sidecar
};

LoadedDataset load_dataset(const fs::path& dir);

std::string read_text(const fs::path& path);
// Writes via a temporary file and rename.
void write_text(const fs::path& path, const std::string& text);

// ---- models ----------------------------------------------------------------

enum class CodecKind { conv, fnn };

struct ModelSpec {
    CodecKind codec = CodecKind::conv;
    ae::Architecture arch;
    fnn::DenseSpec dense;
    lat::FlowConfig flow;
    std::optional<lat::FlowConfig> vp;  // stage-1 regularizer net
    std::uint64_t seed = 0;
};

struct Models {
    ModelSpec spec;
    std::unique_ptr<ae::Codec> codec;
    lat::FlowModel flow;
    std::optional<lat::FlowModel> vp;

    std::vector<NamedParam> params();
    std::vector<NamedBuffer> buffers();
};

// Initializes every network from spec.seed.
Models build_models(const ModelSpec& spec);

std::string architecture_to_json(const ae::Architecture& a);
ae::Architecture architecture_from_json(const std::string& text);

constexpr int kCheckpointVersion = 1;
void save_checkpoint(const fs::path& path, Models& m);
Models load_checkpoint(const fs::path& path);

}  // namespace cpae::io
