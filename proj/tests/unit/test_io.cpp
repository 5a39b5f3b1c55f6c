#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "cpae/io.hpp"
#include "support.hpp"

using namespace cpae;
using namespace cpae::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("cpae_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

io::DatasetManifest small_manifest() {
    io::DatasetManifest m;
    m.system = sim::SystemId::damped_pendulum;
    m.frames = 4;
    m.trajectories = 3;
    m.resolution = 16;
    m.supersample = 2;
    m.seed = 17;
    return m;
}

}  // namespace

TEST_CASE("PNG round trip within 8-bit quantization") {
    TempDir d("png");
    Rng rng(91);
    for (int ch : {1, 3}) {
        scene::PixelImage img(ch, 12);
        for (double& v : img.data) v = rng.uniform();
        io::write_png(d.path / "a.png", img);
        const auto back = io::read_png(d.path / "a.png");
        REQUIRE(back.channels == ch);
        REQUIRE(back.size == 12);
        for (std::size_t i = 0; i < img.data.size(); ++i) {
            CHECK(std::abs(back.data[i] - img.data[i]) <= 1.0 / 510 + 1e-12);
            CHECK(back.data[i] == io::quantize(img.data[i]));
        }
    }
    CHECK_THROWS_AS(io::read_png(d.path / "missing.png"), IoError);
}

TEST_CASE("manifest JSON round trip and strictness") {
    auto m = small_manifest();
    m.params = {{"k", 0.5}};
    const auto back = io::DatasetManifest::from_json(m.to_json());
    CHECK(back.to_json() == m.to_json());
    CHECK(back.params.at("k") == 0.5);
    CHECK(back.params.count("g") == 1);  // defaults are written out
    std::string bad = m.to_json();
    bad.insert(1, "\"colour\": 1,");
    CHECK_THROWS_AS(io::DatasetManifest::from_json(bad), ConfigError);
    CHECK_THROWS_AS(io::DatasetManifest::from_json("{"), IoError);
    m.trajectories = 0;
    CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("generate writes N*M frames and reloads within quantization") {
    TempDir d("gen");
    const auto m = small_manifest();
    const auto rendered = io::render_dataset(m);
    io::write_dataset(m, rendered, d.path / "ds");
    int pngs = 0;
    for (const auto& e : fs::recursive_directory_iterator(d.path / "ds")) pngs += e.path().extension() == ".png";
    CHECK(pngs == 12);
    CHECK(fs::exists(d.path / "ds" / "traj_0002" / "states.csv"));
    const auto loaded = io::load_dataset(d.path / "ds");
    REQUIRE(loaded.video.size() == 3);
    for (int t = 0; t < 3; ++t) {
        const Tensor ref = train::to_tensor(rendered.frames[static_cast<std::size_t>(t)]);
        const Tensor& got = loaded.video.trajectories[static_cast<std::size_t>(t)];
        REQUIRE(got.shape() == ref.shape());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref[i]) <= 1.0 / 510 + 1e-12);
    }
    REQUIRE(loaded.states.size() == 3);
    CHECK(loaded.states[1][2] == rendered.states[1].states[2]);
}

TEST_CASE("regenerating with the same seed is byte-identical") {
    TempDir d("regen");
    const auto m = small_manifest();
    io::generate_dataset(m, d.path / "a");
    io::generate_dataset(m, d.path / "b");
    for (const auto& e : fs::recursive_directory_iterator(d.path / "a")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), d.path / "a");
        CHECK(io::read_text(e.path()) == io::read_text(d.path / "b" / rel));
    }
}

TEST_CASE("an invalid manifest writes nothing") {
    TempDir d("invalid");
    auto m = small_manifest();
    m.trajectories = 0;
    CHECK_THROWS_AS(io::generate_dataset(m, d.path / "x"), ConfigError);
    CHECK_FALSE(fs::exists(d.path / "x"));
}

TEST_CASE("a missing frame is an I/O error") {
    TempDir d("missing");
    const auto m = small_manifest();
    io::generate_dataset(m, d.path / "ds");
    fs::remove(d.path / "ds" / "traj_0001" / "frame_0002.png");
    CHECK_THROWS_AS(io::load_dataset(d.path / "ds"), IoError);
}

TEST_CASE("checkpoint round trip reproduces the validation loss exactly") {
    TempDir d("ckpt");
    const auto m = small_manifest();
    const auto video = train::make_dataset(io::render_dataset(m).frames);
    const train::PairDataset pairs(video, {0, 1, 2});
    for (bool dense : {false, true}) {
        io::ModelSpec spec;
        spec.seed = 5;
        if (dense) {
            spec.codec = io::CodecKind::fnn;
            spec.dense.image = {1, 16, 16};
            spec.dense.hidden = {12};
        } else {
            spec.arch = ae::preset("desk_cpae", 16, 1, 2);
        }
        spec.flow.hidden = {6};
        lat::FlowConfig vp;
        vp.kind = lat::FlowKind::vpnet;
        spec.vp = vp;
        auto models = io::build_models(spec);
        train::TrainConfig c;
        c.epochs = 2;
        c.batch_size = 4;
        train::train_cpae_stage1(pairs, nullptr, *models.codec, *models.vp, c);  // moves BN statistics too
        const double before = train::cpae_loss(pairs, *models.codec, *models.vp, c);
        const double before_joint = train::joint_loss(pairs, *models.codec, models.flow, c);
        io::save_checkpoint(d.path / "m.json", models);
        auto back = io::load_checkpoint(d.path / "m.json");
        CHECK(train::cpae_loss(pairs, *back.codec, *back.vp, c) == before);
        CHECK(train::joint_loss(pairs, *back.codec, back.flow, c) == before_joint);
        CHECK(checksum(back.params()) == checksum(models.params()));
    }
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir d("bad");
    io::write_text(d.path / "x.json", "{\"format\": \"cpae-checkpoint\", \"version\": 99}");
    CHECK_THROWS(io::load_checkpoint(d.path / "x.json"));
    io::write_text(d.path / "y.json", "not json");
    CHECK_THROWS_AS(io::load_checkpoint(d.path / "y.json"), IoError);
}

TEST_CASE("architecture JSON round trip") {
    for (const auto& name : ae::preset_names()) {
        const auto a = ae::preset(name, name.rfind("paper", 0) == 0 ? 128 : 32, 1, 3);
        CHECK(io::architecture_to_json(io::architecture_from_json(io::architecture_to_json(a))) == io::architecture_to_json(a));
    }
}
