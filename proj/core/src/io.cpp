#include "cpae/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace cpae::io {

using json = nlohmann::json;

// ---- PNG -------------------------------------------------------------------

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void write_png(const fs::path& path, const scene::PixelImage& img) {
    if (img.channels != 1 && img.channels != 3) throw IoError("PNG frames must have 1 or 3 channels");
    const int s = img.size;
    std::vector<unsigned char> buf(static_cast<std::size_t>(s) * s * img.channels);
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c)
            for (int k = 0; k < img.channels; ++k)
                buf[(static_cast<std::size_t>(r) * s + c) * img.channels + k] =
                    static_cast<unsigned char>(std::lround(std::clamp(img.at(k, r, c), 0.0, 1.0) * 255.0));
    png_image im{};
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(s);
    im.height = static_cast<png_uint_32>(s);
    im.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write " + path.string() + ": " + im.message);
}

scene::PixelImage read_png(const fs::path& path) {
    png_image im{};
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.c_str())) throw IoError("cannot read " + path.string() + ": " + im.message);
    const bool color = (im.format & PNG_FORMAT_FLAG_COLOR) != 0;
    im.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const int ch = color ? 3 : 1;
    if (im.width != im.height) {
        png_image_free(&im);
        throw IoError(path.string() + " is not square");
    }
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr))
        throw IoError("cannot decode " + path.string() + ": " + im.message);
    const int s = static_cast<int>(im.width);
    scene::PixelImage img(ch, s);
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c)
            for (int k = 0; k < ch; ++k) img.at(k, r, c) = buf[(static_cast<std::size_t>(r) * s + c) * ch + k] / 255.0;
    return img;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

// ---- manifest --------------------------------------------------------------

namespace {

json parse(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(what + ": " + e.what());
    }
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError("missing key '" + std::string(key) + "' in " + where);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

std::string render_name(scene::RenderMode m) { return m == scene::RenderMode::binary ? "binary" : "soft"; }

scene::RenderMode parse_render(const std::string& s) {
    if (s == "binary") return scene::RenderMode::binary;
    if (s == "soft") return scene::RenderMode::soft;
    throw ConfigError("unknown render mode '" + s + "'");
}

std::string frame_dir(int m) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "traj_%04d", m);
    return buf;
}

std::string frame_name(int n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04d.png", n);
    return buf;
}

}  // namespace

void DatasetManifest::validate() const {
    if (format_version != 1) throw ConfigError("unsupported manifest version " + std::to_string(format_version));
    if (trajectories < 1) throw ConfigError("number of trajectories M must be >= 1");
    if (frames < 2) throw ConfigError("frames per trajectory must be >= 2");
    if (resolution < 2) throw ConfigError("resolution must be >= 2");
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    if (channels == 3 && render == scene::RenderMode::binary) throw ConfigError("binary rendering is grayscale only");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be > 0");
    if (supersample < 1 || substeps < 1) throw ConfigError("supersample and substeps must be >= 1");
    for (double f : {train_fraction, val_fraction, test_fraction})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0,1]");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    const sim::DynamicalSystem sys(system, params);
    if (!initial_state.empty() && static_cast<int>(initial_state.size()) != sys.dim())
        throw ConfigError("initial_state has dimension " + std::to_string(initial_state.size()) + ", system needs " +
                          std::to_string(sys.dim()));
}

std::string DatasetManifest::to_json() const {
    json j;
    j["format_version"] = format_version;
    j["system"] = sim::to_string(system);
    sim::Params merged = sim::default_params(system);
    for (const auto& [k, v] : params) merged[k] = v;
    j["params"] = merged;
    j["dt"] = dt;
    j["frames"] = frames;
    j["trajectories"] = trajectories;
    j["resolution"] = resolution;
    j["channels"] = channels;
    j["render"] = render_name(render);
    j["supersample"] = supersample;
    j["substeps"] = substeps;
    j["seed"] = seed;
    j["split"] = {{"train", train_fraction}, {"val", val_fraction}, {"test", test_fraction}};
    j["states"] = states;
    j["initial_state"] = initial_state;
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    const json j = parse(text, "manifest");
    const std::string w = "manifest";
    reject_unknown(j, {"format_version", "system", "params", "dt", "frames", "trajectories", "resolution", "channels",
                       "render", "supersample", "substeps", "seed", "split", "states", "initial_state"},
                   w);
    DatasetManifest m;
    m.format_version = get<int>(j, "format_version", w);
    m.system = sim::parse_system(get<std::string>(j, "system", w));
    m.params = get<sim::Params>(j, "params", w);
    m.dt = get<double>(j, "dt", w);
    m.frames = get<int>(j, "frames", w);
    m.trajectories = get<int>(j, "trajectories", w);
    m.resolution = get<int>(j, "resolution", w);
    m.channels = get<int>(j, "channels", w);
    m.render = parse_render(get<std::string>(j, "render", w));
    m.supersample = get<int>(j, "supersample", w);
    m.substeps = get<int>(j, "substeps", w);
    m.seed = get<std::uint64_t>(j, "seed", w);
    const json& s = j.at("split");
    reject_unknown(s, {"train", "val", "test"}, "manifest.split");
    m.train_fraction = get<double>(s, "train", "manifest.split");
    m.val_fraction = get<double>(s, "val", "manifest.split");
    m.test_fraction = get<double>(s, "test", "manifest.split");
    m.states = get<bool>(j, "states", w);
    m.initial_state = get<std::vector<double>>(j, "initial_state", w);
    m.validate();
    return m;
}

RenderedDataset render_dataset(const DatasetManifest& m) {
    m.validate();
    const sim::DynamicalSystem sys(m.system, m.params);
    Rng rng(m.seed);
    scene::RenderOptions ro;
    ro.resolution = m.resolution;
    ro.mode = m.render;
    ro.soft.supersample = m.supersample;
    ro.soft.channels = m.channels;
    RenderedDataset out;
    for (int t = 0; t < m.trajectories; ++t) {
        const sim::State z0 = m.initial_state.empty() ? sys.sample_initial(rng) : m.initial_state;
        auto traj = sim::integrate(sys, z0, m.dt, m.frames - 1, m.substeps);
        std::vector<scene::SceneState> scenes;
        for (const auto& z : traj.states) scenes.push_back(sys.scene(z));
        out.frames.push_back(scene::render_trajectory(scenes, ro));
        out.states.push_back(std::move(traj));
    }
    return out;
}

void write_dataset(const DatasetManifest& m, const RenderedDataset& data, const fs::path& dir) {
    m.validate();
    if (static_cast<int>(data.frames.size()) != m.trajectories) throw StateError("rendered data does not match manifest");
    fs::create_directories(dir);
    for (int t = 0; t < m.trajectories; ++t) {
        const fs::path td = dir / frame_dir(t);
        fs::create_directories(td);
        const auto& seq = data.frames[static_cast<std::size_t>(t)];
        for (std::size_t n = 0; n < seq.size(); ++n) write_png(td / frame_name(static_cast<int>(n)), seq[n]);
        if (m.states) {
            std::ostringstream csv;
            csv.precision(17);
            const auto& st = data.states[static_cast<std::size_t>(t)].states;
            csv << "t";
            for (std::size_t k = 0; k < st.front().size(); ++k) csv << ",z" << k;
            csv << "\n";
            for (std::size_t n = 0; n < st.size(); ++n) {
                csv << static_cast<double>(n) * m.dt;
                for (double v : st[n]) csv << "," << v;
                csv << "\n";
            }
            write_text(td / "states.csv", csv.str());
        }
    }
    write_text(dir / "manifest.json", m.to_json());
}

void generate_dataset(const DatasetManifest& m, const fs::path& dir) {
    m.validate();
    write_dataset(m, render_dataset(m), dir);
}

LoadedDataset load_dataset(const fs::path& dir) {
    LoadedDataset out;
    out.manifest = DatasetManifest::from_json(read_text(dir / "manifest.json"));
    const auto& m = out.manifest;
    for (int t = 0; t < m.trajectories; ++t) {
        const fs::path td = dir / frame_dir(t);
        scene::ImageSequence seq;
        for (int n = 0; n < m.frames; ++n) {
            const fs::path p = td / frame_name(n);
            if (!fs::exists(p)) throw IoError("missing frame " + p.string());
            seq.push_back(read_png(p));
            if (seq.back().size != m.resolution || seq.back().channels != m.channels)
                throw IoError(p.string() + " does not match the manifest resolution/channels");
        }
        if (fs::exists(td / frame_name(m.frames))) throw IoError(td.string() + " holds more frames than the manifest");
        out.video.trajectories.push_back(train::to_tensor(seq));
        if (m.states) {
            std::istringstream in(read_text(td / "states.csv"));
            std::string line;
            std::getline(in, line);
            std::vector<std::vector<double>> rows;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::vector<double> row;
                std::stringstream ls(line);
                std::string cell;
                bool first = true;
                while (std::getline(ls, cell, ',')) {
                    if (!first) row.push_back(std::stod(cell));
                    first = false;
                }
                rows.push_back(std::move(row));
            }
            if (static_cast<int>(rows.size()) != m.frames) throw IoError("states.csv row count does not match frames");
            out.states.push_back(std::move(rows));
        }
    }
    return out;
}

// ---- models ----------------------------------------------------------------

namespace {

json arr2(std::array<int, 2> a) { return json::array({a[0], a[1]}); }
std::array<int, 2> arr2(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

json arch_json(const ae::Architecture& a) {
    json enc;
    enc["in_channels"] = a.encoder.in_channels;
    enc["in_size"] = arr2(a.encoder.in_size);
    enc["latent_dim"] = a.encoder.latent_dim;
    enc["regularized_layers"] = a.encoder.regularized_layers;
    enc["layers"] = json::array();
    for (const auto& l : a.encoder.layers)
        enc["layers"].push_back({{"kernel", arr2(l.kernel)},
                                 {"stride", arr2(l.stride)},
                                 {"out_channels", l.out_channels},
                                 {"padding", arr2(l.padding)},
                                 {"follow_up", l.follow_up},
                                 {"batch_norm", l.batch_norm},
                                 {"relu", l.relu}});
    json dec;
    dec["latent_dim"] = a.decoder.latent_dim;
    dec["image_channels"] = a.decoder.image_channels;
    dec["base_channels"] = a.decoder.base_channels;
    dec["base_size"] = arr2(a.decoder.base_size);
    dec["multiscale"] = a.decoder.multiscale;
    dec["layers"] = json::array();
    for (const auto& l : a.decoder.layers)
        dec["layers"].push_back({{"kernel", arr2(l.kernel)},
                                 {"stride", arr2(l.stride)},
                                 {"out_channels", l.out_channels},
                                 {"padding", arr2(l.padding)},
                                 {"batch_norm", l.batch_norm}});
    return {{"name", a.name}, {"encoder", enc}, {"decoder", dec}};
}

ae::Architecture arch_from(const json& j) {
    try {
        ae::Architecture a;
        a.name = j.at("name").get<std::string>();
        const json& e = j.at("encoder");
        a.encoder.in_channels = e.at("in_channels").get<int>();
        a.encoder.in_size = arr2(e.at("in_size"));
        a.encoder.latent_dim = e.at("latent_dim").get<int>();
        a.encoder.regularized_layers = e.at("regularized_layers").get<std::vector<int>>();
        for (const auto& l : e.at("layers")) {
            ae::ConvLayerSpec s;
            s.kernel = arr2(l.at("kernel"));
            s.stride = arr2(l.at("stride"));
            s.out_channels = l.at("out_channels").get<int>();
            s.padding = arr2(l.at("padding"));
            s.follow_up = l.at("follow_up").get<bool>();
            s.batch_norm = l.at("batch_norm").get<bool>();
            s.relu = l.at("relu").get<bool>();
            a.encoder.layers.push_back(s);
        }
        const json& d = j.at("decoder");
        a.decoder.latent_dim = d.at("latent_dim").get<int>();
        a.decoder.image_channels = d.at("image_channels").get<int>();
        a.decoder.base_channels = d.at("base_channels").get<int>();
        a.decoder.base_size = arr2(d.at("base_size"));
        a.decoder.multiscale = d.at("multiscale").get<bool>();
        for (const auto& l : d.at("layers")) {
            ae::DeconvLayerSpec s;
            s.kernel = arr2(l.at("kernel"));
            s.stride = arr2(l.at("stride"));
            s.out_channels = l.at("out_channels").get<int>();
            s.padding = arr2(l.at("padding"));
            s.batch_norm = l.at("batch_norm").get<bool>();
            a.decoder.layers.push_back(s);
        }
        return a;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed architecture: ") + e.what());
    }
}

json flow_json(const lat::FlowConfig& f) {
    return {{"kind", lat::to_string(f.kind)}, {"latent_dim", f.latent_dim}, {"dt", f.dt}, {"hidden", f.hidden},
            {"layers", f.layers}};
}

lat::FlowConfig flow_from(const json& j) {
    try {
        lat::FlowConfig f;
        f.kind = lat::parse_flow_kind(j.at("kind").get<std::string>());
        f.latent_dim = j.at("latent_dim").get<int>();
        f.dt = j.at("dt").get<double>();
        f.hidden = j.at("hidden").get<std::vector<int>>();
        f.layers = j.at("layers").get<int>();
        return f;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed flow config: ") + e.what());
    }
}

json dense_json(const fnn::DenseSpec& d) {
    return {{"image", {d.image[0], d.image[1], d.image[2]}},
            {"hidden", d.hidden},
            {"latent_dim", d.latent_dim},
            {"activation", nn::to_string(d.activation)}};
}

fnn::DenseSpec dense_from(const json& j) {
    try {
        fnn::DenseSpec d;
        const auto im = j.at("image").get<std::vector<int>>();
        if (im.size() != 3) throw IoError("dense image shape must have 3 entries");
        d.image = {im[0], im[1], im[2]};
        d.hidden = j.at("hidden").get<std::vector<int>>();
        d.latent_dim = j.at("latent_dim").get<int>();
        d.activation = nn::parse_activation(j.at("activation").get<std::string>());
        return d;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed dense spec: ") + e.what());
    }
}

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.vec()}}; }

void load_tensor(const json& j, Tensor& dst, const std::string& name) {
    const auto shape = j.at("shape").get<Shape>();
    if (shape != dst.shape())
        throw IoError("checkpoint entry '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                      shape_str(dst.shape()));
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != dst.size()) throw IoError("checkpoint entry '" + name + "' has the wrong length");
    dst = Tensor(shape, std::move(data));
}

}  // namespace

std::string architecture_to_json(const ae::Architecture& a) { return arch_json(a).dump(2); }
ae::Architecture architecture_from_json(const std::string& text) { return arch_from(parse(text, "architecture")); }

std::vector<NamedParam> Models::params() {
    std::vector<NamedParam> p;
    codec->collect(p);
    flow.collect("flow", p);
    if (vp) vp->collect("vp", p);
    return p;
}

std::vector<NamedBuffer> Models::buffers() {
    std::vector<NamedBuffer> b;
    codec->collect_buffers(b);
    return b;
}

Models build_models(const ModelSpec& spec) {
    Models m;
    m.spec = spec;
    Rng rng(spec.seed);
    if (spec.codec == CodecKind::conv) m.codec = std::make_unique<ae::ConvAutoencoder>(spec.arch, rng);
    else m.codec = std::make_unique<fnn::DenseAutoencoder>(spec.dense, rng);
    if (spec.flow.latent_dim != m.codec->latent_dim()) throw ConfigError("flow latent dimension differs from the codec");
    m.flow = lat::FlowModel(spec.flow, rng);
    if (spec.vp) {
        if (spec.vp->kind != lat::FlowKind::vpnet) throw ConfigError("stage-1 regularizer must be a vpnet");
        m.vp = lat::FlowModel(*spec.vp, rng);
    }
    return m;
}

void save_checkpoint(const fs::path& path, Models& m) {
    json j;
    j["format"] = "cpae-checkpoint";
    j["version"] = kCheckpointVersion;
    j["seed"] = m.spec.seed;
    j["codec"] = m.spec.codec == CodecKind::conv ? "conv" : "fnn";
    if (m.spec.codec == CodecKind::conv) j["architecture"] = arch_json(m.spec.arch);
    else j["dense"] = dense_json(m.spec.dense);
    j["flow"] = flow_json(m.spec.flow);
    j["vp"] = m.spec.vp ? flow_json(*m.spec.vp) : json(nullptr);
    json params = json::object();
    for (const auto& p : m.params()) params[p.name] = tensor_json(p.var->value());
    json buffers = json::object();
    for (const auto& b : m.buffers()) buffers[b.name] = tensor_json(*b.tensor);
    j["params"] = std::move(params);
    j["buffers"] = std::move(buffers);
    write_text(path, j.dump() + "\n");
}

Models load_checkpoint(const fs::path& path) {
    const json j = parse(read_text(path), path.string());
    try {
        if (j.at("format").get<std::string>() != "cpae-checkpoint") throw IoError(path.string() + " is not a checkpoint");
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
        ModelSpec spec;
        spec.seed = j.at("seed").get<std::uint64_t>();
        const std::string codec = j.at("codec").get<std::string>();
        if (codec == "conv") {
            spec.codec = CodecKind::conv;
            spec.arch = arch_from(j.at("architecture"));
        } else if (codec == "fnn") {
            spec.codec = CodecKind::fnn;
            spec.dense = dense_from(j.at("dense"));
        } else {
            throw IoError("unknown codec '" + codec + "'");
        }
        spec.flow = flow_from(j.at("flow"));
        if (!j.at("vp").is_null()) spec.vp = flow_from(j.at("vp"));
        Models m = build_models(spec);
        const json& params = j.at("params");
        for (auto& p : m.params()) {
            if (!params.contains(p.name)) throw IoError("checkpoint lacks parameter '" + p.name + "'");
            load_tensor(params.at(p.name), p.var->mutable_value(), p.name);
        }
        const json& buffers = j.at("buffers");
        for (auto& b : m.buffers()) {
            if (!buffers.contains(b.name)) throw IoError("checkpoint lacks buffer '" + b.name + "'");
            load_tensor(buffers.at(b.name), *b.tensor, b.name);
        }
        return m;
    } catch (const json::exception& e) {
        throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
    }
}

}  // namespace cpae::io
