#include "cpae/autoencoder.hpp"

#include <algorithm>

namespace cpae::ae {

using ad::Var;

std::array<int, 3> EncoderSpec::feature_shape(int upto) const {
    int c = in_channels, h = in_size[0], w = in_size[1];
    for (int l = 0; l < upto; ++l) {
        const auto& s = layers.at(static_cast<std::size_t>(l));
        h = ad::conv_out_size(h, s.kernel[0], s.stride[0], s.padding[0]);
        w = ad::conv_out_size(w, s.kernel[1], s.stride[1], s.padding[1]);
        c = s.out_channels;
    }
    return {c, h, w};
}

void EncoderSpec::validate() const {
    if (in_channels < 1 || in_size[0] < 1 || in_size[1] < 1) throw ConfigError("encoder input shape must be positive");
    if (layers.empty()) throw ConfigError("encoder needs at least one layer");
    if (latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
    for (const auto& s : layers) {
        if (s.kernel[0] < 1 || s.kernel[1] < 1) throw ConfigError("filter size must be >= 1");
        if (s.stride[0] < 1 || s.stride[1] < 1) throw ConfigError("stride must be >= 1");
        if (s.padding[0] < 0 || s.padding[1] < 0) throw ConfigError("padding must be >= 0");
        if (s.out_channels < 1) throw ConfigError("channel count must be >= 1");
    }
    for (int l : regularized_layers)
        if (l < 0 || l >= static_cast<int>(layers.size())) throw ConfigError("regularized layer index out of range");
    if (l_star() > static_cast<int>(layers.size()) + 1) throw ConfigError("L* exceeds the number of layers");
    try {
        (void)feature_shape(static_cast<int>(layers.size()));
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("encoder geometry: ") + e.what());
    }
}

std::array<int, 3> DecoderSpec::output_shape() const {
    int h = base_size[0], w = base_size[1];
    int c = base_channels;
    for (const auto& s : layers) {
        h = ad::conv_transpose_out_size(h, s.kernel[0], s.stride[0], s.padding[0]);
        w = ad::conv_transpose_out_size(w, s.kernel[1], s.stride[1], s.padding[1]);
        c = s.out_channels;
    }
    return {c, h, w};
}

void DecoderSpec::validate() const {
    if (latent_dim < 1 || image_channels < 1 || base_channels < 1) throw ConfigError("decoder sizes must be positive");
    if (layers.empty()) throw ConfigError("decoder needs at least one layer");
    if (layers.back().out_channels != image_channels)
        throw ConfigError("last decoder layer must emit the image channel count");
    const auto out = output_shape();
    if (out[1] < 1 || out[2] < 1) throw ConfigError("decoder geometry produces an empty image");
}

namespace {

ConvLayerSpec conv(int k, int s, int ch, int pad, bool follow, bool bn = true) {
    ConvLayerSpec l;
    l.kernel = {k, k};
    l.stride = {s, s};
    l.out_channels = ch;
    l.padding = {pad, pad};
    l.follow_up = follow;
    l.batch_norm = bn;
    return l;
}

DeconvLayerSpec deconv(std::array<int, 2> k, std::array<int, 2> s, int ch, std::array<int, 2> pad) {
    DeconvLayerSpec l;
    l.kernel = k;
    l.stride = s;
    l.out_channels = ch;
    l.padding = pad;
    return l;
}

Architecture paper(bool cpae, int image_size, int channels, int latent_dim) {
    Architecture a;
    a.name = cpae ? "paper_cpae" : "paper_ae";
    auto& e = a.encoder;
    e.in_channels = channels;
    e.in_size = {image_size, 2 * image_size};
    e.latent_dim = latent_dim;
    const int big = cpae ? 12 : 4, big_pad = cpae ? 5 : 1;
    e.layers = {conv(big, 2, 16, big_pad, true), conv(big, 2, 32, big_pad, true), conv(big, 2, 64, big_pad, true)};
    for (int i = 0; i < 4; ++i) e.layers.push_back(conv(4, 2, 64, 1, true));
    ConvLayerSpec last = conv(3, 1, 64, 1, true);
    last.kernel = {3, 4};
    last.stride = {1, 2};
    e.layers.push_back(last);
    e.regularized_layers = {0, 1, 2};

    auto& d = a.decoder;
    d.latent_dim = latent_dim;
    d.image_channels = channels;
    const auto fs = e.feature_shape(static_cast<int>(e.layers.size()));
    d.base_channels = fs[0];
    d.base_size = {fs[1], fs[2]};
    d.layers.push_back(deconv({3, 4}, {1, 2}, 64, {1, 1}));
    for (int ch : {64, 64, 64, 64, 32, 16}) d.layers.push_back(deconv({4, 4}, {2, 2}, ch, {1, 1}));
    d.layers.push_back(deconv({4, 4}, {2, 2}, channels, {1, 1}));
    return a;
}

Architecture desk(bool cpae, int image_size, int channels, int latent_dim) {
    if (image_size % 16 != 0) throw ConfigError("desk presets need an image size divisible by 16");
    Architecture a;
    a.name = cpae ? "desk_cpae" : "desk_ae";
    auto& e = a.encoder;
    e.in_channels = channels;
    e.in_size = {image_size, image_size};
    e.latent_dim = latent_dim;
    const int big = cpae ? 6 : 4, big_pad = cpae ? 2 : 1;
    e.layers = {conv(big, 2, 8, big_pad, false), conv(big, 2, 16, big_pad, false), conv(big, 2, 16, big_pad, false),
                conv(4, 2, 16, 1, false)};
    e.regularized_layers = {0, 1, 2};

    auto& d = a.decoder;
    d.latent_dim = latent_dim;
    d.image_channels = channels;
    d.base_channels = 16;
    d.base_size = {image_size / 16, image_size / 16};
    for (int ch : {16, 16, 8}) d.layers.push_back(deconv({4, 4}, {2, 2}, ch, {1, 1}));
    d.layers.push_back(deconv({4, 4}, {2, 2}, channels, {1, 1}));
    return a;
}

Architecture single_layer(int image_size, int channels, int latent_dim) {
    Architecture a;
    a.name = "single_layer";
    auto& e = a.encoder;
    e.in_channels = channels;
    e.in_size = {image_size, image_size};
    e.latent_dim = latent_dim;
    e.layers = {conv(image_size, 1, 32, 0, false, false)};
    e.regularized_layers = {0};

    auto& d = a.decoder;
    d.latent_dim = latent_dim;
    d.image_channels = channels;
    d.base_channels = 32;
    d.base_size = {1, 1};
    d.multiscale = false;
    DeconvLayerSpec out = deconv({image_size, image_size}, {1, 1}, channels, {0, 0});
    out.batch_norm = false;
    d.layers.push_back(out);
    return a;
}

}  // namespace

Architecture preset(const std::string& name, int image_size, int channels, int latent_dim) {
    if (image_size < 2) throw ConfigError("image size must be >= 2");
    Architecture a;
    if (name == "paper_cpae") a = paper(true, image_size, channels, latent_dim);
    else if (name == "paper_ae") a = paper(false, image_size, channels, latent_dim);
    else if (name == "desk_cpae") a = desk(true, image_size, channels, latent_dim);
    else if (name == "desk_ae") a = desk(false, image_size, channels, latent_dim);
    else if (name == "single_layer") a = single_layer(image_size, channels, latent_dim);
    else throw ConfigError("unknown architecture preset '" + name + "'");
    a.encoder.validate();
    a.decoder.validate();
    return a;
}

std::vector<std::string> preset_names() { return {"paper_cpae", "paper_ae", "desk_cpae", "desk_ae", "single_layer"}; }

// ---- encoder ---------------------------------------------------------------

ConvEncoder::ConvEncoder(EncoderSpec spec, Rng& rng) : spec_(std::move(spec)) {
    spec_.validate();
    int cin = spec_.in_channels;
    for (const auto& s : spec_.layers) {
        Block b;
        b.conv = nn::Conv2d(cin, s.out_channels, s.kernel, {s.stride, s.padding}, rng);
        if (s.batch_norm) b.bn = nn::BatchNorm(s.out_channels);
        if (s.follow_up) {
            b.follow = nn::Conv2d(s.out_channels, s.out_channels, {3, 3}, {{1, 1}, {1, 1}}, rng);
            if (s.batch_norm) b.follow_bn = nn::BatchNorm(s.out_channels);
        }
        blocks_.push_back(std::move(b));
        cin = s.out_channels;
    }
    const auto fs = spec_.feature_shape(static_cast<int>(spec_.layers.size()));
    head_ = nn::Linear(fs[0] * fs[1] * fs[2], spec_.latent_dim, rng);
}

Var ConvEncoder::features(const Var& x, bool training) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || xs[1] != spec_.in_channels || xs[2] != spec_.in_size[0] || xs[3] != spec_.in_size[1])
        throw ShapeError("encoder expects (B," + std::to_string(spec_.in_channels) + "," +
                         std::to_string(spec_.in_size[0]) + "," + std::to_string(spec_.in_size[1]) + "), got " +
                         shape_str(xs));
    Var h = x;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& s = spec_.layers[l];
        auto& b = blocks_[l];
        h = b.conv.forward(h);
        if (s.batch_norm) h = b.bn.forward(h, training);
        if (s.relu) h = ad::relu(h);
        if (s.follow_up) {
            h = b.follow.forward(h);
            if (s.batch_norm) h = b.follow_bn.forward(h, training);
            if (s.relu) h = ad::relu(h);
        }
    }
    return h;
}

Var ConvEncoder::forward(const Var& x, bool training) {
    Var h = features(x, training);
    const int batch = h.shape()[0];
    const int flat = static_cast<int>(h.value().size()) / batch;
    return head_.forward(ad::reshape(h, {batch, flat}));
}

const Var& ConvEncoder::filter(int l) const {
    if (l < 0 || l >= static_cast<int>(blocks_.size())) throw ShapeError("filter layer index out of range");
    return blocks_[static_cast<std::size_t>(l)].conv.weight;
}

std::vector<Var> ConvEncoder::regularized_filters() const {
    std::vector<Var> out;
    for (int l : spec_.regularized_layers) out.push_back(filter(l));
    return out;
}

void ConvEncoder::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = prefix + ".layer" + std::to_string(l);
        auto& b = blocks_[l];
        b.conv.collect(p + ".conv", out);
        if (spec_.layers[l].batch_norm) b.bn.collect(p + ".bn", out);
        if (spec_.layers[l].follow_up) {
            b.follow.collect(p + ".follow", out);
            if (spec_.layers[l].batch_norm) b.follow_bn.collect(p + ".follow_bn", out);
        }
    }
    head_.collect(prefix + ".head", out);
}

void ConvEncoder::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = prefix + ".layer" + std::to_string(l);
        if (!spec_.layers[l].batch_norm) continue;
        blocks_[l].bn.collect_buffers(p + ".bn", out);
        if (spec_.layers[l].follow_up) blocks_[l].follow_bn.collect_buffers(p + ".follow_bn", out);
    }
}

// ---- decoder ---------------------------------------------------------------

ConvDecoder::ConvDecoder(DecoderSpec spec, Rng& rng) : spec_(std::move(spec)) {
    spec_.validate();
    stem_ = nn::Linear(spec_.latent_dim, spec_.base_channels * spec_.base_size[0] * spec_.base_size[1], rng);
    int cin = spec_.base_channels;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& s = spec_.layers[i];
        const bool last = i + 1 == spec_.layers.size();
        Stage st;
        st.deconv = nn::ConvTranspose2d(cin, s.out_channels, s.kernel, {s.stride, s.padding}, rng);
        if (s.batch_norm && !last) st.bn = nn::BatchNorm(s.out_channels);
        st.has_upsample = spec_.multiscale && !last;
        if (st.has_upsample)
            st.upsample = nn::ConvTranspose2d(cin, spec_.image_channels, s.kernel, {s.stride, s.padding}, rng);
        cin = s.out_channels + (st.has_upsample ? spec_.image_channels : 0);
        stages_.push_back(std::move(st));
    }
}

Var ConvDecoder::forward(const Var& z, bool training) {
    if (z.value().rank() != 2 || z.shape()[1] != spec_.latent_dim)
        throw ShapeError("decoder expects (B," + std::to_string(spec_.latent_dim) + "), got " + shape_str(z.shape()));
    const int batch = z.shape()[0];
    Var h = ad::relu(stem_.forward(z));
    h = ad::reshape(h, {batch, spec_.base_channels, spec_.base_size[0], spec_.base_size[1]});
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        auto& st = stages_[i];
        const bool last = i + 1 == stages_.size();
        Var y = st.deconv.forward(h);
        if (last) return ad::sigmoid(y);
        if (spec_.layers[i].batch_norm) y = st.bn.forward(y, training);
        y = ad::relu(y);
        if (st.has_upsample) y = ad::concat1(y, ad::sigmoid(st.upsample.forward(h)));
        h = y;
    }
    return h;
}

void ConvDecoder::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    stem_.collect(prefix + ".stem", out);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        const std::string p = prefix + ".stage" + std::to_string(i);
        stages_[i].deconv.collect(p + ".deconv", out);
        if (stages_[i].bn.gamma.defined()) stages_[i].bn.collect(p + ".bn", out);
        if (stages_[i].has_upsample) stages_[i].upsample.collect(p + ".upsample", out);
    }
}

void ConvDecoder::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    for (std::size_t i = 0; i < stages_.size(); ++i)
        if (stages_[i].bn.gamma.defined()) stages_[i].bn.collect_buffers(prefix + ".stage" + std::to_string(i) + ".bn", out);
}

// ---- codec ----------------------------------------------------------------

ConvAutoencoder::ConvAutoencoder(Architecture arch, Rng& rng) : arch_(std::move(arch)) {
    if (arch_.encoder.latent_dim != arch_.decoder.latent_dim)
        throw ConfigError("encoder and decoder latent dimensions differ");
    const auto out = arch_.decoder.output_shape();
    if (out[0] != arch_.encoder.in_channels || out[1] != arch_.encoder.in_size[0] || out[2] != arch_.encoder.in_size[1])
        throw ConfigError("decoder output shape does not match the encoder input");
    encoder_ = ConvEncoder(arch_.encoder, rng);
    decoder_ = ConvDecoder(arch_.decoder, rng);
}

void ConvAutoencoder::collect(std::vector<NamedParam>& out) {
    encoder_.collect("encoder", out);
    decoder_.collect("decoder", out);
}

void ConvAutoencoder::collect_buffers(std::vector<NamedBuffer>& out) {
    encoder_.collect_buffers("encoder", out);
    decoder_.collect_buffers("decoder", out);
}

std::array<int, 3> ConvAutoencoder::image_shape() const {
    return {arch_.encoder.in_channels, arch_.encoder.in_size[0], arch_.encoder.in_size[1]};
}

// ---- filters as functions --------------------------------------------------

double FilterGrid::value(int o, int i, int j1, int j2) const {
    if (j1 < 0 || j2 < 0 || j1 >= rows() || j2 >= cols()) return 0.0;
    return weights.at(o, i, j1, j2);
}

FilterGrid filter_as_function(const ConvEncoder& enc, int layer) {
    if (layer < 0 || layer >= enc.spec().l_star() || layer >= static_cast<int>(enc.spec().layers.size()))
        throw ShapeError("filter_as_function: layer " + std::to_string(layer) + " is outside the first L* layers");
    return {enc.filter(layer).value(), 1.0 / enc.spec().in_size[0]};
}

}  // namespace cpae::ae
