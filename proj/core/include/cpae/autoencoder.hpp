#pragma once

// Strided convolutional encoder, multi-scale transposed-convolution decoder,
// and the architecture presets (paper scale and desk scale).

#include <array>
#include <string>
#include <vector>

#include "cpae/nn.hpp"

namespace cpae::ae {

struct ConvLayerSpec {
    std::array<int, 2> kernel{4, 4};
    std::array<int, 2> stride{2, 2};
    int out_channels = 16;
    std::array<int, 2> padding{1, 1};
    bool follow_up = false;  // extra 3x3 / stride 1 / pad 1 conv with the same channel count
    bool batch_norm = true;
    bool relu = true;
};

struct EncoderSpec {
    int in_channels = 1;
    std::array<int, 2> in_size{64, 64};  // (H, W)
    std::vector<ConvLayerSpec> layers;
    // Layers whose filters are treated as functions on the input grid and
    // regularized for continuity (0-based). L* = regularized.size() + 1.
    std::vector<int> regularized_layers;
    int latent_dim = 2;

    int l_star() const { return static_cast<int>(regularized_layers.size()) + 1; }
    // Shape (C,H,W) of the feature map after layer `upto` (exclusive count).
    std::array<int, 3> feature_shape(int upto) const;
    void validate() const;
};

struct DeconvLayerSpec {
    std::array<int, 2> kernel{4, 4};
    std::array<int, 2> stride{2, 2};
    int out_channels = 16;
    std::array<int, 2> padding{1, 1};
    bool batch_norm = true;
};

// latent -> linear -> relu -> (base_channels, base_size) -> deconv stages.
// Every stage but the last is paired with an upsampling branch (transposed
// conv with the stage geometry, sigmoid, `image_channels` outputs) applied to
// the same stage input; the two outputs are concatenated along channels. The
// last stage emits `image_channels` maps through a sigmoid.
struct DecoderSpec {
    int latent_dim = 2;
    int image_channels = 1;
    int base_channels = 16;
    std::array<int, 2> base_size{4, 4};
    std::vector<DeconvLayerSpec> layers;
    bool multiscale = true;

    std::array<int, 3> output_shape() const;
    void validate() const;
};

struct Architecture {
    std::string name;
    EncoderSpec encoder;
    DecoderSpec decoder;
};

// Presets:
//  paper_cpae / paper_ae      - 3x128x256 encoder of the published tables
//                               (filter 12 / pad 5 on the first three layers
//                               for CpAE, filter 4 / pad 1 for the baseline)
//                               and the matching decoder.
//  desk_cpae / desk_ae        - three stride-2 layers (filter 6 for CpAE,
//                               filter 4 for the baseline) on a square input.
//  single_layer               - one full-image filter with 32 channels plus a
//                               linear map (circular-motion ablation).
Architecture preset(const std::string& name, int image_size, int channels, int latent_dim);
std::vector<std::string> preset_names();

class ConvEncoder {
public:
    ConvEncoder() = default;
    ConvEncoder(EncoderSpec spec, Rng& rng);

    // x: (B, C, H, W) -> (B, latent_dim).
    ad::Var forward(const ad::Var& x, bool training);
    // Feature map before the final linear map.
    ad::Var features(const ad::Var& x, bool training);

    const EncoderSpec& spec() const { return spec_; }
    // Filter weights (cout, cin, kh, kw) of main conv layer `l` (0-based).
    const ad::Var& filter(int l) const;
    std::vector<ad::Var> regularized_filters() const;

    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);

private:
    struct Block {
        nn::Conv2d conv;
        nn::BatchNorm bn;
        nn::Conv2d follow;
        nn::BatchNorm follow_bn;
    };
    EncoderSpec spec_;
    std::vector<Block> blocks_;
    nn::Linear head_;
};

class ConvDecoder {
public:
    ConvDecoder() = default;
    ConvDecoder(DecoderSpec spec, Rng& rng);

    // z: (B, latent_dim) -> (B, C, H, W) in [0,1].
    ad::Var forward(const ad::Var& z, bool training);

    const DecoderSpec& spec() const { return spec_; }
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);

private:
    struct Stage {
        nn::ConvTranspose2d deconv;
        nn::BatchNorm bn;
        nn::ConvTranspose2d upsample;
        bool has_upsample = false;
    };
    DecoderSpec spec_;
    nn::Linear stem_;
    std::vector<Stage> stages_;
};

// Encoder/decoder pair as seen by the training and evaluation loops.
class Codec {
public:
    virtual ~Codec() = default;
    virtual ad::Var encode(const ad::Var& x, bool training) = 0;
    virtual ad::Var decode(const ad::Var& z, bool training) = 0;
    virtual void collect(std::vector<NamedParam>& out) = 0;
    virtual void collect_buffers(std::vector<NamedBuffer>& out) = 0;
    // Filters subject to the continuity / L2 penalties (may be empty).
    virtual std::vector<ad::Var> regularized_filters() const = 0;
    virtual int latent_dim() const = 0;
    virtual std::array<int, 3> image_shape() const = 0;  // (C, H, W)
    virtual std::string name() const = 0;
};

class ConvAutoencoder : public Codec {
public:
    ConvAutoencoder(Architecture arch, Rng& rng);

    ad::Var encode(const ad::Var& x, bool training) override { return encoder_.forward(x, training); }
    ad::Var decode(const ad::Var& z, bool training) override { return decoder_.forward(z, training); }
    void collect(std::vector<NamedParam>& out) override;
    void collect_buffers(std::vector<NamedBuffer>& out) override;
    std::vector<ad::Var> regularized_filters() const override { return encoder_.regularized_filters(); }
    int latent_dim() const override { return arch_.encoder.latent_dim; }
    std::array<int, 3> image_shape() const override;
    std::string name() const override { return arch_.name; }

    const Architecture& architecture() const { return arch_; }
    ConvEncoder& encoder() { return encoder_; }
    const ConvEncoder& encoder() const { return encoder_; }
    ConvDecoder& decoder() { return decoder_; }

private:
    Architecture arch_;
    ConvEncoder encoder_;
    ConvDecoder decoder_;
};

// Filter of a regularized layer viewed as samples of a function on the input
// pixel grid: value(o, i, j1, j2) = W[o,i,j1,j2] for 0 <= j <= J and 0 outside.
struct FilterGrid {
    Tensor weights;  // (cout, cin, kh, kw)
    double delta = 0.0;

    int out_channels() const { return weights.dim(0); }
    int in_channels() const { return weights.dim(1); }
    int rows() const { return weights.dim(2); }
    int cols() const { return weights.dim(3); }
    double value(int o, int i, int j1, int j2) const;
    // Extent of the support [0, J*delta] along each axis.
    std::array<double, 2> support() const { return {(rows() - 1) * delta, (cols() - 1) * delta}; }
};

// Valid for the first L* layers (0-based layer < l_star()); throws ShapeError
// otherwise.
FilterGrid filter_as_function(const ConvEncoder& enc, int layer);

}  // namespace cpae::ae
