#pragma once

// Fully connected autoencoder on flattened images.

#include "cpae/autoencoder.hpp"

namespace cpae::fnn {

struct DenseSpec {
    std::array<int, 3> image{1, 64, 64};  // (C, H, W)
    std::vector<int> hidden{512, 128};    // encoder widths; decoder mirrors them
    int latent_dim = 2;
    nn::Activation activation = nn::Activation::relu;

    int input_size() const { return image[0] * image[1] * image[2]; }
    void validate() const;
};

class DenseAutoencoder : public ae::Codec {
public:
    DenseAutoencoder(DenseSpec spec, Rng& rng);

    ad::Var encode(const ad::Var& x, bool training) override;
    ad::Var decode(const ad::Var& z, bool training) override;
    void collect(std::vector<NamedParam>& out) override;
    void collect_buffers(std::vector<NamedBuffer>&) override {}
    std::vector<ad::Var> regularized_filters() const override { return {}; }
    int latent_dim() const override { return spec_.latent_dim; }
    std::array<int, 3> image_shape() const override { return spec_.image; }
    std::string name() const override { return "fnn"; }

    const DenseSpec& spec() const { return spec_; }
    nn::Mlp& encoder() { return enc_; }
    nn::Mlp& decoder() { return dec_; }

private:
    DenseSpec spec_;
    nn::Mlp enc_, dec_;
};

}  // namespace cpae::fnn
