#include "cpae/fnn_baseline.hpp"

#include <algorithm>

namespace cpae::fnn {

void DenseSpec::validate() const {
    for (int v : image)
        if (v < 1) throw ConfigError("image shape must be positive");
    for (int h : hidden)
        if (h < 1) throw ConfigError("dense widths must be positive");
    if (latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
}

DenseAutoencoder::DenseAutoencoder(DenseSpec spec, Rng& rng) : spec_(std::move(spec)) {
    spec_.validate();
    std::vector<int> w{spec_.input_size()};
    w.insert(w.end(), spec_.hidden.begin(), spec_.hidden.end());
    w.push_back(spec_.latent_dim);
    enc_ = nn::Mlp(w, spec_.activation, nn::Activation::none, rng);
    std::reverse(w.begin(), w.end());
    dec_ = nn::Mlp(w, spec_.activation, nn::Activation::sigmoid, rng);
}

ad::Var DenseAutoencoder::encode(const ad::Var& x, bool) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != spec_.image[0] || s[2] != spec_.image[1] || s[3] != spec_.image[2])
        throw ShapeError("dense encoder expects (B," + std::to_string(spec_.image[0]) + "," +
                         std::to_string(spec_.image[1]) + "," + std::to_string(spec_.image[2]) + "), got " +
                         shape_str(s));
    return enc_.forward(ad::reshape(x, {s[0], spec_.input_size()}));
}

ad::Var DenseAutoencoder::decode(const ad::Var& z, bool) {
    if (z.value().rank() != 2 || z.shape()[1] != spec_.latent_dim)
        throw ShapeError("dense decoder expects (B," + std::to_string(spec_.latent_dim) + "), got " + shape_str(z.shape()));
    return ad::reshape(dec_.forward(z), {z.shape()[0], spec_.image[0], spec_.image[1], spec_.image[2]});
}

void DenseAutoencoder::collect(std::vector<NamedParam>& out) {
    enc_.collect("fnn.encoder", out);
    dec_.collect("fnn.decoder", out);
}

}  // namespace cpae::fnn
