#pragma once

// Layers, parameter bookkeeping and the Adam optimizer used by every model.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cpae/autodiff.hpp"

namespace cpae {

// Seeded generator with platform-independent distributions (the standard
// library distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    std::uint64_t next() { return engine_(); }
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

struct NamedParam {
    std::string name;
    ad::Var* var;
};

struct NamedBuffer {
    std::string name;
    Tensor* tensor;
};

namespace nn {

enum class Activation { none, relu, tanh, sigmoid };

Activation parse_activation(const std::string& s);
std::string to_string(Activation a);
ad::Var apply(Activation a, const ad::Var& x);

// Trainable leaf.
ad::Var parameter(Tensor init);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual variance-scaling default.
Tensor uniform_fan_in(Shape shape, int fan_in, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(int in, int out, Rng& rng, bool bias = true);

    ad::Var forward(const ad::Var& x) const { return ad::linear(x, weight, bias); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    int in_features() const { return weight.shape()[1]; }
    int out_features() const { return weight.shape()[0]; }

    ad::Var weight;  // (out, in)
    ad::Var bias;    // (out) or undefined
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int cin, int cout, std::array<int, 2> kernel, ad::Conv2dParams p, Rng& rng, bool bias = true);

    ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, weight, bias, params); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    ad::Var weight;  // (cout, cin, kh, kw)
    ad::Var bias;
    ad::Conv2dParams params;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int cin, int cout, std::array<int, 2> kernel, ad::Conv2dParams p, Rng& rng, bool bias = true);

    ad::Var forward(const ad::Var& x) const { return ad::conv_transpose2d(x, weight, bias, params); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    ad::Var weight;  // (cin, cout, kh, kw)
    ad::Var bias;
    ad::Conv2dParams params;
};

class BatchNorm {
public:
    BatchNorm() = default;
    explicit BatchNorm(int channels);

    ad::Var forward(const ad::Var& x, bool training) { return ad::batch_norm(x, gamma, beta, state, training); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);

    ad::Var gamma, beta;
    ad::BatchNormState state;
};

// Fully connected network: hidden layers use `hidden_act`, the last layer is
// followed by `output_act`.
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::vector<int>& widths, Activation hidden_act, Activation output_act, Rng& rng);

    ad::Var forward(const ad::Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    const std::vector<Linear>& layers() const { return layers_; }
    std::vector<Linear>& layers() { return layers_; }
    Activation hidden_activation() const { return hidden_; }

private:
    std::vector<Linear> layers_;
    Activation hidden_ = Activation::tanh;
    Activation output_ = Activation::none;
};

}  // namespace nn

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<NamedParam> params, AdamConfig cfg);
    void zero_grad();
    // Applies one update using the gradients currently stored on the params.
    void step();
    const std::vector<NamedParam>& params() const { return params_; }
    long steps() const { return t_; }

private:
    std::vector<NamedParam> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

// Order-sensitive FNV-1a digest of parameter bytes; used to verify that a
// training stage leaves frozen weights untouched.
std::uint64_t checksum(const std::vector<NamedParam>& params);

}  // namespace cpae
