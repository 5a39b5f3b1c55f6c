#include "cpae/nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace cpae {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do x = engine_();
    while (x >= limit);
    return x % n;
}

namespace nn {

Activation parse_activation(const std::string& s) {
    if (s == "none" || s == "identity") return Activation::none;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "none";
}

ad::Var apply(Activation a, const ad::Var& x) {
    switch (a) {
        case Activation::relu: return ad::relu(x);
        case Activation::tanh: return ad::tanh(x);
        case Activation::sigmoid: return ad::sigmoid(x);
        case Activation::none: break;
    }
    return x;
}

ad::Var parameter(Tensor init) { return ad::Var(std::move(init), true); }

Tensor uniform_fan_in(Shape shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    for (double& v : t.vec()) v = rng.uniform(-bound, bound);
    return t;
}

Linear::Linear(int in, int out, Rng& rng, bool with_bias) {
    weight = parameter(uniform_fan_in({out, in}, in, rng));
    if (with_bias) bias = parameter(uniform_fan_in({out}, in, rng));
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".weight", &weight});
    if (bias.defined()) out.push_back({prefix + ".bias", &bias});
}

Conv2d::Conv2d(int cin, int cout, std::array<int, 2> kernel, ad::Conv2dParams p, Rng& rng, bool with_bias)
    : params(p) {
    const int fan_in = cin * kernel[0] * kernel[1];
    weight = parameter(uniform_fan_in({cout, cin, kernel[0], kernel[1]}, fan_in, rng));
    if (with_bias) bias = parameter(uniform_fan_in({cout}, fan_in, rng));
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".weight", &weight});
    if (bias.defined()) out.push_back({prefix + ".bias", &bias});
}

ConvTranspose2d::ConvTranspose2d(int cin, int cout, std::array<int, 2> kernel, ad::Conv2dParams p, Rng& rng,
                                 bool with_bias)
    : params(p) {
    const int fan_in = cout * kernel[0] * kernel[1];
    weight = parameter(uniform_fan_in({cin, cout, kernel[0], kernel[1]}, fan_in, rng));
    if (with_bias) bias = parameter(uniform_fan_in({cout}, fan_in, rng));
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".weight", &weight});
    if (bias.defined()) out.push_back({prefix + ".bias", &bias});
}

BatchNorm::BatchNorm(int channels) {
    gamma = parameter(Tensor({channels}, 1.0));
    beta = parameter(Tensor({channels}, 0.0));
    state.running_mean = Tensor({channels}, 0.0);
    state.running_var = Tensor({channels}, 1.0);
}

void BatchNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
}

void BatchNorm::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    out.push_back({prefix + ".running_mean", &state.running_mean});
    out.push_back({prefix + ".running_var", &state.running_var});
}

Mlp::Mlp(const std::vector<int>& widths, Activation hidden_act, Activation output_act, Rng& rng)
    : hidden_(hidden_act), output_(output_act) {
    if (widths.size() < 2) throw ConfigError("Mlp needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        if (widths[i] < 1 || widths[i + 1] < 1) throw ConfigError("Mlp widths must be positive");
        layers_.emplace_back(widths[i], widths[i + 1], rng);
    }
}

ad::Var Mlp::forward(const ad::Var& x) const {
    ad::Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        h = apply(i + 1 < layers_.size() ? hidden_ : output_, h);
    }
    return h;
}

void Mlp::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".fc" + std::to_string(i), out);
}

}  // namespace nn

Adam::Adam(std::vector<NamedParam> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.var->shape(), 0.0);
        v_.emplace_back(p.var->shape(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.var->zero_grad();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        ad::Var& var = *params_[k].var;
        if (!var.has_grad()) continue;
        const Tensor& g = var.grad();
        Tensor& w = var.mutable_value();
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            w[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
    }
}

std::uint64_t checksum(const std::vector<NamedParam>& params) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.var->value().data());
        for (std::size_t i = 0; i < p.var->value().size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

}  // namespace cpae
