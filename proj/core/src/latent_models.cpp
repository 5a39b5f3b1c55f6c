#include "cpae/latent_models.hpp"

#include <cmath>

namespace cpae::lat {

using ad::Var;

FlowKind parse_flow_kind(const std::string& s) {
    if (s == "neural_ode") return FlowKind::neural_ode;
    if (s == "hnn") return FlowKind::hnn;
    if (s == "la_sympnet") return FlowKind::la_sympnet;
    if (s == "vpnet") return FlowKind::vpnet;
    throw ConfigError("unknown latent model kind '" + s + "'");
}

std::string to_string(FlowKind k) {
    switch (k) {
        case FlowKind::neural_ode: return "neural_ode";
        case FlowKind::hnn: return "hnn";
        case FlowKind::la_sympnet: return "la_sympnet";
        case FlowKind::vpnet: return "vpnet";
    }
    return "?";
}

void FlowConfig::validate() const {
    if (latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
    if (!std::isfinite(dt) || dt == 0.0) throw ConfigError("flow step dt must be finite and nonzero");
    if ((kind == FlowKind::hnn || kind == FlowKind::la_sympnet) && latent_dim % 2 != 0)
        throw ConfigError(to_string(kind) + " needs an even latent dimension");
    if (kind == FlowKind::vpnet && latent_dim < 2) throw ConfigError("vpnet needs latent dimension >= 2");
    if ((kind == FlowKind::la_sympnet || kind == FlowKind::vpnet) && layers < 1)
        throw ConfigError("flow map needs at least one layer");
    for (int h : hidden)
        if (h < 1) throw ConfigError("hidden widths must be positive");
}

namespace {

Var small_uniform(Shape s, double bound, Rng& rng) {
    Tensor t(std::move(s));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return nn::parameter(std::move(t));
}

}  // namespace

FlowModel::FlowModel(FlowConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.latent_dim;
    switch (cfg_.kind) {
        case FlowKind::neural_ode: {
            std::vector<int> w{d};
            w.insert(w.end(), cfg_.hidden.begin(), cfg_.hidden.end());
            w.push_back(d);
            mlp_ = nn::Mlp(w, nn::Activation::tanh, nn::Activation::none, rng);
            break;
        }
        case FlowKind::hnn: {
            std::vector<int> w{d};
            w.insert(w.end(), cfg_.hidden.begin(), cfg_.hidden.end());
            w.push_back(1);
            mlp_ = nn::Mlp(w, nn::Activation::tanh, nn::Activation::none, rng);
            break;
        }
        case FlowKind::vpnet: {
            const int du = d / 2, dv = d - du;
            for (int l = 0; l < cfg_.layers; ++l) {
                VpLayer v;
                v.first = nn::Linear(dv, du, rng);
                v.second = nn::Linear(du, dv, rng);
                v.first_scale = small_uniform({du}, 1.0, rng);
                v.second_scale = small_uniform({dv}, 1.0, rng);
                vp_.push_back(std::move(v));
            }
            break;
        }
        case FlowKind::la_sympnet: {
            const int m = d / 2;
            const double b = 1.0 / std::sqrt(static_cast<double>(m));
            for (int l = 0; l < cfg_.layers; ++l) {
                SympLayer s;
                s.a_up = small_uniform({m, m}, 0.5 * b, rng);
                s.a_low = small_uniform({m, m}, 0.5 * b, rng);
                s.bias = small_uniform({d}, b, rng);
                s.act_scale = small_uniform({m}, b, rng);
                symp_.push_back(std::move(s));
            }
            break;
        }
    }
}

Var FlowModel::gradient_h(const Var& z) const {
    // Reverse pass through the tanh MLP written with primitive ops, so the
    // result stays differentiable in the parameters.
    const auto& layers = mlp_.layers();
    std::vector<Var> acts{z};
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) acts.push_back(ad::tanh(layers[i].forward(acts.back())));
    const int batch = z.shape()[0];
    Var g = ad::matmul(ad::constant(Tensor({batch, 1}, 1.0)), layers.back().weight);
    for (std::size_t i = layers.size() - 1; i-- > 0;) {
        const Var& h = acts[i + 1];
        g = g * ad::add_scalar(ad::scale(ad::square(h), -1.0), 1.0);
        g = ad::matmul(g, layers[i].weight);
    }
    return g;
}

Var FlowModel::hamiltonian(const Var& z) const {
    if (cfg_.kind != FlowKind::hnn) throw ConfigError("hamiltonian is defined for hnn only");
    return mlp_.forward(z);
}

Var FlowModel::vector_field(const Var& z) const {
    if (z.value().rank() != 2 || z.shape()[1] != cfg_.latent_dim)
        throw ShapeError("latent state must be (B," + std::to_string(cfg_.latent_dim) + "), got " + shape_str(z.shape()));
    if (cfg_.kind == FlowKind::neural_ode) return mlp_.forward(z);
    if (cfg_.kind == FlowKind::hnn) {
        const int m = cfg_.latent_dim / 2;
        Var g = gradient_h(z);
        return ad::concat1(ad::slice_cols(g, m, m), ad::scale(ad::slice_cols(g, 0, m), -1.0));
    }
    throw ConfigError(to_string(cfg_.kind) + " has no continuous vector field");
}

Var FlowModel::step(const Var& z) const { return step(z, cfg_.dt); }

Var FlowModel::step(const Var& z, double dt) const {
    if (z.value().rank() != 2 || z.shape()[1] != cfg_.latent_dim)
        throw ShapeError("latent state must be (B," + std::to_string(cfg_.latent_dim) + "), got " + shape_str(z.shape()));
    if (continuous()) {
        Var mid = z + ad::scale(vector_field(z), 0.5 * dt);
        return z + ad::scale(vector_field(mid), dt);
    }
    if (dt != cfg_.dt) throw ConfigError(to_string(cfg_.kind) + " is a fixed-step map; dt cannot be changed");
    return cfg_.kind == FlowKind::vpnet ? vp_step(z) : symp_step(z);
}

Var FlowModel::vp_step(const Var& z) const {
    const int d = cfg_.latent_dim, du = d / 2, dv = d - du;
    Var u = ad::slice_cols(z, 0, du);
    Var v = ad::slice_cols(z, du, dv);
    for (const auto& l : vp_) {
        u = u + ad::scale_cols(ad::sigmoid(l.first.forward(v)), l.first_scale);
        v = v + ad::scale_cols(ad::sigmoid(l.second.forward(u)), l.second_scale);
    }
    return ad::concat1(u, v);
}

Var FlowModel::symp_step(const Var& z) const {
    const int m = cfg_.latent_dim / 2;
    Var q = ad::slice_cols(z, 0, m);
    Var p = ad::slice_cols(z, m, m);
    for (std::size_t i = 0; i < symp_.size(); ++i) {
        const auto& l = symp_[i];
        q = q + ad::matmul(p, l.a_up + ad::transpose(l.a_up));
        p = p + ad::matmul(q, l.a_low + ad::transpose(l.a_low));
        q = ad::add_row_bias(q, ad::slice_rows(l.bias, 0, m));
        p = ad::add_row_bias(p, ad::slice_rows(l.bias, m, m));
        if (i % 2 == 0) q = q + ad::scale_cols(ad::sigmoid(p), l.act_scale);
        else p = p + ad::scale_cols(ad::sigmoid(q), l.act_scale);
    }
    return ad::concat1(q, p);
}

std::vector<double> FlowModel::advance(const std::vector<double>& z, double dt) const {
    ad::NoGradGuard guard;
    Var in(Tensor({1, cfg_.latent_dim}, z));
    Var out = step(in, dt);
    if (!out.value().all_finite()) throw DivergenceError("latent state became non-finite", 0);
    return out.value().vec();
}

std::vector<double> FlowModel::jacobian(const std::vector<double>& z) const {
    const int d = cfg_.latent_dim;
    if (static_cast<int>(z.size()) != d) throw ShapeError("jacobian: state has the wrong dimension");
    std::vector<NamedParam> params;
    const_cast<FlowModel*>(this)->collect("", params);
    std::vector<Tensor> saved;
    for (auto& p : params) saved.push_back(p.var->grad());

    std::vector<double> jac(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i) {
        Var in(Tensor({1, d}, z), true);
        Var out = step(in);
        ad::backward(ad::slice_cols(out, i, 1));
        for (int j = 0; j < d; ++j) jac[static_cast<std::size_t>(i) * d + j] = in.grad()[j];
    }
    for (std::size_t k = 0; k < params.size(); ++k) params[k].var->node()->grad = saved[k];
    return jac;
}

void FlowModel::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    const std::string p = prefix.empty() ? to_string(cfg_.kind) : prefix;
    if (cfg_.kind == FlowKind::neural_ode || cfg_.kind == FlowKind::hnn) {
        mlp_.collect(p + ".mlp", out);
        return;
    }
    for (std::size_t i = 0; i < vp_.size(); ++i) {
        const std::string q = p + ".layer" + std::to_string(i);
        vp_[i].first.collect(q + ".first", out);
        vp_[i].second.collect(q + ".second", out);
        out.push_back({q + ".first_scale", &vp_[i].first_scale});
        out.push_back({q + ".second_scale", &vp_[i].second_scale});
    }
    for (std::size_t i = 0; i < symp_.size(); ++i) {
        const std::string q = p + ".layer" + std::to_string(i);
        out.push_back({q + ".a_up", &symp_[i].a_up});
        out.push_back({q + ".a_low", &symp_[i].a_low});
        out.push_back({q + ".bias", &symp_[i].bias});
        out.push_back({q + ".act_scale", &symp_[i].act_scale});
    }
}

std::vector<double> canonical_symplectic(int d) {
    if (d % 2 != 0) throw ConfigError("canonical symplectic matrix needs even size");
    const int m = d / 2;
    std::vector<double> s(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < m; ++i) {
        s[static_cast<std::size_t>(i) * d + m + i] = 1.0;
        s[static_cast<std::size_t>(m + i) * d + i] = -1.0;
    }
    return s;
}

}  // namespace cpae::lat
