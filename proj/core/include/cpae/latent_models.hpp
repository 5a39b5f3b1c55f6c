#pragma once

// Discrete flow maps Z_n -> Z_{n+1} in latent space.
//
//  neural_ode  MLP vector field, explicit midpoint step
//  hnn         H = MLP(q, p), field (dH/dp, -dH/dq), explicit midpoint step
//  la_sympnet  linear symplectic (up, low) modules and activation sublayers
//  vpnet       alternating shear couplings, unit Jacobian determinant

#include <string>
#include <vector>

#include "cpae/nn.hpp"

namespace cpae::lat {

enum class FlowKind { neural_ode, hnn, la_sympnet, vpnet };

FlowKind parse_flow_kind(const std::string& s);
std::string to_string(FlowKind k);

struct FlowConfig {
    FlowKind kind = FlowKind::neural_ode;
    int latent_dim = 2;
    double dt = 0.1;
    std::vector<int> hidden{128, 128};  // MLP widths for neural_ode / hnn
    int layers = 3;                     // la_sympnet / vpnet

    void validate() const;
};

class FlowModel {
public:
    FlowModel() = default;
    FlowModel(FlowConfig cfg, Rng& rng);

    const FlowConfig& config() const { return cfg_; }
    FlowKind kind() const { return cfg_.kind; }
    int dim() const { return cfg_.latent_dim; }
    // neural_ode and hnn admit a vector field, hence any dt (including < 0).
    bool continuous() const { return cfg_.kind == FlowKind::neural_ode || cfg_.kind == FlowKind::hnn; }

    // z: (B, d). step(z) uses the configured dt; the dt overload is only
    // available for continuous kinds and throws ConfigError otherwise.
    ad::Var step(const ad::Var& z) const;
    ad::Var step(const ad::Var& z, double dt) const;
    ad::Var vector_field(const ad::Var& z) const;
    // hnn only: (B, 1).
    ad::Var hamiltonian(const ad::Var& z) const;

    // Single-state inference without graph recording. Throws DivergenceError
    // if the result is not finite.
    std::vector<double> advance(const std::vector<double>& z, double dt) const;
    std::vector<double> advance(const std::vector<double>& z) const { return advance(z, cfg_.dt); }

    // Exact Jacobian of step(z) (row-major d x d) by d reverse passes.
    // Parameter gradients are left as they were.
    std::vector<double> jacobian(const std::vector<double>& z) const;

    void collect(const std::string& prefix, std::vector<NamedParam>& out);
    // Direct access for hand-set weights in tests.
    nn::Mlp& mlp() { return mlp_; }

    // Coupling parameters of one vpnet layer: u += a * sigmoid(v A^T + b),
    // then v += c_scale * sigmoid(u C^T + c).
    struct VpLayer {
        nn::Linear first, second;
        ad::Var first_scale, second_scale;
    };
    // One la_sympnet layer: q += p S_up, p += q S_low, bias, then an
    // activation sublayer (up on even layers, low on odd ones).
    struct SympLayer {
        ad::Var a_up, a_low;  // S = A + A^T
        ad::Var bias;         // (d)
        ad::Var act_scale;    // (d/2)
    };
    std::vector<VpLayer>& vp_layers() { return vp_; }
    std::vector<SympLayer>& symp_layers() { return symp_; }

private:
    ad::Var gradient_h(const ad::Var& z) const;
    ad::Var vp_step(const ad::Var& z) const;
    ad::Var symp_step(const ad::Var& z) const;

    FlowConfig cfg_;
    nn::Mlp mlp_;
    std::vector<VpLayer> vp_;
    std::vector<SympLayer> symp_;
};

// Canonical symplectic matrix [[0, I], [-I, 0]] of size d (row-major).
std::vector<double> canonical_symplectic(int d);

}  // namespace cpae::lat
