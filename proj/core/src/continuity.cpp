#include "cpae/continuity.hpp"

#include <Eigen/Core>
#include <cmath>

namespace cpae::cont {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapR = Eigen::Map<const MatR>;
using MapR = Eigen::Map<MatR>;

struct SliceShape {
    int pairs, rows, cols;
};

SliceShape slices(const Tensor& w) {
    if (w.rank() == 2) return {1, w.dim(0), w.dim(1)};
    if (w.rank() == 4) return {w.dim(0) * w.dim(1), w.dim(2), w.dim(3)};
    throw ShapeError("filter must be rank 2 or 4, got " + shape_str(w.shape()));
}

// Kernel matrix over the support and the row sums over the padded range.
struct AxisKernel {
    MatR g;                 // n x n, g(a-b)
    Eigen::VectorXd total;  // sum over b in [-j_hat, n-1+j_hat]
};

AxisKernel axis_kernel(int n, const KernelSpec& s) {
    AxisKernel ak{MatR(n, n), Eigen::VectorXd(n)};
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) ak.g(a, b) = s.k1(a - b);
        double t = 0.0;
        for (int b = -s.j_hat; b < n + s.j_hat; ++b) t += s.k1(a - b);
        ak.total(a) = t;
    }
    return ak;
}

// Value of one layer's penalty and optionally its gradient (same layout as w).
double layer_penalty(const Tensor& w, const KernelSpec& spec, Tensor* grad) {
    const SliceShape sh = slices(w);
    const AxisKernel kr = axis_kernel(sh.rows, spec);
    const AxisKernel kc = axis_kernel(sh.cols, spec);
    const MatR ktot = kr.total * kc.total.transpose();
    const double norm = 1.0 / sh.pairs;
    const std::size_t stride = static_cast<std::size_t>(sh.rows) * sh.cols;
    double total = 0.0;
    for (int p = 0; p < sh.pairs; ++p) {
        CMapR W(w.data() + p * stride, sh.rows, sh.cols);
        const MatR kw = kr.g * W * kc.g;
        // sum_{a,b} (W_a - W_b)^2 k = 2 sum W_a^2 K_a - 2 sum W_a (kW)_a
        total += 2.0 * (W.array().square() * ktot.array()).sum() - 2.0 * (W.array() * kw.array()).sum();
        if (grad) {
            MapR G(grad->data() + p * stride, sh.rows, sh.cols);
            G = norm * (4.0 * (W.array() * ktot.array()) - 4.0 * kw.array()).matrix();
        }
    }
    return norm * total;
}

}  // namespace

void KernelSpec::validate() const {
    if (!(sigma > 0.0)) throw ConfigError("kernel bandwidth sigma must be > 0");
    if (j_hat < 1) throw ConfigError("J_hat must be >= 1");
    if (!(lambda_j >= 0.0) || !std::isfinite(lambda_j)) throw ConfigError("lambda_J must be finite and >= 0");
}

double KernelSpec::k1(int d) const {
    if (std::isinf(sigma)) return 1.0;
    const double t = d / sigma;
    return std::exp(-t * t);
}

double continuity_value(const std::vector<Tensor>& filters, const KernelSpec& spec) {
    spec.validate();
    double total = 0.0;
    for (const auto& w : filters) total += layer_penalty(w, spec, nullptr);
    return spec.lambda_j * total;
}

ad::Var continuity_penalty(const std::vector<ad::Var>& filters, const KernelSpec& spec) {
    spec.validate();
    double total = 0.0;
    auto grads = std::make_shared<std::vector<Tensor>>();
    const bool want_grad = ad::grad_enabled();
    for (const auto& f : filters) {
        Tensor g;
        if (want_grad && f.requires_grad()) g = Tensor(f.shape(), 0.0);
        total += layer_penalty(f.value(), spec, g.empty() ? nullptr : &g);
        grads->push_back(std::move(g));
    }
    const double lambda = spec.lambda_j;
    return ad::make_var(Tensor::scalar(lambda * total), filters, [grads, lambda](ad::Node& n) {
        const double up = n.grad[0] * lambda;
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            if (!n.parents[i]->requires_grad) continue;
            Tensor& dst = n.parents[i]->grad_buffer();
            const Tensor& src = (*grads)[i];
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += up * src[k];
        }
    });
}

ad::Var l2_penalty(const std::vector<ad::Var>& filters, double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError("L2 weight must be >= 0");
    ad::Var total = ad::constant(Tensor::scalar(0.0));
    for (const auto& f : filters) total = total + ad::sum_squares(f);
    return ad::scale(total, lambda);
}

double lipschitz_estimate(const Tensor& filter, double delta, bool include_boundary) {
    if (!(delta > 0.0)) throw ConfigError("lipschitz_estimate: delta must be > 0");
    const SliceShape sh = slices(filter);
    if (sh.rows * sh.cols < 2 && !include_boundary)
        throw ShapeError("lipschitz_estimate needs at least 2 filter entries");
    if (sh.rows * sh.cols < 1) throw ShapeError("lipschitz_estimate: empty filter");
    const int pad = include_boundary ? 1 : 0;
    const std::size_t stride = static_cast<std::size_t>(sh.rows) * sh.cols;
    double best = 0.0;
    for (int p = 0; p < sh.pairs; ++p) {
        const double* w = filter.data() + p * stride;
        auto at = [&](int r, int c) {
            if (r < 0 || c < 0 || r >= sh.rows || c >= sh.cols) return 0.0;
            return w[static_cast<std::size_t>(r) * sh.cols + c];
        };
        for (int r = -pad; r < sh.rows + pad; ++r)
            for (int c = -pad; c < sh.cols + pad; ++c) {
                if (r + 1 < sh.rows + pad) best = std::max(best, std::abs(at(r, c) - at(r + 1, c)));
                if (c + 1 < sh.cols + pad) best = std::max(best, std::abs(at(r, c) - at(r, c + 1)));
            }
    }
    return best / delta;
}

}  // namespace cpae::cont
