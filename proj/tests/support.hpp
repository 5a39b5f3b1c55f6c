#pragma once

// Shared helpers for the unit and acceptance suites: seeded generators and a
// central-difference gradient check.

#include <cmath>
#include <functional>
#include <vector>

#include "cpae/autodiff.hpp"
#include "cpae/nn.hpp"

namespace cpae::testing {

inline Tensor rand_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (double& v : t.span()) v = rng.uniform(lo, hi);
    return t;
}

inline ad::Var leaf(Tensor t) { return ad::Var(std::move(t), true); }

inline int rand_int(Rng& rng, int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// Largest norm-wise relative error ||g - g_fd|| / (||g|| + ||g_fd||) over the
// leaves. `f` must rebuild the scalar from the current leaf values.
inline double grad_check(const std::vector<ad::Var>& leaves, const std::function<ad::Var()>& f, double h = 1e-6) {
    for (const auto& l : leaves) const_cast<ad::Var&>(l).zero_grad();
    ad::backward(f());
    double worst = 0.0;
    for (const auto& l : leaves) {
        ad::Var& v = const_cast<ad::Var&>(l);
        const Tensor analytic = v.has_grad() ? v.grad() : Tensor(v.shape());
        double num = 0.0, den_a = 0.0, den_n = 0.0;
        for (std::size_t i = 0; i < v.value().size(); ++i) {
            const double x0 = v.value()[i];
            double fp, fm;
            {
                ad::NoGradGuard g;
                v.mutable_value()[i] = x0 + h;
                fp = f().item();
                v.mutable_value()[i] = x0 - h;
                fm = f().item();
            }
            v.mutable_value()[i] = x0;
            const double fd = (fp - fm) / (2 * h);
            num += (analytic[i] - fd) * (analytic[i] - fd);
            den_a += analytic[i] * analytic[i];
            den_n += fd * fd;
        }
        const double den = std::sqrt(den_a) + std::sqrt(den_n);
        if (den > 0) worst = std::max(worst, std::sqrt(num) / den);
    }
    return worst;
}

// Weighted sum with fixed random weights, so every output entry matters.
inline ad::Var probe(const ad::Var& y, std::uint64_t seed = 99) {
    Rng rng(seed);
    return ad::sum(ad::mul(y, ad::constant(rand_tensor(y.shape(), rng))));
}

}  // namespace cpae::testing
