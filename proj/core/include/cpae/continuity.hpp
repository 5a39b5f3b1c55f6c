#pragma once

// Nonlocal continuity penalty on encoder filters, the L2 baseline, and a
// finite-difference Lipschitz estimate of a filter viewed as a function.

#include <limits>
#include <vector>

#include "cpae/autodiff.hpp"

namespace cpae::cont {

// Gaussian kernel k(d) = exp(-|d|^2 / sigma^2), distances in pixels.
// sigma = +inf gives k == 1.
struct KernelSpec {
    double sigma = 2.0;
    int j_hat = 1;
    double lambda_j = 1.0;

    void validate() const;
    double k1(int d) const;  // one-axis factor
};

constexpr double kInfiniteSigma = std::numeric_limits<double>::infinity();

// lambda_J * sum over layers of (1/(cout*cin)) * sum over channel pairs of
//   sum_{a,b in padded grid} (W_a - W_b)^2 k(a - b),
// where the padded grid extends each filter by j_hat zero cells per side.
// Each filter is (cout, cin, kh, kw) or (kh, kw).
ad::Var continuity_penalty(const std::vector<ad::Var>& filters, const KernelSpec& spec);

// Same quantity without the autodiff node; used by tests and diagnostics.
double continuity_value(const std::vector<Tensor>& filters, const KernelSpec& spec);

// lambda * sum of squared filter weights.
ad::Var l2_penalty(const std::vector<ad::Var>& filters, double lambda);

// Max over 4-adjacent grid pairs of |W_a - W_b| / delta. With
// include_boundary the grid is surrounded by one ring of zeros. For rank-4
// filters the max runs over all channel pairs. Throws ConfigError for
// delta <= 0 and ShapeError for fewer than 2 entries.
double lipschitz_estimate(const Tensor& filter, double delta, bool include_boundary = true);

}  // namespace cpae::cont
