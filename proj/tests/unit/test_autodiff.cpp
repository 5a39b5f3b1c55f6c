#include <doctest.h>

#include "cpae/autodiff.hpp"
#include "support.hpp"

using namespace cpae;
using namespace cpae::testing;

namespace {

// Direct seven-loop convolution, independent of the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, ad::Conv2dParams p) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int Ho = (H + 2 * p.padding[0] - kh) / p.stride[0] + 1;
    const int Wo = (W + 2 * p.padding[1] - kw) / p.stride[1] + 1;
    Tensor y({B, O, Ho, Wo});
    for (int n = 0; n < B; ++n)
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) {
                    double s = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
                    for (int c = 0; c < C; ++c)
                        for (int a = 0; a < kh; ++a)
                            for (int e = 0; e < kw; ++e) {
                                const int r = i * p.stride[0] - p.padding[0] + a;
                                const int q = j * p.stride[1] - p.padding[1] + e;
                                if (r < 0 || r >= H || q < 0 || q >= W) continue;
                                s += x.at(n, c, r, q) * w.at(o, c, a, e);
                            }
                    y.at(n, o, i, j) = s;
                }
    return y;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d agrees with the direct loop on random geometries") {
    Rng rng(1);
    for (int trial = 0; trial < 25; ++trial) {
        const int C = rand_int(rng, 1, 3), O = rand_int(rng, 1, 3);
        const int kh = rand_int(rng, 1, 5), kw = rand_int(rng, 1, 5);
        ad::Conv2dParams p{{rand_int(rng, 1, 3), rand_int(rng, 1, 3)}, {rand_int(rng, 0, 2), rand_int(rng, 0, 2)}};
        const int H = kh + rand_int(rng, 0, 7), W = kw + rand_int(rng, 0, 7);
        const Tensor x = rand_tensor({2, C, H, W}, rng), w = rand_tensor({O, C, kh, kw}, rng), b = rand_tensor({O}, rng);
        const Tensor y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), p).value();
        const Tensor ref = naive_conv(x, w, b, p);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const int C = rand_int(rng, 1, 3), O = rand_int(rng, 1, 3), k = rand_int(rng, 2, 5), s = rand_int(rng, 1, 3);
        const int pad = rand_int(rng, 0, k - 1);
        const int Ho = rand_int(rng, 2, 5);
        const int H = (Ho - 1) * s - 2 * pad + k;  // exact inverse size
        if (H < k) continue;
        ad::Conv2dParams p{{s, s}, {pad, pad}};
        const Tensor x = rand_tensor({1, C, H, H}, rng), w = rand_tensor({O, C, k, k}, rng);
        const Tensor y = rand_tensor({1, O, Ho, Ho}, rng);
        const Tensor cx = ad::conv2d(ad::constant(x), ad::constant(w), {}, p).value();
        const Tensor ty = ad::conv_transpose2d(ad::constant(y), ad::constant(w), {}, p).value();
        REQUIRE(cx.shape() == y.shape());
        REQUIRE(ty.shape() == x.shape());
        CHECK(dot(cx, y) == doctest::Approx(dot(x, ty)).epsilon(1e-12));
    }
}

TEST_CASE("output size formulas") {
    CHECK(ad::conv_out_size(64, 4, 2, 1) == 32);
    CHECK(ad::conv_out_size(48, 48, 1, 0) == 1);
    CHECK(ad::conv_out_size(64, 6, 2, 2) == 32);
    CHECK(ad::conv_transpose_out_size(32, 4, 2, 1) == 64);
    CHECK(ad::conv_transpose_out_size(1, 48, 1, 0) == 48);
}

TEST_CASE("gradient checks: elementwise and dense ops") {
    Rng rng(3);
    auto a = leaf(rand_tensor({3, 4}, rng)), b = leaf(rand_tensor({3, 4}, rng));
    auto w = leaf(rand_tensor({5, 4}, rng)), bias = leaf(rand_tensor({5}, rng)), v = leaf(rand_tensor({4}, rng));
    CHECK(grad_check({a, b}, [&] { return probe(ad::tanh(a) * ad::sigmoid(b) + ad::square(a - b)); }) < 1e-7);
    CHECK(grad_check({a}, [&] { return probe(ad::relu(a)); }) < 1e-7);
    CHECK(grad_check({a, w, bias}, [&] { return probe(ad::linear(a, w, bias)); }) < 1e-7);
    CHECK(grad_check({a, w}, [&] { return probe(ad::matmul(a, ad::transpose(w))); }) < 1e-7);
    CHECK(grad_check({a, w}, [&] { return probe(ad::matmul_nt(a, w)); }) < 1e-7);
    CHECK(grad_check({a, v}, [&] { return probe(ad::scale_cols(a, v)); }) < 1e-7);
    CHECK(grad_check({a, v}, [&] { return probe(ad::add_row_bias(a, v)); }) < 1e-7);
    CHECK(grad_check({a, b}, [&] { return probe(ad::concat1(a, b)); }) < 1e-7);
    CHECK(grad_check({a}, [&] { return probe(ad::slice_cols(a, 1, 2)) + ad::sum_squares(ad::slice_rows(a, 1, 2)); }) < 1e-7);
    CHECK(grad_check({a}, [&] { return ad::mean(ad::reshape(ad::scale(ad::add_scalar(a, 0.3), 2.0), {12})); }) < 1e-7);
}

TEST_CASE("gradient checks: conv, transposed conv and batch norm") {
    Rng rng(4);
    auto x = leaf(rand_tensor({2, 2, 7, 6}, rng));
    auto w = leaf(rand_tensor({3, 2, 3, 4}, rng)), b = leaf(rand_tensor({3}, rng));
    const ad::Conv2dParams p{{2, 1}, {1, 2}};
    CHECK(grad_check({x, w, b}, [&] { return probe(ad::conv2d(x, w, b, p)); }) < 1e-6);

    auto z = leaf(rand_tensor({2, 3, 3, 4}, rng));
    auto wt = leaf(rand_tensor({3, 2, 4, 4}, rng)), bt = leaf(rand_tensor({2}, rng));
    const ad::Conv2dParams q{{2, 2}, {1, 1}};
    CHECK(grad_check({z, wt, bt}, [&] { return probe(ad::conv_transpose2d(z, wt, bt, q)); }) < 1e-6);

    auto g = leaf(rand_tensor({2}, rng, 0.5, 1.5)), be = leaf(rand_tensor({2}, rng));
    ad::BatchNormState st;
    CHECK(grad_check({x, g, be}, [&] { return probe(ad::batch_norm(x, g, be, st, true)); }) < 1e-6);
    auto x2 = leaf(rand_tensor({5, 2}, rng));
    CHECK(grad_check({x2, g, be}, [&] { return probe(ad::batch_norm(x2, g, be, st, true)); }) < 1e-6);
}

TEST_CASE("batch norm running statistics drive evaluation mode") {
    Rng rng(5);
    ad::BatchNormState st;
    st.momentum = 1.0;  // running stats = last batch
    const Tensor x = rand_tensor({4, 1, 2, 2}, rng);
    auto g = ad::constant(Tensor({1}, 1.0)), b = ad::constant(Tensor({1}, 0.0));
    const Tensor yt = ad::batch_norm(ad::constant(x), g, b, st, true).value();
    const Tensor ye = ad::batch_norm(ad::constant(x), g, b, st, false).value();
    // Training uses the biased variance, the running estimate the unbiased one.
    const double n = 16.0, ratio = std::sqrt((n - 1) / n);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(ye[i] == doctest::Approx(yt[i] * ratio).epsilon(1e-3));
}

TEST_CASE("no graph is recorded under NoGradGuard") {
    auto a = leaf(Tensor({2}, 1.0));
    ad::Var y;
    {
        ad::NoGradGuard g;
        CHECK_FALSE(ad::grad_enabled());
        y = ad::tanh(a);
    }
    CHECK(ad::grad_enabled());
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("backward accumulates over shared subgraphs") {
    auto a = leaf(Tensor({1}, 3.0));
    auto y = a * a + a;  // dy/da = 2a + 1
    ad::backward(ad::sum(y));
    CHECK(a.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("shape mismatches raise ShapeError") {
    auto a = ad::constant(Tensor({2, 3})), b = ad::constant(Tensor({3, 2}));
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);
    CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);
    CHECK_THROWS_AS(ad::reshape(a, {4}), ShapeError);
}
