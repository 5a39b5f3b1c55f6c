#include <benchmark/benchmark.h>

#include "cpae/autoencoder.hpp"
#include "cpae/continuity.hpp"
#include "cpae/scene.hpp"

using namespace cpae;

namespace {

Tensor uniform(const Shape& s, Rng& rng) {
    Tensor t(s);
    for (double& v : t.span()) v = rng.uniform(-1, 1);
    return t;
}

void BM_Conv2dForwardBackward(benchmark::State& st) {
    const int res = static_cast<int>(st.range(0));
    Rng rng(1);
    const ad::Var x(uniform({8, 1, res, res}, rng), false);
    ad::Var w(uniform({16, 1, 6, 6}, rng), true), b(uniform({16}, rng), true);
    for (auto _ : st) {
        w.zero_grad();
        b.zero_grad();
        ad::backward(ad::sum_squares(ad::conv2d(x, w, b, {{2, 2}, {2, 2}})));
        benchmark::DoNotOptimize(w.grad().data());
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_RasterizeSoft(benchmark::State& st) {
    const int res = static_cast<int>(st.range(0));
    scene::SceneState s{{scene::Shape::disc({0.3, 0.5}, 0.1), scene::Shape::polygon({{0.6, 0.4}, {0.8, 0.4}, {0.7, 0.6}})},
                        {{}, {}}};
    for (auto _ : st) benchmark::DoNotOptimize(scene::rasterize_soft(s, res).data.data());
}
BENCHMARK(BM_RasterizeSoft)->Arg(48)->Arg(128);

void BM_RasterizeBinary(benchmark::State& st) {
    const int res = static_cast<int>(st.range(0));
    scene::SceneState s{{scene::Shape::disc({0.3, 0.5}, 0.1)}, {{}}};
    for (auto _ : st) benchmark::DoNotOptimize(scene::rasterize_binary(s, res).data.data());
}
BENCHMARK(BM_RasterizeBinary)->Arg(64)->Arg(256);

void BM_ContinuityPenalty(benchmark::State& st) {
    const int k = static_cast<int>(st.range(0));
    Rng rng(2);
    ad::Var f(uniform({32, 1, k, k}, rng), true);
    cont::KernelSpec spec;
    spec.sigma = 2.0;
    for (auto _ : st) {
        f.zero_grad();
        ad::backward(cont::continuity_penalty({f}, spec));
        benchmark::DoNotOptimize(f.grad().data());
    }
}
BENCHMARK(BM_ContinuityPenalty)->Arg(6)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_AutoencoderStep(benchmark::State& st) {
    Rng rng(3);
    ae::ConvAutoencoder net(ae::preset("desk_cpae", 64, 1, 2), rng);
    const auto x = ad::constant(Tensor({16, 1, 64, 64}, 0.5));
    for (auto _ : st) ad::backward(ad::sum_squares(net.decode(net.encode(x, true), true) - x));
}
BENCHMARK(BM_AutoencoderStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
