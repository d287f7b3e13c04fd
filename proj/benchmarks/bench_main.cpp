#include <benchmark/benchmark.h>

#include <vector>

#include "resadapt/compression.hpp"
#include "resadapt/network.hpp"
#include "resadapt/ops.hpp"
#include "resadapt/rng.hpp"

using namespace resadapt;

namespace {

template <typename T>
Tensor<T> noise(Shape s, CounterRng& rng) {
    Tensor<T> t(s);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = T(rng.next_gaussian());
    }
    return t;
}

void BM_Conv2d(benchmark::State& state) {
    const auto c = std::size_t(state.range(0));
    CounterRng rng(1);
    const Tensor<float> x = noise<float>(Shape{8, 16, 16, c}, rng);
    const FilterBank<float> f(noise<float>(Shape{3, 3, c, c}, rng));
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(x, f, ConvGeometry{1, 1}));
    }
    state.SetItemsProcessed(state.iterations() * std::int64_t(8 * 16 * 16 * 9 * c * c));
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Svd(benchmark::State& state) {
    const auto n = Eigen::Index(state.range(0));
    CounterRng rng(2);
    Matrix<double> m(n, 4 * n);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.next_gaussian();
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(svd(m));
    }
}
BENCHMARK(BM_Svd)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    NetworkConfig cfg;
    cfg.widths = {16, 32, 64};
    cfg.blocks_per_macro = 1;
    CounterRng rng(3);
    Network<float> net(cfg, rng);
    auto& d = net.add_domain("d", 10, PlacementConfig::all(Topology::Parallel), rng);
    const Tensor<float> x = noise<float>(Shape{32, 16, 16, 3}, rng);
    std::vector<std::uint32_t> labels(32);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = std::uint32_t(i % 10);
    }
    const auto part = partition_params(net, "d", Regime::AdaptersOnly);
    for (auto _ : state) {
        ForwardTrace<float> trace;
        const Tensor<float> feats = net.forward_features(x, "d", Mode::Train, &trace, 0);
        const auto out = classifier_head(feats, d.head_weights, d.head_bias, labels);
        const auto hg = classifier_head_backward(feats, d.head_weights, out, labels);
        Gradients<float> grads;
        net.backward(trace, hg.dx, part.trainable, grads);
        benchmark::DoNotOptimize(grads);
    }
    state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
