// Microbenchmarks for the hot paths: dense network application (including
// the 480x320 full-image timing), kd-tree queries, overlap accumulation and
// batched convolution forwards.

#include <benchmark/benchmark.h>

#include "n4/dictionary.hpp"
#include "n4/image.hpp"
#include "n4/net.hpp"
#include "n4/random.hpp"

using namespace n4;

namespace {

MultiChannelImage randomImage(RandomStream& rng, int channels, int h, int w) {
    MultiChannelImage img(channels, h, w);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

const std::vector<LayerSpec> kBenchStack{
    LayerSpec::convolution(5, 12), LayerSpec::relu(),         LayerSpec::maxPool(2),
    LayerSpec::convolution(3, 24), LayerSpec::relu(),         LayerSpec::maxPool(2),
    LayerSpec::fullyConnected(96), LayerSpec::relu(),         LayerSpec::dropout(0.5),
    LayerSpec::fullyConnected(16)};

void BM_DenseApply(benchmark::State& state) {
    RandomStream rng(1);
    const int side = static_cast<int>(state.range(0));
    const ConvNet net = initNet(kBenchStack, {34, 1}, 0.01, 2);
    const MultiChannelImage image = randomImage(rng, 1, side, side);
    for (auto _ : state) {
        benchmark::DoNotOptimize(denseApply(net, image));
    }
    state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_DenseApply)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

// Full-image timing on the 480x320 reference size.
void BM_DenseApply480x320(benchmark::State& state) {
    RandomStream rng(3);
    const ConvNet net = initNet(kBenchStack, {34, 3}, 0.01, 4);
    const MultiChannelImage image = randomImage(rng, 3, 320, 480);
    for (auto _ : state) {
        benchmark::DoNotOptimize(denseApply(net, image));
    }
}
BENCHMARK(BM_DenseApply480x320)->Unit(benchmark::kMillisecond);

void BM_KdQuery(benchmark::State& state) {
    RandomStream rng(5);
    const int entries = static_cast<int>(state.range(0));
    Eigen::MatrixXd codes(entries, 16);
    for (Eigen::Index i = 0; i < codes.size(); ++i) codes.data()[i] = rng.gaussian();
    KdTree tree;
    tree.build(codes);
    Eigen::VectorXd query(16);
    std::size_t i = 0;
    for (auto _ : state) {
        for (int j = 0; j < 16; ++j) query(j) = rng.gaussian();
        benchmark::DoNotOptimize(tree.nearest(query.data(), 30));
        ++i;
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_KdQuery)->Arg(10000)->Arg(100000);

void BM_AccumulateOverlaps(benchmark::State& state) {
    RandomStream rng(6);
    const int side = static_cast<int>(state.range(0));
    const int n = 16;
    AnnotationPatch patch(n);
    for (double& v : patch.values) v = rng.uniform();
    for (auto _ : state) {
        OverlapAccumulator acc(side, side, n);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) acc.add(y, x, patch);
        benchmark::DoNotOptimize(acc.finish());
    }
    state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_AccumulateOverlaps)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ConvForwardBatch(benchmark::State& state) {
    RandomStream rng(7);
    const ConvNet net = initNet(kBenchStack, {34, 1}, 0.01, 8);
    const int batch = static_cast<int>(state.range(0));
    RowMat inputs(batch, net.shapes.front().dim());
    for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.uniform();
    for (auto _ : state) {
        benchmark::DoNotOptimize(forwardBatch(net, inputs, Mode::Infer, nullptr, nullptr));
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ConvForwardBatch)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
