#include "avt/bounds.hpp"
#include "avt/data.hpp"
#include "avt/eval.hpp"
#include "avt/groups.hpp"
#include "avt/network.hpp"
#include "avt/rng.hpp"
#include "avt/train.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace avt;

Tensor random_matrix(int r, int c, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t({r, c}, 0.0);
    for (double& v : t.v) v = rng.uniform(-1, 1);
    return t;
}

void BM_GemmNT(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor a = random_matrix(128, n, 1);
    Tensor b = random_matrix(n, n, 2);
    for (auto _ : state) {
        Tensor c = gemm_nt(a, b);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 128ll * n * n);
}
BENCHMARK(BM_GemmNT)->Arg(64)->Arg(256)->Arg(784);

Network mlp_small_fixture() {
    return build_network(ArchSpec{"mlp-small", {}, false}, {1, 28, 28}, 10, 7);
}

void BM_ForwardBatch(benchmark::State& state) {
    Network net = mlp_small_fixture();
    Rng rng(3);
    Tensor x({128, 1, 28, 28}, 0.0);
    for (double& v : x.v) v = rng.uniform01();
    for (auto _ : state) {
        Tensor logits = forward_batch(net, x);
        benchmark::DoNotOptimize(logits.data());
    }
    state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_ForwardBatch);

void BM_MarginBounds(benchmark::State& state) {
    Network net = mlp_small_fixture();
    Rng rng(4);
    Tensor x({1, 28, 28}, 0.0);
    for (double& v : x.v) v = rng.uniform01();
    SpecMatrix spec = spec_standard(3, 10);
    for (auto _ : state) {
        MarginBounds mb = margin_bounds(net, spec, x, 0.1);
        benchmark::DoNotOptimize(mb.lower.data());
    }
}
BENCHMARK(BM_MarginBounds);

void BM_RobustBatchLoss(benchmark::State& state) {
    BlobSpec s;
    s.n_classes = 4;
    s.input_dim = 2;
    s.class_centers = {{0.1, 0.1}, {0.2, 0.1}, {0.8, 0.9}, {0.9, 0.9}};
    s.noise_stddev = 0.02;
    s.samples_per_class = 32;
    s.seed = 5;
    Dataset ds = synth_blobs(s);
    ArchSpec arch;
    arch.custom = {DenseSpec{0, 32}, ReluSpec{}, DenseSpec{0, 0}};
    Network net = build_network(arch, ds.sample_shape, 4, 5);
    Batch b = batches(ds, 128, 0, 0)[0];
    LossMode mode = LossMode::robust(0.1);
    for (auto _ : state) {
        ParamGrads grads = ParamGrads::zeros_like(net);
        double loss = batch_loss(net, b, mode, 0.5, 1.0, nullptr, &grads);
        benchmark::DoNotOptimize(loss);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b.labels.size()));
}
BENCHMARK(BM_RobustBatchLoss);

void BM_AgglomerativeCluster(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor w = random_matrix(n, 64, 9);
    for (auto _ : state) {
        ClusterTree tree = agglomerative_cluster(w);
        benchmark::DoNotOptimize(tree.nodes.data());
    }
}
BENCHMARK(BM_AgglomerativeCluster)->Arg(10)->Arg(100);

} // namespace
