#include <benchmark/benchmark.h>

#include <vector>

#include "hiersev/attacks.hpp"
#include "hiersev/hierarchy.hpp"
#include "hiersev/netcore.hpp"
#include "hiersev/rng.hpp"
#include "hiersev/synthdata.hpp"

using namespace hiersev;

namespace {

const Hierarchy& tree44() {
    static const Hierarchy t = [] {
        const int b[] = {4, 4};
        return gen_tree(b);
    }();
    return t;
}

std::vector<double> random_input(int d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(static_cast<std::size_t>(d));
    for (auto& v : x) v = rng.uniform();
    return x;
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
    const int width = static_cast<int>(state.range(0));
    const auto net = make_classifier({16, {width}, width, 16}, 1);
    const auto x = random_input(16, 2);
    for (auto _ : state) benchmark::DoNotOptimize(forward(net, x));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128);

static void BM_ForwardBackward(benchmark::State& state) {
    const int width = static_cast<int>(state.range(0));
    const auto net = make_classifier({16, {width}, width, 16}, 1);
    const auto x = random_input(16, 2);
    for (auto _ : state) {
        const auto cache = forward_cached(net, x);
        const auto loss = cross_entropy(cache.logits, 3);
        auto g = Gradients::zeros_like(net);
        benchmark::DoNotOptimize(backward(net, cache, loss.grad, &g));
    }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(128);

static void BM_AttackLoss(benchmark::State& state) {
    const auto& t = tree44();
    const auto z = random_input(16, 3);
    AttackSpec spec;
    spec.kind = static_cast<AttackKind>(state.range(0));
    spec.height = spec.kind == AttackKind::NHA ? 1 : 2;
    for (auto _ : state) benchmark::DoNotOptimize(attack_loss(spec, z, 5, t));
    state.SetLabel(spec.label());
}
BENCHMARK(BM_AttackLoss)->DenseRange(0, 3);

static void BM_Pgd(benchmark::State& state) {
    const auto& t = tree44();
    const auto net = make_classifier({16, {32}, 32, 16}, 1);
    const auto x = random_input(16, 4);
    AttackSpec spec{AttackKind::GHA, 2, 8 / 255.0, 1 / 255.0, static_cast<int>(state.range(0))};
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(pgd(net, t, x, 5, spec, ++seed));
}
BENCHMARK(BM_Pgd)->Arg(10)->Arg(50);

static void BM_GreaterMask(benchmark::State& state) {
    const int b[] = {4, 4, 4};
    const auto t = gen_tree(b);
    int y = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(t.greater_mask(y, 2));
        y = (y + 1) % t.num_leaves();
    }
}
BENCHMARK(BM_GreaterMask);

static void BM_Hdist(benchmark::State& state) {
    const int b[] = {4, 4, 4};
    const auto t = gen_tree(b);
    int a = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(t.hdist(a, 63 - a));
        a = (a + 1) % t.num_leaves();
    }
}
BENCHMARK(BM_Hdist);
BENCHMARK_MAIN();
