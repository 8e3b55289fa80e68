// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "sscl/numkit.hpp"

using namespace sscl;

namespace {

Matrix random(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Matrix m(r, c);
    for (double& v : m.data()) v = n(rng);
    return m;
}

template <auto Fn>
void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Matrix a = random(n, n, 1), b = random(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Fn>
void bm_softmax(benchmark::State& state) {
    Matrix x = random(static_cast<std::size_t>(state.range(0)), 100, 3);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(x, 0.1));
}

template <auto Fn>
void bm_normalize(benchmark::State& state) {
    Matrix x = random(static_cast<std::size_t>(state.range(0)), 64, 4);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(x, kNormEps));
}

template <auto Fn>
void bm_cosine(benchmark::State& state) {
    Matrix a = random(static_cast<std::size_t>(state.range(0)), 32, 5), b = random(100, 32, 6);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b, kNormEps));
}

}  // namespace

BENCHMARK(bm_matmul<static_cast<Matrix (*)(const Matrix&, const Matrix&)>(&matmul)>)
    ->Name("matmul/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<&reference::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_softmax<static_cast<Matrix (*)(const Matrix&, double)>(&softmax_rows)>)
    ->Name("softmax_rows/parallel")->Arg(128)->Arg(4096);
BENCHMARK(bm_softmax<&reference::softmax_rows>)->Name("softmax_rows/serial")->Arg(128)->Arg(4096);
BENCHMARK(bm_normalize<static_cast<NormalizeResult (*)(const Matrix&, double)>(&l2_normalize_rows)>)
    ->Name("l2_normalize_rows/parallel")->Arg(128)->Arg(4096);
BENCHMARK(bm_normalize<&reference::l2_normalize_rows>)->Name("l2_normalize_rows/serial")->Arg(128)->Arg(4096);
BENCHMARK(bm_cosine<static_cast<CosineResult (*)(const Matrix&, const Matrix&, double)>(&cosine_similarity_matrix)>)
    ->Name("cosine_similarity/parallel")->Arg(128)->Arg(4096);
BENCHMARK(bm_cosine<&reference::cosine_similarity_matrix>)->Name("cosine_similarity/serial")->Arg(128)->Arg(4096);

BENCHMARK_MAIN();
