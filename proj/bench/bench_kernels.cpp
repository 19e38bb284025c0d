// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include "distill/kernels.hpp"
#include "distill/rng.hpp"
#include "distill/sparse.hpp"
#include "distill/tensor.hpp"

namespace {

namespace k = distill::kernels;
using distill::Tensor;

Tensor random(std::size_t rows, std::size_t cols, double density = 1.0) {
  distill::Rng rng(rows * 131 + cols);
  Tensor t({rows, cols});
  for (double& v : t.values()) v = rng.uniform() < density ? rng.normal() : 0.0;
  return t;
}

// Square attention-sized products: N x d times d x N and back.
template <auto Fn>
void matmul(benchmark::State& state) {
  const std::size_t n = state.range(0), d = state.range(1);
  const Tensor a = random(n, d), b = random(d, n);
  Tensor c({n, n});
  for (auto _ : state) {
    Fn(a.values(), b.values(), c.values(), n, d, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * d));
}

template <auto Fn>
void matmul_nt(benchmark::State& state) {
  const std::size_t n = state.range(0), d = state.range(1);
  const Tensor a = random(n, d), b = random(n, d);
  Tensor c({n, n});
  for (auto _ : state) {
    Fn(a.values(), b.values(), c.values(), n, d, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * d));
}

template <auto Fn>
void matmul_tn(benchmark::State& state) {
  const std::size_t n = state.range(0), d = state.range(1);
  const Tensor a = random(n, n), b = random(n, d);
  Tensor c({n, d});
  for (auto _ : state) {
    Fn(a.values(), b.values(), c.values(), n, n, d);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * d));
}

template <auto Fn>
void softmax(benchmark::State& state) {
  const std::size_t n = state.range(0);
  const Tensor a = random(n, n);
  Tensor out({n, n});
  for (auto _ : state) {
    Fn(a.values(), out.values(), n, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

// Bag-of-words sized sparse features times a dense projection.
template <auto Fn>
void spmm(benchmark::State& state) {
  const std::size_t n = state.range(0), features = 3703, width = 64;
  const auto s = distill::CsrMatrix::from_dense(random(n, features, 0.01));
  const Tensor x = random(features, width);
  Tensor out({n, width});
  for (auto _ : state) {
    Fn(s, x.values(), out.values(), width);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.nnz() * width));
}

void attention_args(benchmark::internal::Benchmark* b) {
  for (long n : {600, 1200}) b->Args({n, 16});
}

}  // namespace

BENCHMARK(matmul<k::matmul>)->Apply(attention_args);
BENCHMARK(matmul<k::serial::matmul>)->Apply(attention_args);
BENCHMARK(matmul_nt<k::matmul_nt_acc>)->Apply(attention_args);
BENCHMARK(matmul_nt<k::serial::matmul_nt_acc>)->Apply(attention_args);
BENCHMARK(matmul_tn<k::matmul_tn_acc>)->Apply(attention_args);
BENCHMARK(matmul_tn<k::serial::matmul_tn_acc>)->Apply(attention_args);
BENCHMARK(softmax<k::softmax_rows>)->Arg(600)->Arg(1200);
BENCHMARK(softmax<k::serial::softmax_rows>)->Arg(600)->Arg(1200);
BENCHMARK(spmm<k::spmm>)->Arg(3327);
BENCHMARK(spmm<k::serial::spmm>)->Arg(3327);

BENCHMARK_MAIN();
