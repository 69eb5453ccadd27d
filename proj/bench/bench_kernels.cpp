// Serial reference vs OpenMP energy-statistic kernels.

#include <random>

#include <benchmark/benchmark.h>

#include "sslgm/kernels.hpp"

namespace k = sslgm::kernels;

namespace {

Eigen::MatrixXd points(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::MatrixXd Y(n, m);
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = z(rng);
  return Y;
}

template <auto Fn>
void distance(benchmark::State& state) {
  const Eigen::MatrixXd Y = points(state.range(0), 4, 1);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(Y, 1.0));
  state.SetComplexityN(state.range(0));
}

template <auto Fn>
void divergence(benchmark::State& state) {
  const Eigen::MatrixXd A = points(state.range(0), 4, 2);
  const Eigen::MatrixXd B = points(state.range(0), 4, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(A, B, 1.0));
}

template <auto Fn>
void permutations(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  const Eigen::MatrixXd D = k::serial::distance_power_matrix(points(n, 2, 4), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(D, 0, n, 4, 199, 9));
}

}  // namespace

BENCHMARK(distance<k::serial::distance_power_matrix>)->Name("distance/serial")->Arg(200)->Arg(800)->Arg(2000);
BENCHMARK(distance<k::omp::distance_power_matrix>)->Name("distance/omp")->Arg(200)->Arg(800)->Arg(2000);
BENCHMARK(divergence<k::serial::energy_divergence>)->Name("divergence/serial")->Arg(100)->Arg(500)->Arg(1500);
BENCHMARK(divergence<k::omp::energy_divergence>)->Name("divergence/omp")->Arg(100)->Arg(500)->Arg(1500);
BENCHMARK(permutations<k::serial::permutation_null>)->Name("permutation_null/serial")->Arg(100)->Arg(200)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(permutations<k::omp::permutation_null>)->Name("permutation_null/omp")->Arg(100)->Arg(200)
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
