#include <benchmark/benchmark.h>

#include <random>

#include "ctm/likelihood.hpp"
#include "ctm/simulate.hpp"

using namespace ctm;

namespace {

struct Problem {
  DesignBundle bundle;
  Eigen::VectorXd delta;
};

Problem make_problem(std::size_t n) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.set_rho(0.5);
  cfg.censor_max = 4.0;
  Problem p{assemble(study_model(20), generate(cfg, 11).data), {}};
  const auto& L = p.bundle.layout;
  std::mt19937_64 gen(12);
  std::normal_distribution<double> normal;
  p.delta = Eigen::VectorXd::Zero(L.psi());
  for (int j = 0; j < L.psi(); ++j) p.delta[j] = 0.1 * normal(gen);
  for (int j = 1; j < L.monotone_size; ++j) p.delta[L.monotone_offset + j] = std::log(0.5);
  p.delta[L.monotone_offset] = -2.0;
  return p;
}

template <auto Kernel>
void run_kernel(benchmark::State& state) {
  const Problem p = make_problem(static_cast<std::size_t>(state.range(0)));
  const auto order = static_cast<Derivatives>(state.range(1));
  for (auto _ : state) {
    auto e = Kernel(p.bundle, p.delta, order);
    benchmark::DoNotOptimize(e);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void arguments(benchmark::internal::Benchmark* b) {
  for (int n : {1000, 10000, 100000})
    for (Derivatives d : {Derivatives::none, Derivatives::gradient, Derivatives::hessian})
      b->Args({n, static_cast<int>(d)});
  b->ArgNames({"n", "order"})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(run_kernel<kernel::serial>)->Name("serial")->Apply(arguments);
BENCHMARK(run_kernel<kernel::parallel>)->Name("parallel")->Apply(arguments);

BENCHMARK_MAIN();
