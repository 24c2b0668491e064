#pragma once

#include <cmath>
#include <random>

#include "ctm/design.hpp"
#include "ctm/simulate.hpp"

namespace fixture {

/// Small data set with two smooth covariates, a ridge factor, treatment and instrument.
inline ctm::DataSet rich_data(std::size_t n, std::uint64_t seed, double rho = 0.3) {
  ctm::DgpConfig cfg;
  cfg.n = n;
  cfg.set_rho(rho);
  cfg.censor_max = 4.0;
  ctm::SimulatedData sim = ctm::generate(cfg, seed);
  std::mt19937_64 gen(seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  std::uniform_int_distribution<int> level(0, 3);
  std::vector<double> w(n), v(n), f(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = unif(gen);
    v[i] = unif(gen);
    f[i] = level(gen);
  }
  sim.data.add_column("w", std::move(w));
  sim.data.add_column("v", std::move(v));
  auto& col = sim.data.add_column("f", std::move(f));
  col.levels = {"a", "b", "c", "d"};
  return std::move(sim.data);
}

/// Two smooths and a monotone time term in the outcome, a ridge factor in the selection equation.
inline ctm::ModelSpec rich_model(int smooth_dim = 6, int time_dim = 6) {
  using ctm::TermKind;
  ctm::ModelSpec spec;
  spec.outcome = {{TermKind::monotone, "time", time_dim},
                  {TermKind::treatment, "", 0},
                  {TermKind::smooth, "w", smooth_dim},
                  {TermKind::smooth, "v", smooth_dim}};
  spec.selection = {{TermKind::parametric, "x", 0}, {TermKind::parametric, "z", 0}, {TermKind::ridge, "f", 0}};
  return spec;
}

/// A working parameter vector in the neighbourhood of typical fits.
inline Eigen::VectorXd random_delta(const ctm::DesignBundle& b, std::mt19937_64& gen) {
  std::normal_distribution<double> normal;
  const auto& L = b.layout;
  Eigen::VectorXd d(L.psi());
  for (Eigen::Index j = 0; j < d.size(); ++j) d[j] = 0.3 * normal(gen);
  for (int j = 1; j < L.monotone_size; ++j) d[L.monotone_offset + j] = std::log(0.6) + 0.2 * normal(gen);
  d[L.monotone_offset] = -1.0 + 0.2 * normal(gen);
  d[L.rho_index()] = 0.6 * normal(gen);
  return d;
}

}  // namespace fixture
