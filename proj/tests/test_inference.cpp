#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ctm/errors.hpp"
#include "ctm/inference.hpp"
#include "ctm/likelihood.hpp"
#include "ctm/simulate.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace ctm;

namespace {

struct Fitted {
  DesignBundle bundle;
  FitResult fit;
  Posterior post;
};

Fitted fit_study(std::size_t n, std::uint64_t seed, double rho, double beta_d = 0.5, int J = 8) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.set_rho(rho);
  cfg.beta_d = beta_d;
  cfg.censor_max = 4.0;
  const SimulatedData sim = generate(cfg, seed);
  Fitted f{assemble(study_model(J), sim.data), {}, {}};
  FitOptions o;
  o.gradient_tolerance = 1e-10;
  f.fit = fit(f.bundle, o);
  f.post = covariance(f.bundle, f.fit);
  return f;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_CASE("covariance solves the penalized system") {
  const Fitted f = fit_study(600, 4, 0.4);
  REQUIRE(f.fit.convergence.converged);
  const auto& free = f.post.free;
  const Eigen::MatrixXd A = -f.fit.penalized_hessian(free, free);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  CHECK((A * f.post.V(free, free) - I).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((f.post.V - f.post.V.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((f.post.V.diagonal().array() >= 0.0).all());

  // Rows of unpenalized, untransformed coefficients carry over unchanged.
  const auto& L = f.bundle.layout;
  const Eigen::VectorXd E = L.E(f.fit.delta);
  for (int j = L.monotone_offset + L.monotone_size; j < L.psi(); ++j) {
    REQUIRE(E[j] == 1.0);
    for (int k = 0; k < L.psi(); ++k) {
      if (E[k] == 1.0) CHECK(f.post.V_tilde(j, k) == f.post.V(j, k));
    }
  }
}

TEST_CASE("covariance of a diagonal problem") {
  Fitted f = fit_study(300, 5, 0.0);
  const int psi = f.bundle.layout.psi();
  FitResult toy = f.fit;
  toy.repair = 0.0;
  toy.penalized_hessian = -Eigen::VectorXd::LinSpaced(psi, 1.0, 5.0).asDiagonal().toDenseMatrix();
  const Posterior p = covariance(f.bundle, toy);
  for (int j = 0; j < psi; ++j) CHECK(p.V(j, j) == doctest::Approx(1.0 / (1.0 + 4.0 * j / (psi - 1))).epsilon(1e-14));

  toy.penalized_hessian(2, 2) = 0.0;
  try {
    covariance(f.bundle, toy);
    FAIL("expected InferenceError");
  } catch (const InferenceError& e) {
    CHECK(std::string(e.what()).find("smallest eigenvalue") != std::string::npos);
  }
}

TEST_CASE("selection standard errors match an independent probit fit") {
  // With rho held at 0 the selection block separates and is an ordinary probit.
  DgpConfig cfg;
  cfg.n = 800;
  cfg.set_rho(0.2);
  cfg.censor_max = 4.0;
  const SimulatedData sim = generate(cfg, 12);
  const DesignBundle b = assemble(study_model(6), sim.data);
  FitOptions o;
  o.fix_rho = true;
  o.gradient_tolerance = 1e-11;
  const FitResult r = fit(b, o);
  REQUIRE(r.convergence.converged);
  const Posterior post = covariance(b, r);
  const auto ref = oracle::probit_irls(b.Z, b.treatment);
  const int off = b.layout.selection_offset();
  for (int j = 0; j < b.layout.selection_size; ++j) {
    CHECK(post.mean[off + j] == doctest::Approx(ref.beta[j]).epsilon(1e-6));
    CHECK(std::sqrt(post.V_tilde(off + j, off + j)) == doctest::Approx(ref.se[j]).epsilon(1e-4));
  }
}

TEST_CASE("effective degrees of freedom limits and trace identity") {
  const DataSet data = fixture::rich_data(400, 8);
  const DesignBundle b = assemble(fixture::rich_model(), data);
  const int psi = b.layout.psi();
  const auto k = static_cast<Eigen::Index>(b.penalties.size());
  FitOptions o;
  o.gradient_tolerance = 1e-9;

  o.fixed_lambda = Eigen::VectorXd::Zero(k);
  const FitResult r0 = fit(b, o);
  REQUIRE(r0.repair == 0.0);
  const EdfReport e0 = edf(b, r0);
  CHECK(e0.total == doctest::Approx(psi).epsilon(1e-8));
  CHECK(std::abs(e0.total - e0.total_trace) <= 1e-8);

  o.fixed_lambda = Eigen::VectorXd::Constant(k, 1e10);
  const FitResult rinf = fit(b, o);
  REQUIRE(rinf.repair == 0.0);
  const EdfReport einf = edf(b, rinf);
  CHECK(std::abs(einf.total - (psi - b.zeta())) <= 0.01);
  CHECK(std::abs(einf.total - einf.total_trace) <= 1e-8);

  o.fixed_lambda = Eigen::VectorXd::Constant(k, 3.0);
  const FitResult mid = fit(b, o);
  const EdfReport em = edf(b, mid);
  CHECK(std::abs(em.total - em.total_trace) <= 1e-8);
  CHECK(em.total >= psi - b.zeta() - 1e-8);
  CHECK(em.total <= psi + 1e-8);
  double by_term = 0.0;
  for (const auto& t : em.terms) by_term += t.edf;
  CHECK(by_term == doctest::Approx(em.total).epsilon(1e-10));
  CHECK(mid.edf_total == doctest::Approx(em.total).epsilon(1e-10));
}

TEST_CASE("Wald p-values") {
  CHECK(wald_p_value(0.0, 0.3) == 1.0);
  CHECK(wald_p_value(1.96, 1.0) == doctest::Approx(0.05).epsilon(1e-3));
  CHECK(wald_p_value(-1.0, 0.5) == doctest::Approx(2.0 * oracle::Phi(-2.0)).epsilon(1e-12));

  // Full-rank statistic equals f' V^-1 f.
  Eigen::Matrix2d V;
  V << 2.0, 0.5, 0.5, 1.0;
  const Eigen::Vector2d f(0.7, -0.4);
  const auto [stat, p] = rank_wald(f, V, 2);
  CHECK(stat == doctest::Approx(f.dot(V.inverse() * f)).epsilon(1e-12));
  CHECK(p == doctest::Approx(std::exp(-stat / 2.0)).epsilon(1e-10));
}

TEST_CASE("correlation interval") {
  Fitted f = fit_study(300, 6, 0.3);
  Posterior post = f.post;
  FitResult fit = f.fit;
  const auto ir = static_cast<Eigen::Index>(f.bundle.layout.rho_index());
  fit.delta[ir] = 0.0;
  post.mean[ir] = 0.0;
  post.V(ir, ir) = 0.04;
  const RhoInterval r = rho_interval(fit, post);
  CHECK(r.rho == 0.0);
  CHECK(r.lo == doctest::Approx(std::tanh(-1.959963984540054 * 0.2)).epsilon(1e-12));
  CHECK(r.hi == -r.lo);

  post.mean[ir] = 0.8;
  post.V(ir, ir) = 1e6;
  const RhoInterval wide = rho_interval(fit, post);
  CHECK(wide.lo >= -1.0);
  CHECK(wide.hi <= 1.0);
  CHECK(wide.lo < -0.999);
  CHECK(wide.hi > 0.999);

  const RhoInterval fitted = rho_interval(f.fit, f.post);
  CHECK(fitted.lo <= fitted.rho);
  CHECK(fitted.rho <= fitted.hi);
}

TEST_CASE("summary table") {
  const Fitted f = fit_study(500, 9, 0.3);
  const Summary s = summary(f.bundle, f.fit, f.post);
  CHECK(s.n == 500);
  CHECK(s.smooth.size() == 1);
  CHECK(s.smooth[0].rank >= 1);
  bool found = false;
  for (const auto& row : s.parametric) {
    CHECK(row.std_error > 0.0);
    CHECK(row.p_value >= 0.0);
    CHECK(row.p_value <= 1.0);
    CHECK(row.z == doctest::Approx(row.estimate / row.std_error));
    if (row.equation == "outcome" && row.term == "treatment") {
      found = true;
      CHECK(row.estimate == f.post.mean_tilde[f.bundle.treatment_column]);
    }
  }
  CHECK(found);
}

TEST_CASE("SATE identities") {
  const Fitted f = fit_study(500, 10, 0.3);
  const std::vector<double> times = time_grid(0.0, 3.5, 30);
  Eigen::VectorXd delta = f.fit.delta;
  delta[f.bundle.treatment_column] = 0.0;
  for (double v : sate_point(f.bundle, delta, times)) CHECK(v == 0.0);

  const auto forward = sate_point(f.bundle, f.fit.delta, times);
  const auto swapped = sate_point(f.bundle, f.fit.delta, times, {}, 0, 1);
  for (std::size_t t = 0; t < times.size(); ++t) CHECK(swapped[t] == -forward[t]);

  const CurveSet c = sate(f.bundle, f.post, times, {}, {200, 0.05, 3});
  for (std::size_t t = 0; t < times.size(); ++t) {
    CHECK(c.curves[0].estimate[t] == forward[t]);
    CHECK(c.curves[0].lo[t] <= forward[t]);
    CHECK(c.curves[0].hi[t] >= forward[t]);
    CHECK(c.curves[0].lo[t] >= -1.0);
    CHECK(c.curves[0].hi[t] <= 1.0);
  }
  CHECK_THROWS_AS(sate(f.bundle, f.post, {}, {}, {}), ConfigError);
}

TEST_CASE("posterior draws are reproducible") {
  const Fitted f = fit_study(400, 11, 0.3);
  const std::vector<double> times = time_grid(0.0, 3.0, 12);
  const std::vector<Group> groups{{"treated", all_rows(400), 1}, {"control", all_rows(400), 0}};
  const DrawOptions o{100, 0.05, 42, true};
  const CurveSet a = survival_curves(f.bundle, f.post, times, groups, o);
  const CurveSet b = survival_curves(f.bundle, f.post, times, groups, o);
  DrawOptions other = o;
  other.seed = 43;
  const CurveSet c = survival_curves(f.bundle, f.post, times, groups, other);
  for (std::size_t g = 0; g < 2; ++g) {
    CHECK(a.curves[g].lo == b.curves[g].lo);
    CHECK(a.curves[g].hi == b.curves[g].hi);
    CHECK(a.curves[g].draws == b.curves[g].draws);
    CHECK(a.curves[g].estimate == c.curves[g].estimate);
    CHECK(a.curves[g].lo != c.curves[g].lo);
  }
}

TEST_CASE("survival curves") {
  const Fitted f = fit_study(800, 13, 0.3, 0.6);
  const std::vector<double> times = time_grid(0.0, 3.5, 40);
  const std::vector<Group> groups{{"treated", all_rows(800), 1}, {"control", all_rows(800), 0}};
  const CurveSet c95 = survival_curves(f.bundle, f.post, times, groups, {400, 0.05, 1, true});
  const CurveSet c99 = survival_curves(f.bundle, f.post, times, groups, {400, 0.01, 1});
  REQUIRE(f.post.mean_tilde[f.bundle.treatment_column] > 0.0);
  for (std::size_t g = 0; g < 2; ++g) {
    CHECK(increase_violations(c95.curves[g].estimate) == 0);
    for (const auto& d : c95.curves[g].draws) CHECK(increase_violations(d) == 0);
    for (std::size_t t = 0; t < times.size(); ++t) {
      CHECK(c99.curves[g].lo[t] <= c95.curves[g].lo[t]);
      CHECK(c99.curves[g].hi[t] >= c95.curves[g].hi[t]);
    }
  }
  for (std::size_t t = 0; t < times.size(); ++t) CHECK(c95.curves[0].estimate[t] <= c95.curves[1].estimate[t]);

  REQUIRE(c95.survival_at_zero.size() == 2);
  for (double s : c95.survival_at_zero) {
    CHECK(s > 0.0);
    CHECK(s <= 1.0);
    CHECK(c95.left_boundary_flag == (s < 0.99 || c95.left_boundary_flag));
  }
  CHECK(c95.left_boundary_flag == (*std::min_element(c95.survival_at_zero.begin(), c95.survival_at_zero.end()) < 0.99));
  CHECK_THROWS_AS(survival_curves(f.bundle, f.post, {}, groups, {}), ConfigError);
  CHECK_THROWS_AS(survival_curves(f.bundle, f.post, {50.0}, groups, {}), ConfigError);
}

TEST_CASE("band quantiles are stable in the number of draws") {
  const Fitted f = fit_study(2000, 14, 0.3);
  const std::vector<double> times = time_grid(0.2, 3.0, 15);
  const CurveSet many = sate(f.bundle, f.post, times, {}, {10000, 0.05, 7});
  const CurveSet few = sate(f.bundle, f.post, times, {}, {100, 0.05, 8});
  double worst = 0.0;
  for (std::size_t t = 0; t < times.size(); ++t) {
    worst = std::max(worst, std::abs(many.curves[0].lo[t] - few.curves[0].lo[t]));
    worst = std::max(worst, std::abs(many.curves[0].hi[t] - few.curves[0].hi[t]));
  }
  CHECK(worst <= 0.01);
}

TEST_CASE("empirical quantile") {
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.25) == doctest::Approx(1.75));
  CHECK_THROWS_AS(quantile({}, 0.5), DomainError);
  CHECK(time_grid(0.0, 1.0, 5).back() == 1.0);
  CHECK_THROWS_AS(time_grid(0.0, 1.0, 0), ConfigError);
}
