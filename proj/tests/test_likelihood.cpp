#include <doctest.h>

#include <random>

#include <omp.h>

#include "ctm/likelihood.hpp"
#include "ctm/numerics.hpp"
#include "ctm/run.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace ctm;

namespace {

struct Instance {
  DesignBundle bundle;
  Eigen::VectorXd delta;
};

Instance instance(std::size_t n, std::uint64_t seed) {
  DesignBundle b = assemble(fixture::rich_model(), fixture::rich_data(n, seed));
  std::mt19937_64 gen(seed + 100);
  Eigen::VectorXd d = fixture::random_delta(b, gen);
  return {std::move(b), std::move(d)};
}

}  // namespace

TEST_CASE("single-row values") {
  const auto r = row_contribution(RowCase::d0_censored, 0.0, 0.0, 0.0, 1.0, Derivatives::none);
  REQUIRE(r);
  CHECK(r->value == doctest::Approx(std::log(0.25)).epsilon(1e-15));

  // d = 1 censored: S - P00 = Phi(-eta1) - Phi2(-eta2, -eta1; rho).
  const double e1 = 0.3, e2 = -0.4, rs = 0.5;
  const auto c1 = row_contribution(RowCase::d1_censored, e1, e2, rs, 1.0, Derivatives::none);
  REQUIRE(c1);
  CHECK(c1->value == doctest::Approx(std::log(norm_cdf(-e1) - bvn_cdf(-e2, -e1, std::tanh(rs)))).epsilon(1e-13));

  // d = 1 event: phi(-eta1) g - P01 with P01 = dP00/db * g.
  const double g = 0.8;
  const auto ev = row_contribution(RowCase::d1_event, e1, e2, rs, g, Derivatives::none);
  REQUIRE(ev);
  const double dens = norm_pdf(-e1) * g - bvn_cdf_partial_b(-e2, -e1, std::tanh(rs)) * g;
  CHECK(dens > 0.0);
  CHECK(ev->value == doctest::Approx(std::log(dens)).epsilon(1e-13));
  const auto e0 = row_contribution(RowCase::d0_event, e1, e2, rs, g, Derivatives::none);
  REQUIRE(e0);
  CHECK(e0->value == doctest::Approx(std::log(bvn_cdf_partial_b(-e2, -e1, std::tanh(rs)) * g)).epsilon(1e-13));
}

TEST_CASE("invalid points are signalled, not thrown") {
  CHECK_FALSE(row_contribution(RowCase::d1_event, 0.1, 0.2, 0.1, 0.0, Derivatives::hessian));
  CHECK_FALSE(row_contribution(RowCase::d0_event, 0.1, 0.2, 0.1, -1.0, Derivatives::none));
  CHECK_FALSE(row_contribution(RowCase::d0_censored, std::nan(""), 0.2, 0.1, 1.0, Derivatives::none));
  CHECK_FALSE(row_contribution(RowCase::d0_censored, 0.1, 0.2, 40.0, 1.0, Derivatives::none));

  auto inst = instance(60, 1);
  inst.delta[inst.bundle.layout.rho_index()] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(loglik(inst.bundle, inst.delta));
  CHECK_FALSE(score(inst.bundle, inst.delta));
}

TEST_CASE("independence factorization against separately coded likelihoods") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    auto inst = instance(seed == 3 ? 50 : 200, seed);
    const auto& b = inst.bundle;
    const auto& L = b.layout;
    inst.delta[L.rho_index()] = 0.0;
    const Eigen::VectorXd e1 = eta1(b, inst.delta.head(L.outcome_size));
    const Eigen::VectorXd e2 = eta2(b, inst.delta.segment(L.selection_offset(), L.selection_size));
    const Eigen::VectorXd g = deta1_dy(b, inst.delta.head(L.outcome_size));
    const double expected = oracle::probit_loglik(e2, b.treatment) + oracle::survival_loglik(e1, g, b.status);
    const auto got = loglik(b, inst.delta);
    REQUIRE(got);
    CHECK(std::abs(*got - expected) <= 1e-10);
  }
}

TEST_CASE("likelihood parts bounds") {
  const auto inst = instance(200, 6);
  const auto parts = likelihood_parts(inst.bundle, inst.delta);
  const auto& L = inst.bundle.layout;
  const Eigen::VectorXd e2 = eta2(inst.bundle, inst.delta.segment(L.selection_offset(), L.selection_size));
  double total = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    CHECK(p.P00 >= 0.0);
    CHECK(p.P00 <= std::min(norm_cdf(-e2[static_cast<Eigen::Index>(i)]), p.S) + 1e-15);
    CHECK(p.P01 >= 0.0);
    CHECK(std::isfinite(p.logdens));
    total += p.logdens;
  }
  CHECK(total == doctest::Approx(*loglik(inst.bundle, inst.delta)).epsilon(1e-12));
}

TEST_CASE("event densities integrate to the censoring probabilities") {
  const auto inst = instance(100, 7);
  const auto& b = inst.bundle;
  const auto& L = b.layout;
  const Eigen::VectorXd lin = L.linear(inst.delta).head(L.outcome_size);
  const double e2 = b.Z.row(0).dot(inst.delta.segment(L.selection_offset(), L.selection_size));
  const double rs = inst.delta[L.rho_index()];
  const auto inc = b.monotone->reparam().increments(inst.delta.segment(L.monotone_offset, L.monotone_size));
  const double t0 = 0.05 * b.monotone->spline().hi(), t1 = 0.9 * b.monotone->spline().hi();
  for (int d : {0, 1}) {
    auto censored = [&](double t) {
      const double e1 = b.outcome_row(0, t, d).dot(lin);
      return std::exp(row_contribution(d ? RowCase::d1_censored : RowCase::d0_censored, e1, e2, rs, 1.0,
                                       Derivatives::none)->value);
    };
    auto density = [&](double t) {
      const double e1 = b.outcome_row(0, t, d).dot(lin);
      const double g = b.monotone->cumulative_row_dy(t, 1e-6).dot(inc);
      return std::exp(
          row_contribution(d ? RowCase::d1_event : RowCase::d0_event, e1, e2, rs, g, Derivatives::none)->value);
    };
    // Composite Simpson rule.
    const int m = 4000;
    const double h = (t1 - t0) / m;
    double integral = density(t0) + density(t1);
    for (int k = 1; k < m; ++k) integral += (k % 2 ? 4.0 : 2.0) * density(t0 + k * h);
    integral *= h / 3.0;
    CHECK(integral + censored(t1) == doctest::Approx(censored(t0)).epsilon(1e-6));
  }
}

TEST_CASE("penalized log-likelihood") {
  const auto inst = instance(150, 8);
  const auto& b = inst.bundle;
  const auto K = static_cast<Eigen::Index>(b.penalties.size());
  const double l = *loglik(b, inst.delta);
  CHECK(*penalized_loglik(b, inst.delta, Eigen::VectorXd::Zero(K)) == l);
  Eigen::VectorXd lambda = Eigen::VectorXd::Constant(K, 2.0);
  const double lp = *penalized_loglik(b, inst.delta, lambda);
  lambda[1] *= 2.0;
  const auto& p = b.penalties[1];
  const Eigen::VectorXd bk = inst.delta.segment(p.offset, p.size);
  CHECK(*penalized_loglik(b, inst.delta, lambda) - lp == doctest::Approx(-2.0 * bk.dot(p.matrix * bk) / 2.0));

  // A coefficient vector in the penalty null space is not penalized.
  Eigen::VectorXd null = inst.delta;
  for (const auto& pen : b.penalties) null.segment(pen.offset, pen.size).setZero();
  null[b.layout.monotone_offset] = -0.5;
  CHECK(*penalized_loglik(b, null, Eigen::VectorXd::Constant(K, 10.0)) == *loglik(b, null));
}

TEST_CASE("analytic derivatives against finite differences") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const auto inst = instance(40, seed);
    const auto& b = inst.bundle;
    const auto g = score(b, inst.delta);
    const auto gf = score_fd(b, inst.delta);
    const auto h = hessian(b, inst.delta);
    const auto hf = hessian_fd(b, inst.delta);
    REQUIRE(g);
    REQUIRE(gf);
    REQUIRE(h);
    REQUIRE(hf);
    const Eigen::Index rho = b.layout.rho_index();
    const Eigen::Index nc = rho;
    CHECK(max_relative_error(g->head(nc), gf->head(nc)) <= 1e-6);
    CHECK(max_relative_error(g->tail(1), gf->tail(1)) <= 1e-5);
    CHECK(max_relative_error(*h, *hf) <= 1e-4);
    CHECK((*h - h->transpose()).cwiseAbs().maxCoeff() <= 1e-12 * h->cwiseAbs().maxCoeff());
  }
}

TEST_CASE("cross-block Hessian at independence") {
  auto inst = instance(80, 21);
  const auto& b = inst.bundle;
  inst.delta[b.layout.rho_index()] = 0.0;
  const auto h = hessian(b, inst.delta);
  const auto hf = hessian_fd(b, inst.delta);
  REQUIRE(h);
  REQUIRE(hf);
  const int o = b.layout.outcome_size, s = b.layout.selection_size;
  CHECK(max_relative_error(h->block(0, o, o, s), hf->block(0, o, o, s)) <= 1e-4);
  // Without correlation the two equations separate.
  CHECK(h->block(0, o, o, s).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("serial reference and parallel kernel agree") {
  const auto inst = instance(1500, 22);
  const auto s = kernel::serial(inst.bundle, inst.delta, Derivatives::hessian);
  const auto p = kernel::parallel(inst.bundle, inst.delta, Derivatives::hessian);
  REQUIRE(s);
  REQUIRE(p);
  CHECK(p->loglik == doctest::Approx(s->loglik).epsilon(1e-12));
  CHECK(max_relative_error(p->gradient, s->gradient) <= 1e-10);
  CHECK(max_relative_error(p->hessian, s->hessian) <= 1e-10);
}

TEST_CASE("parallel kernel is bit-stable across thread counts") {
  const auto inst = instance(2000, 23);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = kernel::parallel(inst.bundle, inst.delta, Derivatives::hessian);
  for (int threads : {2, 3, 8}) {
    omp_set_num_threads(threads);
    const auto many = kernel::parallel(inst.bundle, inst.delta, Derivatives::hessian);
    REQUIRE(many);
    CHECK(many->loglik == one->loglik);
    CHECK(many->gradient == one->gradient);
    CHECK(many->hessian == one->hessian);
  }
  omp_set_num_threads(saved);
}

TEST_CASE("correlation enters smoothly through tanh") {
  auto inst = instance(200, 24);
  const Eigen::Index r = inst.bundle.layout.rho_index();
  double prev_slope = 0.0;
  for (double v = -1.5; v <= 1.5; v += 0.25) {
    inst.delta[r] = v;
    const auto g = score(inst.bundle, inst.delta);
    INFO("rho_star = ", v);
    REQUIRE(g);
    const double slope = (*g)[r];
    CHECK(std::isfinite(slope));
    if (v > -1.5) CHECK(std::abs(slope - prev_slope) < 1e3);
    prev_slope = slope;
  }
}

TEST_CASE("confounding diagnostics") {
  const auto zero = confounding_diagnostics(0.4, 0.7, 0.0);
  CHECK(zero.mean == 0.4);
  CHECK(zero.variance == 1.0);

  const auto half = confounding_diagnostics(0.0, 0.0, 0.5);
  CHECK(half.mills == doctest::Approx(0.7978845608028654).epsilon(1e-14));
  CHECK(half.mean == doctest::Approx(0.3989422804014327).epsilon(1e-14));

  // Monte Carlo of eps1 given eps2 > -eta2.
  std::mt19937_64 gen(42);
  std::normal_distribution<double> normal;
  for (auto [eta2, rho] : {std::pair{0.0, 0.5}, {-0.8, -0.6}, {1.2, 0.9}}) {
    double sum = 0.0, sum2 = 0.0;
    int kept = 0;
    for (int k = 0; k < 1000000; ++k) {
      const double u = normal(gen), v = normal(gen);
      const double e2 = u, e1 = rho * u + std::sqrt(1.0 - rho * rho) * v;
      if (eta2 + e2 <= 0.0) continue;
      sum += e1;
      sum2 += e1 * e1;
      ++kept;
    }
    const double mean = sum / kept, var = sum2 / kept - mean * mean;
    const auto d = confounding_diagnostics(0.0, eta2, rho);
    CHECK(std::abs(d.mean - mean) < 1e-2);
    CHECK(std::abs(d.variance - var) < 1e-2);
  }

  std::uniform_real_distribution<double> ur(-0.999, 0.999), ue(-30.0, 30.0);
  for (int k = 0; k < 1000; ++k) CHECK(confounding_diagnostics(0.0, ue(gen), ur(gen)).variance >= 0.0);
  CHECK(confounding_diagnostics(0.0, -45.0, 0.3).mills_clamped);

  const auto inst = instance(50, 25);
  const auto& L = inst.bundle.layout;
  const auto row = confounding_diagnostics(inst.bundle, inst.delta, 3);
  const double e2 = inst.bundle.Z.row(3).dot(inst.delta.segment(L.selection_offset(), L.selection_size));
  CHECK(row.mills == doctest::Approx(norm_mills(e2)));
}
