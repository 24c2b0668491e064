#include "ctm/likelihood.hpp"

#include <cmath>

#include "ctm/numerics.hpp"

namespace ctm {

namespace {

constexpr double kLogSqrt2Pi = 0.918938533204672741780329736406;
constexpr double kMinCorrelationRoot = 1e-8;

enum : int { kB = 0, kA = 1, kR = 2 };

// Derivatives of log Phi2(s a, b; s rho) in (b, a, rho).
bool censored_terms(int s, double a, double b, double rho, double r, Derivatives order, RowScalars& out) {
  const double A = s * a, R = s * rho;
  const double p = bvn_cdf(A, b, R);
  if (!(p > 0.0) || !std::isfinite(p)) return false;
  if (p < kLogFloor) {
    out.value = std::log(kLogFloor);
    return true;
  }
  out.value = std::log(p);
  if (order == Derivatives::none) return true;

  const double r2 = r * r;
  const double pA = norm_pdf(A) * norm_cdf((b - R * A) / r);
  const double pb = norm_pdf(b) * norm_cdf((A - R * b) / r);
  const double pR = bvn_pdf(A, b, R);
  const double fA = pA / p, fb = pb / p, fR = pR / p;
  out.grad[kB] = fb;
  out.grad[kA] = s * fA;
  out.grad[kR] = s * fR;
  if (order != Derivatives::hessian) return true;

  const double q = A * A - 2.0 * R * A * b + b * b;
  const double pAA = -A * pA - R * pR;
  const double pbb = -b * pb - R * pR;
  const double pAb = pR;
  const double pAR = -pR * (A - R * b) / r2;
  const double pbR = -pR * (b - R * A) / r2;
  const double pRR = pR * (R / r2 + A * b / r2 - R * q / (r2 * r2));
  auto& h = out.hess;
  h[kB][kB] = pbb / p - fb * fb;
  h[kA][kA] = pAA / p - fA * fA;
  h[kR][kR] = pRR / p - fR * fR;
  h[kB][kA] = h[kA][kB] = s * (pAb / p - fA * fb);
  h[kA][kR] = h[kR][kA] = pAR / p - fA * fR;
  h[kB][kR] = h[kR][kB] = s * (pbR / p - fb * fR);
  return true;
}

// Derivatives of log phi(b) + log Phi(s (a - rho b) / r) in (b, a, rho).
void event_terms(int s, double a, double b, double rho, double r, Derivatives order, RowScalars& out) {
  const double r3 = r * r * r;
  const double u = s * (a - rho * b) / r;
  out.value = -0.5 * b * b - kLogSqrt2Pi + norm_log_cdf(u);
  if (order == Derivatives::none) return;

  const double m = norm_mills(u);
  const double ua = s / r, ub = -s * rho / r, ur = s * (a * rho - b) / r3;
  out.grad[kB] = -b + m * ub;
  out.grad[kA] = m * ua;
  out.grad[kR] = m * ur;
  if (order != Derivatives::hessian) return;

  const double m2 = -m * (u + m);
  const double uar = s * rho / r3, ubr = -s / r3;
  const double urr = s * (a / r3 + 3.0 * rho * (a * rho - b) / (r3 * r * r));
  auto& h = out.hess;
  h[kB][kB] = -1.0 + m2 * ub * ub;
  h[kA][kA] = m2 * ua * ua;
  h[kR][kR] = m2 * ur * ur + m * urr;
  h[kB][kA] = h[kA][kB] = m2 * ua * ub;
  h[kA][kR] = h[kR][kA] = m2 * ua * ur + m * uar;
  h[kB][kR] = h[kR][kB] = m2 * ub * ur + m * ubr;
}

}  // namespace

RowCase row_case(int treatment, int status) {
  if (status == 0) return treatment == 0 ? RowCase::d0_censored : RowCase::d1_censored;
  return treatment == 0 ? RowCase::d0_event : RowCase::d1_event;
}

std::optional<RowScalars> row_contribution(RowCase c, double eta1, double eta2, double rho_star, double g,
                                           Derivatives order) {
  if (!std::isfinite(eta1) || !std::isfinite(eta2) || !std::isfinite(rho_star)) return std::nullopt;
  const double rho = std::tanh(rho_star);
  const double r = std::sqrt((1.0 - rho) * (1.0 + rho));
  if (r < kMinCorrelationRoot) return std::nullopt;
  const double a = -eta2, b = -eta1;

  // Work in (b, a, rho) first.
  RowScalars w;
  const bool event = c == RowCase::d0_event || c == RowCase::d1_event;
  const int s = (c == RowCase::d0_censored || c == RowCase::d0_event) ? 1 : -1;
  if (event) {
    if (!(g > 0.0) || !std::isfinite(g)) return std::nullopt;
    event_terms(s, a, b, rho, r, order, w);
    w.value += std::log(std::max(g, kLogFloor));
  } else if (!censored_terms(s, a, b, rho, r, order, w)) {
    return std::nullopt;
  }
  if (!std::isfinite(w.value)) return std::nullopt;

  // Map to (eta1, eta2, rho_star, g).
  RowScalars out;
  out.value = w.value;
  if (order == Derivatives::none) return out;
  const double jac = 1.0 - rho * rho;
  const double jac2 = -2.0 * rho * jac;
  out.grad[0] = -w.grad[kB];
  out.grad[1] = -w.grad[kA];
  out.grad[2] = w.grad[kR] * jac;
  out.grad[3] = event ? 1.0 / g : 0.0;
  if (order == Derivatives::hessian) {
    auto& h = out.hess;
    h[0][0] = w.hess[kB][kB];
    h[1][1] = w.hess[kA][kA];
    h[0][1] = h[1][0] = w.hess[kB][kA];
    h[0][2] = h[2][0] = -w.hess[kB][kR] * jac;
    h[1][2] = h[2][1] = -w.hess[kA][kR] * jac;
    h[2][2] = w.hess[kR][kR] * jac * jac + w.grad[kR] * jac2;
    h[3][3] = event ? -1.0 / (g * g) : 0.0;
  }
  for (double v : out.grad)
    if (!std::isfinite(v)) return std::nullopt;
  return out;
}

std::vector<LikelihoodParts> likelihood_parts(const DesignBundle& bundle, const Eigen::VectorXd& delta) {
  const auto& L = bundle.layout;
  const Eigen::VectorXd e1 = eta1(bundle, delta.head(L.outcome_size));
  const Eigen::VectorXd e2 = eta2(bundle, delta.segment(L.selection_offset(), L.selection_size));
  const Eigen::VectorXd g = deta1_dy(bundle, delta.head(L.outcome_size));
  const double rho = std::tanh(delta[L.rho_index()]);
  std::vector<LikelihoodParts> parts(bundle.rows());
  for (std::size_t i = 0; i < bundle.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    auto& p = parts[i];
    p.row_case = row_case(bundle.treatment[i], bundle.status[i]);
    p.S = norm_cdf(-e1[k]);
    p.P00 = bvn_cdf(-e2[k], -e1[k], rho);
    p.P01 = bvn_cdf_partial_b(-e2[k], -e1[k], rho) * g[k];
    const auto row = row_contribution(p.row_case, e1[k], e2[k], delta[L.rho_index()], g[k], Derivatives::none);
    p.logdens = row ? row->value : std::nan("");
  }
  return parts;
}

std::optional<Evaluation> evaluate(const DesignBundle& bundle, const Eigen::VectorXd& delta, Derivatives order) {
  return kernel::parallel(bundle, delta, order);
}

std::optional<double> loglik(const DesignBundle& bundle, const Eigen::VectorXd& delta) {
  const auto e = evaluate(bundle, delta, Derivatives::none);
  if (!e) return std::nullopt;
  return e->loglik;
}

std::optional<double> penalized_loglik(const DesignBundle& bundle, const Eigen::VectorXd& delta,
                                       const Eigen::VectorXd& lambda) {
  const auto l = loglik(bundle, delta);
  if (!l) return std::nullopt;
  return *l - 0.5 * delta.dot(bundle.penalty_matrix(lambda) * delta);
}

std::optional<Eigen::VectorXd> score(const DesignBundle& bundle, const Eigen::VectorXd& delta) {
  auto e = evaluate(bundle, delta, Derivatives::gradient);
  if (!e) return std::nullopt;
  return std::move(e->gradient);
}

std::optional<Eigen::MatrixXd> hessian(const DesignBundle& bundle, const Eigen::VectorXd& delta) {
  auto e = evaluate(bundle, delta, Derivatives::hessian);
  if (!e) return std::nullopt;
  return std::move(e->hessian);
}

std::optional<Eigen::VectorXd> score_fd(const DesignBundle& bundle, const Eigen::VectorXd& delta, double step) {
  Eigen::VectorXd out(delta.size());
  Eigen::VectorXd x = delta;
  for (Eigen::Index j = 0; j < delta.size(); ++j) {
    // Fourth-order central stencil.
    double f[4];
    const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
    for (int k = 0; k < 4; ++k) {
      x[j] = delta[j] + offsets[k] * step;
      const auto l = loglik(bundle, x);
      if (!l) return std::nullopt;
      f[k] = *l;
    }
    x[j] = delta[j];
    out[j] = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * step);
  }
  return out;
}

std::optional<Eigen::MatrixXd> hessian_fd(const DesignBundle& bundle, const Eigen::VectorXd& delta, double step) {
  const Eigen::Index p = delta.size();
  Eigen::MatrixXd out(p, p);
  Eigen::VectorXd x = delta;
  for (Eigen::Index j = 0; j < p; ++j) {
    Eigen::VectorXd g[4];
    const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
    for (int k = 0; k < 4; ++k) {
      x[j] = delta[j] + offsets[k] * step;
      auto s = score(bundle, x);
      if (!s) return std::nullopt;
      g[k] = std::move(*s);
    }
    x[j] = delta[j];
    out.col(j) = (-g[0] + 8.0 * g[1] - 8.0 * g[2] + g[3]) / (12.0 * step);
  }
  return 0.5 * (out + out.transpose());
}

ConfoundingDiagnostics confounding_diagnostics(double location, double eta2, double rho) {
  ConfoundingDiagnostics d;
  d.mills = norm_mills(eta2);
  d.mills_clamped = norm_cdf(eta2) < kLogFloor;
  d.mean = location + rho * d.mills;
  d.variance = rho * rho * (1.0 - eta2 * d.mills - d.mills * d.mills - 1.0) + 1.0;
  return d;
}

ConfoundingDiagnostics confounding_diagnostics(const DesignBundle& bundle, const Eigen::VectorXd& delta,
                                               std::size_t row) {
  const auto& L = bundle.layout;
  const Eigen::VectorXd lin = L.linear(delta);
  Eigen::RowVectorXd x = bundle.outcome_row(row, bundle.time[row], 1);
  x.segment(L.monotone_offset, L.monotone_size).setZero();
  const double location = x.dot(lin.head(L.outcome_size));
  const double e2 = bundle.Z.row(static_cast<Eigen::Index>(row)).dot(delta.segment(L.selection_offset(), L.selection_size));
  return confounding_diagnostics(location, e2, std::tanh(delta[L.rho_index()]));
}

}  // namespace ctm
