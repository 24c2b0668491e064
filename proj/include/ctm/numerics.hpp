#pragma once

// Univariate and bivariate standard Gaussian kernels.
//
// All functions are pure and thread-safe.

#include <cmath>

namespace ctm {

inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;

/// Probabilities passed to norm_quantile are clamped to [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-15;

double norm_pdf(double x);
double norm_cdf(double x);

/// log Phi(x), accurate far into the lower tail.
double norm_log_cdf(double x);

/// Inverse Mills ratio phi(x) / Phi(x), accurate far into the lower tail.
double norm_mills(double x);

/// Standard Gaussian quantile. p is clamped to [kProbFloor, 1 - kProbFloor];
/// NaN or p outside [0, 1] throws DomainError.
double norm_quantile(double p);

/// Standard bivariate Gaussian density with correlation rho, |rho| < 1.
double bvn_pdf(double a, double b, double rho);

/// P(X <= a, Y <= b) for a standard bivariate Gaussian with correlation rho.
///
/// Drezner–Wesolowsky/Genz Gauss–Legendre scheme (6/12/20 nodes depending on
/// |rho|, with the asymptotic expansion for |rho| >= 0.925). Infinite limits
/// are allowed; |rho| == 1 uses the degenerate closed forms. Throws DomainError
/// for NaN arguments or |rho| > 1.
double bvn_cdf(double a, double b, double rho);

/// d/db bvn_cdf(a, b, rho) = phi(b) * Phi((a - rho b) / sqrt(1 - rho^2)).
double bvn_cdf_partial_b(double a, double b, double rho);

/// Unbounded working parameter for a correlation: rho = tanh(rho_star).
struct Correlation {
  double rho_star = 0.0;

  double rho() const { return std::tanh(rho_star); }
  /// d rho / d rho_star
  double jacobian() const {
    const double r = rho();
    return 1.0 - r * r;
  }
  static Correlation from_rho(double rho) { return {std::atanh(rho)}; }
};

}  // namespace ctm
