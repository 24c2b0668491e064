#pragma once

// Bayesian large-sample inference after a penalized fit: covariance matrices,
// effective degrees of freedom, Wald summaries, the correlation interval and
// posterior-simulation bands for survival curves and the SATE.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ctm/design.hpp"
#include "ctm/optimizer.hpp"

namespace ctm {

struct Posterior {
  Eigen::VectorXd mean;        ///< delta_hat
  Eigen::VectorXd mean_tilde;  ///< linear(delta_hat)
  Eigen::MatrixXd V;           ///< (-H_p)^{-1} on the free block, zero elsewhere
  Eigen::MatrixXd V_tilde;     ///< diag(E) V diag(E)
  std::vector<int> free;
};

/// Throws InferenceError when -H_p (plus the stored repair) is not positive definite.
Posterior covariance(const DesignBundle& bundle, const FitResult& fit);

struct EdfReport {
  double total = 0.0;        ///< tr[(-H_p)^{-1}(-H)]
  double total_trace = 0.0;  ///< free parameters minus tr[(-H_p)^{-1} S_lambda]
  std::vector<TermEdf> terms;
};

EdfReport edf(const DesignBundle& bundle, const FitResult& fit);

struct CoefficientRow {
  std::string equation;
  std::string term;
  std::string label;
  double estimate = 0.0;
  double std_error = 0.0;
  double z = 0.0;
  double p_value = 1.0;
};

struct SmoothRow {
  std::string equation;
  std::string label;
  double edf = 0.0;
  int rank = 0;
  double statistic = 0.0;
  double p_value = 1.0;
};

struct RhoInterval {
  double rho = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double rho_star = 0.0;
  double se_star = 0.0;
};

struct Summary {
  std::vector<CoefficientRow> parametric;
  std::vector<SmoothRow> smooth;
  RhoInterval rho;
  double loglik = 0.0;
  double edf_total = 0.0;
  double aic = 0.0;
  std::size_t n = 0;
};

/// Two-sided Wald p-value for estimate / std_error; 1 when the estimate is 0.
double wald_p_value(double estimate, double std_error);

/// Rank-r pseudoinverse Wald statistic f' V^-_r f with its chi-square(r) upper tail.
std::pair<double, double> rank_wald(const Eigen::VectorXd& f, const Eigen::MatrixXd& V, int rank);

RhoInterval rho_interval(const FitResult& fit, const Posterior& post, double theta = 0.05);

Summary summary(const DesignBundle& bundle, const FitResult& fit, const Posterior& post, double theta = 0.05);

// ---------------------------------------------------------------------------
// Posterior simulation

struct DrawOptions {
  int draws = 100;
  double theta = 0.05;
  std::uint64_t seed = 1;
  /// Keep every drawn curve in the result.
  bool keep_draws = false;
};

/// Type-7 empirical quantile of unsorted values.
double quantile(std::vector<double> values, double p);

/// Draws of the outcome working coefficients from N(beta1_hat, V_11), one per column.
Eigen::MatrixXd draw_outcome_coefficients(const DesignBundle& bundle, const Posterior& post, int draws,
                                          std::uint64_t seed);

/// Subjects averaged over, and the treatment value imposed on them (observed treatment when unset).
struct Group {
  std::string label;
  std::vector<std::size_t> rows;
  std::optional<int> treatment;
};

struct Curve {
  std::string label;
  std::vector<double> estimate;
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<std::vector<double>> draws;  ///< only with keep_draws
};

struct CurveSet {
  std::vector<double> times;
  std::vector<Curve> curves;
  double theta = 0.05;
  int draws = 0;
  std::uint64_t seed = 0;
  /// Point survival at t = 0 per curve and whether any is below 0.99 (survival curves only).
  std::vector<double> survival_at_zero;
  bool left_boundary_flag = false;
};

/// Mean survival Phi(-eta1(t, x_i, d)) per group with posterior bands.
CurveSet survival_curves(const DesignBundle& bundle, const Posterior& post, const std::vector<double>& times,
                         const std::vector<Group>& groups, const DrawOptions& options);

/// Plug-in SATE(t) at working coefficients delta, without bands.
std::vector<double> sate_point(const DesignBundle& bundle, const Eigen::VectorXd& delta, const std::vector<double>& times,
                               const std::vector<std::size_t>& rows = {}, int treated = 1, int control = 0);

/// SATE(t) = mean over rows of S(t | x_i, d = treated) - S(t | x_i, d = control), with posterior bands.
/// Empty rows means every subject.
CurveSet sate(const DesignBundle& bundle, const Posterior& post, const std::vector<double>& times,
              const std::vector<std::size_t>& rows, const DrawOptions& options, int treated = 1, int control = 0);

/// Equally spaced grid of `points` values on [lo, hi].
std::vector<double> time_grid(double lo, double hi, int points);

/// Count of i with v[i + 1] > v[i] + tol.
int increase_violations(const std::vector<double>& v, double tol = 1e-12);

}  // namespace ctm
