#pragma once

// Penalized maximum likelihood: trust-region Newton iterations for the
// coefficients with an outer AIC search over the smoothing parameters.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctm/design.hpp"

namespace ctm {

struct FitOptions {
  int max_outer_iters = 25;
  int max_tr_iters = 200;
  double gradient_tolerance = 1e-7;
  double initial_trust_radius = 1.0;
  double max_trust_radius = 1e3;

  /// Golden-section bracket and tolerance on log(lambda).
  double log_lambda_lo = -9.0;
  double log_lambda_hi = 16.0;
  double log_lambda_tol = 0.1;
  /// Non-empty: coordinate-wise search over these log(lambda) values instead of golden section.
  std::vector<double> log_lambda_grid;
  /// Set: skip selection and use these smoothing parameters.
  std::optional<Eigen::VectorXd> fixed_lambda;
  /// Starting lambda for every penalty when selecting.
  double initial_lambda = 1.0;

  /// Hold rho_star at 0 (the univariate pair: probit treatment model plus survival model).
  bool fix_rho = false;
  /// Skip the univariate warm-up fit in initial_values.
  bool quick_start = false;

  /// Fitting is deterministic; recorded for the run manifest.
  std::uint64_t seed = 0;

  void validate() const;
};

struct Convergence {
  bool converged = false;
  int iterations = 0;  ///< trust-region iterations of the final inner fit
  double gradient_norm = 0.0;
  int rejections = 0;
  int outer_iterations = 0;
  int inner_fits = 0;
};

struct TermEdf {
  std::string label;
  double edf = 0.0;
};

struct FitResult {
  Eigen::VectorXd delta;
  Eigen::VectorXd lambda;
  /// hessian(delta) - S_lambda, full psi x psi.
  Eigen::MatrixXd penalized_hessian;
  /// Unpenalized log-likelihood Hessian at delta.
  Eigen::MatrixXd hessian;
  /// Smallest tau with -H_p + tau I positive definite on the free block (0 when none was needed).
  double repair = 0.0;
  double loglik = 0.0;
  double penalized_loglik = 0.0;
  double edf_total = 0.0;
  std::vector<TermEdf> edf_terms;  ///< one per layout term, plus "rho" when free
  double aic = 0.0;
  /// Indices of delta that were estimated (all but rho_star when it is held at 0).
  std::vector<int> free;
  bool fix_rho = false;
  Convergence convergence;
};

// ---------------------------------------------------------------------------
// Generic trust-region maximizer

struct LocalModel {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

/// std::nullopt marks an invalid point.
using Objective = std::function<std::optional<LocalModel>(const Eigen::VectorXd&)>;

struct TrustRegionOptions {
  int max_iters = 200;
  double gradient_tolerance = 1e-7;
  double initial_radius = 1.0;
  double max_radius = 1e3;
};

struct TrustRegionResult {
  Eigen::VectorXd x;
  LocalModel model;
  bool converged = false;
  int iterations = 0;
  int rejections = 0;
  double gradient_norm = 0.0;
};

/// Smallest tau >= 0 (bisection to relative precision 1e-6, absolute 1e-14 (1 + max|A_jj|)) such that
/// A + tau I has a Cholesky factor. Throws DomainError for non-finite A.
double ridge_repair(const Eigen::MatrixXd& A);

/// Dogleg step for minimizing g'p + p'Bp/2 within ||p|| <= radius; B must be positive definite.
Eigen::VectorXd dogleg_step(const Eigen::VectorXd& g, const Eigen::MatrixXd& B, double radius);

/// Maximizes f from x0. Converged when ||grad||_inf <= tol * (1 + |f|).
/// Accepted steps never decrease f; invalid trial points shrink the radius.
TrustRegionResult maximize(const Objective& f, const Eigen::VectorXd& x0, const TrustRegionOptions& options);

// ---------------------------------------------------------------------------
// Model fitting

/// Per-parameter diagonal of (-H_p)^{-1}(-H) on the free block, scattered into psi entries.
Eigen::VectorXd edf_diagonal(const Eigen::MatrixXd& hessian, const Eigen::MatrixXd& penalized_hessian,
                             const std::vector<int>& free, double repair = 0.0);

/// Intercept-plus-terms probit fit of the selection equation with penalty lambda (per-penalty vector).
std::optional<Eigen::VectorXd> probit_start(const DesignBundle& bundle, const Eigen::VectorXd& lambda);

/// Working parameters for a strictly increasing time ramp spanning about `span` units
/// with the first coefficient centring eta1 at the median follow-up time.
Eigen::VectorXd ramp_start(const DesignBundle& bundle, double span = 3.0);

/// Starting point: probit selection coefficients, a ramp for the time term, rho_star = 0;
/// unless quick_start, refined by a rho = 0 fit at the initial lambda.
Eigen::VectorXd initial_values(const DesignBundle& bundle, const FitOptions& options);

/// Inner penalized fit at fixed lambda from delta0.
FitResult fit_fixed(const DesignBundle& bundle, const Eigen::VectorXd& delta0, const Eigen::VectorXd& lambda,
                    const FitOptions& options);

struct SmoothingTrial {
  Eigen::VectorXd log_lambda;
  double aic = 0.0;
};

struct SmoothingSelection {
  FitResult best;
  std::vector<SmoothingTrial> trials;
};

/// Minimizes AIC(lambda) = -2 loglik + 2 edf by coordinate-wise search on log(lambda).
SmoothingSelection select_smoothing(const DesignBundle& bundle, const Eigen::VectorXd& delta0,
                                    const FitOptions& options);

/// Full fit: starting values, smoothing selection (or fixed lambda), final inner fit.
FitResult fit(const DesignBundle& bundle, const FitOptions& options);
/// As fit() from a caller-supplied start.
FitResult fit(const DesignBundle& bundle, const Eigen::VectorXd& delta0, const FitOptions& options);

}  // namespace ctm
