#pragma once

// Basis and penalty construction for additive-predictor terms.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ctm {

enum class TermKind { parametric, ridge, smooth, monotone, treatment, interaction };

const char* to_string(TermKind kind);

/// Design block R_k (n x J_k) and penalty S_k (J_k x J_k) of one term.
struct TermBasis {
  TermKind kind = TermKind::parametric;
  Eigen::MatrixXd design;
  Eigen::MatrixXd penalty;
  /// rank(S_k); zero for unpenalized terms.
  int penalty_rank = 0;
  std::vector<double> knots;
  std::vector<std::string> column_labels;
};

/// B-spline basis of a given order on equally spaced knots over [lo, hi].
///
/// The knot sequence is extended beyond the interval with the same spacing,
/// so the basis is a partition of unity on [lo, hi].
class BSplineBasis {
 public:
  BSplineBasis(int size, int order, double lo, double hi);

  int size() const { return size_; }
  int order() const { return order_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& knots() const { return knots_; }

  /// All basis functions at x; throws DomainError outside [lo, hi].
  Eigen::RowVectorXd evaluate(double x) const;

 private:
  int size_;
  int order_;
  double lo_;
  double hi_;
  std::vector<double> knots_;
};

TermBasis build_bspline_basis(std::span<const double> x, int size, int order, double lo, double hi);

/// Cumulative-exponential reparametrization of monotone spline coefficients:
/// coefficients = Sigma * (b_1, exp(b_2), ..., exp(b_J)).
struct MonotoneReparam {
  Eigen::MatrixXd sigma;       ///< lower-triangular ones
  Eigen::MatrixXd difference;  ///< S*, (J-2) x J
  Eigen::MatrixXd penalty;     ///< S*' S*
  int order = 4;
  double lo = 0.0;
  double hi = 1.0;

  /// Elementwise map b -> (b_1, exp(b_2), ..., exp(b_J)).
  Eigen::VectorXd increments(const Eigen::VectorXd& working) const;
  /// Non-decreasing spline coefficients Sigma * increments(working).
  Eigen::VectorXd coefficients(const Eigen::VectorXd& working) const;
};

MonotoneReparam make_monotone_reparam(int size, int order, double lo, double hi);

/// Monotone time term: B-spline basis on [0, 1.001 max(y)] plus its reparametrization.
class MonotoneTerm {
 public:
  MonotoneTerm(std::span<const double> y, int size, int order = 4);

  const BSplineBasis& spline() const { return spline_; }
  const MonotoneReparam& reparam() const { return reparam_; }
  int size() const { return spline_.size(); }

  /// Row of B(y) * Sigma; multiplies increments(working).
  Eigen::RowVectorXd cumulative_row(double y) const;
  /// Central difference of cumulative_row in y (one-sided at the interval ends).
  Eigen::RowVectorXd cumulative_row_dy(double y, double step) const;
  /// Default finite-difference step: 1e-4 of the interval width.
  double default_step() const { return 1e-4 * (reparam_.hi - reparam_.lo); }

  /// Plain B-spline design and difference penalty for the training y.
  TermBasis basis(std::span<const double> y) const;

 private:
  BSplineBasis spline_;
  MonotoneReparam reparam_;
};

/// Plain B-spline design plus reparametrization metadata for a monotone time term
/// on [0, 1.001 max(y)]. Throws ConfigError when y has fewer than two distinct values.
std::pair<TermBasis, MonotoneReparam> build_monotone_term(std::span<const double> y, int size);

/// One-dimensional low-rank thin-plate smooth with second-order penalty,
/// centered so every column has zero mean over the training data.
///
/// Columns are ordered [wiggly (J-2), linear (1)]; the wiggly block carries a
/// diagonal penalty, the linear column is unpenalized.
class ThinPlateSmooth {
 public:
  ThinPlateSmooth(std::span<const double> x, int size);

  int columns() const { return static_cast<int>(column_means_.size()); }
  Eigen::RowVectorXd evaluate(double x) const;
  TermBasis basis(std::span<const double> x) const;

  /// beta' S beta == penalty_scale() * integral of s''(x)^2 dx in the original units of x.
  double penalty_scale() const { return penalty_scale_; }
  const Eigen::VectorXd& penalty_diagonal() const { return penalty_diag_; }

 private:
  Eigen::RowVectorXd raw(double x) const;

  double center_ = 0.0;
  double scale_ = 1.0;
  std::vector<double> knots_;  // standardized
  Eigen::MatrixXd wiggly_map_;  // knots x (J-2)
  Eigen::VectorXd penalty_diag_;
  Eigen::RowVectorXd column_means_;
  double penalty_scale_ = 1.0;
};

TermBasis build_smooth_term(std::span<const double> x, int size);

/// Indicator columns for every non-reference level with an identity penalty.
/// Throws ConfigError if the variable has a single level.
TermBasis build_ridge_term(std::span<const double> levels);

}  // namespace ctm
