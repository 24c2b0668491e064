#pragma once

// Censored joint log-likelihood of (treatment, event time), its quadratic
// penalty, analytic score and Hessian, and confounding diagnostics.
//
// Per-row contributions with a = -eta2, b = -eta1, rho = tanh(rho_star),
// g = d eta1 / dy:
//   d = 0, censored : log Phi2(a, b; rho)
//   d = 1, censored : log(Phi(b) - Phi2(a, b; rho)) = log Phi2(-a, b; -rho)
//   d = 0, event    : log g + log phi(b) + log Phi((a - rho b) / r)
//   d = 1, event    : log g + log phi(b) + log Phi((rho b - a) / r)
// where r = sqrt(1 - rho^2).

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ctm/design.hpp"

namespace ctm {

enum class RowCase { d0_censored, d1_censored, d0_event, d1_event };

RowCase row_case(int treatment, int status);

/// Log-argument floor; smaller positive arguments are raised to it.
inline constexpr double kLogFloor = 1e-300;

/// One row's log contribution and its derivatives with respect to
/// (eta1, eta2, rho_star, g), in that index order.
struct RowScalars {
  double value = 0.0;
  std::array<double, 4> grad{};
  std::array<std::array<double, 4>, 4> hess{};
};

enum class Derivatives { none, gradient, hessian };

/// std::nullopt signals an invalid point (non-positive or non-finite log argument).
std::optional<RowScalars> row_contribution(RowCase c, double eta1, double eta2, double rho_star, double g,
                                           Derivatives order);

struct LikelihoodParts {
  RowCase row_case = RowCase::d0_censored;
  double P00 = 0.0;
  double P01 = 0.0;
  double S = 0.0;
  double logdens = 0.0;
};

std::vector<LikelihoodParts> likelihood_parts(const DesignBundle& bundle, const Eigen::VectorXd& delta);

struct Evaluation {
  double loglik = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

namespace kernel {

/// Row-by-row reference implementation with explicit outer-product accumulation.
std::optional<Evaluation> serial(const DesignBundle& bundle, const Eigen::VectorXd& delta, Derivatives order);

/// OpenMP over fixed-size row chunks, reduced in chunk order so results do not
/// depend on the thread count.
std::optional<Evaluation> parallel(const DesignBundle& bundle, const Eigen::VectorXd& delta, Derivatives order);

inline constexpr int kChunkRows = 256;

}  // namespace kernel

std::optional<Evaluation> evaluate(const DesignBundle& bundle, const Eigen::VectorXd& delta, Derivatives order);

std::optional<double> loglik(const DesignBundle& bundle, const Eigen::VectorXd& delta);
std::optional<double> penalized_loglik(const DesignBundle& bundle, const Eigen::VectorXd& delta,
                                       const Eigen::VectorXd& lambda);
std::optional<Eigen::VectorXd> score(const DesignBundle& bundle, const Eigen::VectorXd& delta);
std::optional<Eigen::MatrixXd> hessian(const DesignBundle& bundle, const Eigen::VectorXd& delta);

/// Finite-difference score and Hessian (verification only).
std::optional<Eigen::VectorXd> score_fd(const DesignBundle& bundle, const Eigen::VectorXd& delta, double step = 1e-5);
std::optional<Eigen::MatrixXd> hessian_fd(const DesignBundle& bundle, const Eigen::VectorXd& delta, double step = 1e-5);

/// Distribution of the outcome latent -H(T) given treatment D = 1:
/// mean = covariate part + rho * phi(eta2) / Phi(eta2),
/// variance = rho^2 [1 - eta2 m - m^2 - 1] + 1 with m the inverse Mills ratio.
struct ConfoundingDiagnostics {
  double mean = 0.0;
  double variance = 1.0;
  double mills = 0.0;
  bool mills_clamped = false;
};

ConfoundingDiagnostics confounding_diagnostics(double location, double eta2, double rho);

/// Row-level diagnostics with the row's treatment set to 1; location is eta1 minus the time term.
ConfoundingDiagnostics confounding_diagnostics(const DesignBundle& bundle, const Eigen::VectorXd& delta,
                                               std::size_t row);

}  // namespace ctm
