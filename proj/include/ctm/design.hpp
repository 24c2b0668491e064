#pragma once

// Design assembly for the outcome (time-to-event) and selection (treatment) equations.
//
// Parameter vector layout: delta = (beta1, beta2, rho_star). The outcome
// predictor is eta1 = X_tilde * linear(beta1) where linear() exponentiates the
// reparametrized monotone coefficients; eta2 = Z * beta2 is linear.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctm/data.hpp"
#include "ctm/splines.hpp"

namespace ctm {

enum class Equation { outcome, selection };

struct TermSpec {
  TermKind kind = TermKind::parametric;
  /// Covariate name; the modifier for interaction terms; unused for treatment.
  std::string covariate;
  int basis_dim = 10;
};

/// Terms of both equations. The outcome equation has no separate intercept:
/// the first coefficient of the monotone time term plays that role. The
/// selection equation always carries an intercept.
struct ModelSpec {
  std::vector<TermSpec> outcome;
  std::vector<TermSpec> selection;

  /// Throws ConfigError unless the structural requirements hold.
  void validate(const std::vector<std::string>& instruments = {}) const;
};

struct TermBlock {
  std::string label;
  Equation equation = Equation::outcome;
  TermKind kind = TermKind::parametric;
  int offset = 0;  ///< into delta
  int size = 0;
  int penalty = -1;  ///< index into DesignBundle::penalties, -1 if unpenalized
  std::vector<std::string> column_labels;
};

struct PenaltyBlock {
  std::string label;
  int offset = 0;  ///< into delta
  int size = 0;
  Eigen::MatrixXd matrix;
  int rank = 0;
};

struct ParameterLayout {
  std::vector<TermBlock> terms;
  int outcome_size = 0;
  int selection_size = 0;
  int monotone_offset = 0;
  int monotone_size = 0;

  int psi() const { return outcome_size + selection_size + 1; }
  int rho_index() const { return outcome_size + selection_size; }
  int selection_offset() const { return outcome_size; }

  /// d linear(delta) / d delta: exp(b_j) for reparametrized monotone coefficients, 1 otherwise.
  Eigen::VectorXd E(const Eigen::VectorXd& delta) const;
  /// Diagonal of the second derivative marker: exp(b_j) where reparametrized, 0 otherwise.
  Eigen::VectorXd E_bar(const Eigen::VectorXd& delta) const;
  /// delta with reparametrized monotone coefficients exponentiated.
  Eigen::VectorXd linear(const Eigen::VectorXd& delta) const;

  const TermBlock* find(const std::string& label) const;
};

struct DesignBundle {
  Eigen::MatrixXd X_tilde;        ///< n x dim(beta1), monotone block is B * Sigma
  Eigen::MatrixXd X_tilde_prime;  ///< d X_tilde / dy by finite differences
  Eigen::MatrixXd Z;              ///< n x dim(beta2)
  std::vector<int> status;
  std::vector<int> treatment;
  std::vector<double> time;
  std::vector<PenaltyBlock> penalties;
  ParameterLayout layout;
  std::optional<MonotoneTerm> monotone;
  double fd_step = 0.0;

  int treatment_column = -1;  ///< in X_tilde
  struct Interaction {
    int column = -1;
    std::vector<double> modifier;
  };
  std::vector<Interaction> interactions;

  std::size_t rows() const { return status.size(); }
  int zeta() const;

  /// S_lambda = sum_k lambda_k S_k embedded in psi x psi.
  Eigen::MatrixXd penalty_matrix(const Eigen::VectorXd& lambda) const;

  /// Outcome design row for subject i at time t with treatment set to d.
  Eigen::RowVectorXd outcome_row(std::size_t i, double t, int d) const;

  /// Rows for all subjects at time t with treatment d (counterfactual design).
  Eigen::MatrixXd outcome_rows(double t, int d) const;
};

DesignBundle assemble(const ModelSpec& spec, const DataSet& data);

Eigen::VectorXd eta1(const DesignBundle& bundle, const Eigen::VectorXd& beta1_working);
Eigen::VectorXd eta2(const DesignBundle& bundle, const Eigen::VectorXd& beta2);
/// d eta1 / dy with the given finite-difference step (bundle.fd_step when step <= 0).
Eigen::VectorXd deta1_dy(const DesignBundle& bundle, const Eigen::VectorXd& beta1_working, double step = 0.0);

}  // namespace ctm
