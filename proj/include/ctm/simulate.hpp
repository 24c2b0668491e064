#pragma once

// Data generation from the structural model with an unobserved confounder,
// and replication studies comparing the joint and univariate fits.
//
// Generated model, with x ~ N(0, 1) and instrument z ~ Bernoulli(pi):
//   D     = 1{a2 + b2x x + b2z z + eps2 > 0}
//   -H(T) = a1 + b1x x + beta_d D + eps1,   H(t) = log t
//   eps_k = beta_kU U + e_k,  U ~ N(0, sigma_U^2),  e_k ~ N(0, sigma_k^2)
// so that corr(eps1, eps2) = beta_1U beta_2U sigma_U^2 is the likelihood's rho.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ctm/data.hpp"
#include "ctm/optimizer.hpp"

namespace ctm {

enum class ErrorLaw { gaussian, student_t5 };

struct DgpConfig {
  std::size_t n = 2000;
  double sigma_U = 1.0;
  double beta_1U = 0.0;
  double beta_2U = 0.0;

  double outcome_intercept = 0.0;
  double outcome_x = 0.5;
  double beta_d = 0.5;

  double selection_intercept = 0.0;
  double selection_x = 0.5;
  double instrument_coef = 2.0;
  double instrument_prob = 0.5;

  /// C ~ Uniform(0, censor_max); infinity disables censoring.
  double censor_max = std::numeric_limits<double>::infinity();
  ErrorLaw errors = ErrorLaw::gaussian;

  double rho() const { return beta_1U * beta_2U * sigma_U * sigma_U; }
  double sigma_1() const;
  double sigma_2() const;

  /// Confounder loadings giving corr(eps1, eps2) = rho with sigma_U = 1.
  DgpConfig& set_rho(double rho);

  /// Throws ConfigError unless the normalization leaves positive idiosyncratic variances.
  void validate() const;
};

struct SimulatedData {
  DataSet data;  ///< columns "x" and "z"
  std::vector<double> eps1;
  std::vector<double> eps2;
  std::vector<double> event_time;
  std::vector<double> censor_time;
};

SimulatedData generate(const DgpConfig& config, std::uint64_t seed);

/// True S(t | x, d) under the generating model.
double true_survival(const DgpConfig& config, double t, double x, int d);

/// Seed of replicate r derived from the master seed (SplitMix64 of master + r).
std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t r);

struct StudyOptions {
  int replicates = 100;
  std::uint64_t master_seed = 1;
  /// Basis size of the monotone time term.
  int time_basis = 20;
  /// SATE evaluation times; empty chooses five points from the censoring range.
  std::vector<double> sate_times;
  bool fit_univariate = true;
  FitOptions fit;
};

struct ReplicateResult {
  std::uint64_t seed = 0;
  bool joint_ok = false;
  bool univariate_ok = false;
  double beta_d_joint = 0.0;
  double se_joint = 0.0;
  double beta_d_univariate = 0.0;
  double se_univariate = 0.0;
  double rho = 0.0;
  double rho_lo = 0.0;
  double rho_hi = 0.0;
  double censored_fraction = 0.0;
  std::vector<double> sate_estimate;
  std::vector<double> sate_truth;
  std::string failure;
};

struct ParameterSummary {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double variance = 0.0;
  double coverage = 0.0;
  int count = 0;
};

struct ReplicationReport {
  int replicates = 0;
  int joint_failures = 0;
  int univariate_failures = 0;
  ParameterSummary beta_d_joint;
  ParameterSummary beta_d_univariate;
  ParameterSummary rho_joint;
  std::vector<double> sate_times;
  std::vector<ParameterSummary> sate_joint;
  std::vector<ReplicateResult> details;
};

/// Fits the joint model (and, if requested, the rho = 0 model) to every replicate.
/// Replicates run in parallel; the report depends only on the config, options and master seed.
ReplicationReport run_study(const DgpConfig& config, const StudyOptions& options);

/// Model used by run_study: monotone time term, treatment and x in the outcome; x and z in the selection.
ModelSpec study_model(int time_basis);

}  // namespace ctm
