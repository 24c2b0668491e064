#pragma once

// Batch runs behind the command line tool: fit, summaries, curves, SATE and
// the derivative self-test, rendered to the output bundle formats.

#include <string>

#include "ctm/config.hpp"

namespace ctm {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitIngest = 3, kExitNonConvergence = 4, kExitInference = 5 };

enum class Command { fit, sate, curves };

struct RunResult {
  int exit_code = kExitOk;
  std::string message;
  std::string summary_json;  ///< always produced once the data are read
  std::string curves_tsv;    ///< fit and curves
  std::string sate_tsv;      ///< fit and sate
  std::string manifest;
};

/// Runs the command in memory; library exceptions propagate.
RunResult run(const RunConfig& config, Command command);

/// Writes the non-empty parts of result into dir (created if needed).
void write_outputs(const RunResult& result, const std::string& dir);

/// run() + write_outputs() with exceptions mapped to exit codes; messages go to `log`.
int run_command(const RunConfig& config, Command command, std::string& log);

struct CheckResult {
  double score_error = 0.0;
  double hessian_error = 0.0;
  bool passed = false;
};

/// Analytic versus finite-difference derivatives at a perturbed starting point.
CheckResult check_derivatives(const RunConfig& config);

/// Largest |a - b| / max(1, |b|).
double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace ctm
