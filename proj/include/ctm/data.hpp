#pragma once

#include <string>
#include <vector>

namespace ctm {

/// A named covariate. Categorical columns are level-coded 0..L-1 and keep their level names.
struct Column {
  std::string name;
  std::vector<double> values;
  std::vector<std::string> levels;

  bool categorical() const { return !levels.empty(); }
};

/// Per-subject records: follow-up time, event status, binary treatment and covariates.
struct DataSet {
  std::vector<double> time;
  std::vector<int> status;
  std::vector<int> treatment;
  std::vector<Column> columns;

  std::size_t size() const { return time.size(); }
  bool has_column(const std::string& name) const;
  /// Throws ConfigError for unknown names.
  const Column& column(const std::string& name) const;
  Column& add_column(std::string name, std::vector<double> values);

  /// Copy with rows in the given order.
  DataSet permuted(const std::vector<std::size_t>& order) const;
};

}  // namespace ctm
