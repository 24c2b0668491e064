#pragma once

// Declarative run configuration (flat key = value text) and CSV ingestion.
//
//   data = path/to/file.csv
//   time = unemp.dur
//   status = status
//   treatment = agree
//   instrument = bonus
//   categorical = ethnicity
//   outcome.term = monotone unemp.dur 10
//   outcome.term = treatment
//   outcome.term = smooth age 10
//   selection.term = ridge bonus
//   group = women gender=0 treatment=1
//   sate.group = gender=0
//   sate.times = 23
//
// Repeated keys: instrument, categorical, outcome.term, selection.term, group.

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctm/data.hpp"
#include "ctm/design.hpp"
#include "ctm/optimizer.hpp"

namespace ctm {

/// Subjects whose column equals a value; "treatment" imposes the counterfactual treatment instead.
struct GroupSpec {
  std::string label;
  std::vector<std::pair<std::string, std::string>> filters;
  std::optional<int> treatment;
};

struct RunConfig {
  std::string data;
  std::string time;
  std::string status;
  std::string treatment;
  std::vector<std::string> instruments;
  std::vector<std::string> categorical;
  ModelSpec model;

  bool uni_fit = false;
  double theta = 0.05;
  int draws = 100;
  std::uint64_t seed = 1;
  std::string output = "ctm-out";

  int curve_points = 100;
  std::vector<GroupSpec> groups;
  std::vector<double> sate_times;
  GroupSpec sate_group;

  FitOptions fit;

  /// Normalized key = value text; parse_config(to_text()) reproduces the config.
  std::string to_text() const;
};

/// Throws ConfigError on unknown keys, malformed values or a model that fails validation.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);

/// Level maps of categorical columns, in code order.
using LevelMap = std::map<std::string, std::vector<std::string>>;

/// Reads the columns named by the config. Throws IngestError with row numbers for
/// missing values, non-binary status or treatment and non-positive times.
DataSet ingest(const std::string& path, const RunConfig& config);
DataSet ingest(std::istream& in, const RunConfig& config);

/// Row indices matching every column filter of the group.
std::vector<std::size_t> select_rows(const DataSet& data, const GroupSpec& group);

}  // namespace ctm
