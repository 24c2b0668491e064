#include "ctm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ctm/errors.hpp"

namespace ctm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == ',') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

double to_double(const std::string& key, const std::string& value) {
  const auto v = parse_double(value);
  if (!v) throw ConfigError("key '" + key + "': '" + value + "' is not a number");
  return *v;
}

long long to_int(const std::string& key, const std::string& value) {
  const auto v = parse_double(value);
  if (!v || *v != static_cast<double>(static_cast<long long>(*v))) {
    throw ConfigError("key '" + key + "': '" + value + "' is not an integer");
  }
  return static_cast<long long>(*v);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("key '" + key + "': '" + value + "' is not a boolean");
}

std::vector<double> to_doubles(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& w : words(value)) out.push_back(to_double(key, w));
  return out;
}

TermKind term_kind(const std::string& s) {
  for (TermKind k : {TermKind::parametric, TermKind::ridge, TermKind::smooth, TermKind::monotone, TermKind::treatment,
                     TermKind::interaction}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown term kind '" + s + "'");
}

TermSpec parse_term(const std::string& key, const std::string& value) {
  const auto w = words(value);
  if (w.empty()) throw ConfigError("key '" + key + "': empty term");
  TermSpec t;
  t.kind = term_kind(w[0]);
  const bool needs_covariate = t.kind != TermKind::treatment && t.kind != TermKind::monotone;
  if (needs_covariate && w.size() < 2) throw ConfigError("key '" + key + "': term '" + w[0] + "' needs a covariate");
  if (w.size() >= 2) t.covariate = w[1];
  if (w.size() >= 3) t.basis_dim = static_cast<int>(to_int(key, w[2]));
  if (w.size() > 3) throw ConfigError("key '" + key + "': too many fields in '" + value + "'");
  return t;
}

GroupSpec parse_group(const std::string& key, const std::string& value, bool labelled) {
  auto w = words(value);
  GroupSpec g;
  std::size_t start = 0;
  if (labelled) {
    if (w.empty() || w[0].find('=') != std::string::npos) throw ConfigError("key '" + key + "': group needs a label");
    g.label = w[0];
    start = 1;
  }
  for (std::size_t i = start; i < w.size(); ++i) {
    const auto eq = w[i].find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == w[i].size()) {
      throw ConfigError("key '" + key + "': filter '" + w[i] + "' is not column=value");
    }
    const std::string col = w[i].substr(0, eq), val = w[i].substr(eq + 1);
    if (col == "treatment") {
      const auto d = to_int(key, val);
      if (d != 0 && d != 1) throw ConfigError("key '" + key + "': treatment must be 0 or 1");
      g.treatment = static_cast<int>(d);
    } else {
      g.filters.emplace_back(col, val);
    }
  }
  return g;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

std::string group_text(const GroupSpec& g) {
  std::string s = g.label;
  for (const auto& [c, v] : g.filters) s += (s.empty() ? "" : " ") + c + "=" + v;
  if (g.treatment) s += (s.empty() ? "" : " ") + std::string("treatment=") + std::to_string(*g.treatment);
  return s;
}

std::string term_text(const TermSpec& t) {
  std::string s = to_string(t.kind);
  if (t.kind == TermKind::treatment) return s;
  if (!t.covariate.empty()) s += " " + t.covariate;
  if (t.kind == TermKind::smooth || t.kind == TermKind::monotone) s += " " + std::to_string(t.basis_dim);
  return s;
}

}  // namespace

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "data = " << data << "\n";
  o << "time = " << time << "\n";
  o << "status = " << status << "\n";
  o << "treatment = " << treatment << "\n";
  for (const auto& s : instruments) o << "instrument = " << s << "\n";
  for (const auto& s : categorical) o << "categorical = " << s << "\n";
  for (const auto& t : model.outcome) o << "outcome.term = " << term_text(t) << "\n";
  for (const auto& t : model.selection) o << "selection.term = " << term_text(t) << "\n";
  o << "uni_fit = " << (uni_fit ? "true" : "false") << "\n";
  o << "theta = " << fmt(theta) << "\n";
  o << "draws = " << draws << "\n";
  o << "seed = " << seed << "\n";
  o << "output = " << output << "\n";
  o << "curve.points = " << curve_points << "\n";
  for (const auto& g : groups) o << "group = " << group_text(g) << "\n";
  if (!sate_times.empty()) o << "sate.times = " << join(sate_times) << "\n";
  if (!sate_group.filters.empty()) {
    GroupSpec g = sate_group;
    g.label.clear();
    o << "sate.group = " << group_text(g) << "\n";
  }
  o << "fit.max_outer_iters = " << fit.max_outer_iters << "\n";
  o << "fit.max_tr_iters = " << fit.max_tr_iters << "\n";
  o << "fit.gradient_tolerance = " << fmt(fit.gradient_tolerance) << "\n";
  o << "fit.initial_trust_radius = " << fmt(fit.initial_trust_radius) << "\n";
  o << "fit.log_lambda_lo = " << fmt(fit.log_lambda_lo) << "\n";
  o << "fit.log_lambda_hi = " << fmt(fit.log_lambda_hi) << "\n";
  o << "fit.log_lambda_tol = " << fmt(fit.log_lambda_tol) << "\n";
  if (!fit.log_lambda_grid.empty()) o << "fit.log_lambda_grid = " << join(fit.log_lambda_grid) << "\n";
  if (fit.fixed_lambda) {
    o << "fit.lambda = " << join(std::vector<double>(fit.fixed_lambda->data(), fit.fixed_lambda->data() + fit.fixed_lambda->size()))
      << "\n";
  }
  return o.str();
}

RunConfig parse_config(std::istream& in) {
  RunConfig c;
  c.sate_group.label = "all";
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' has no value");

    if (key == "data") c.data = value;
    else if (key == "time") c.time = value;
    else if (key == "status") c.status = value;
    else if (key == "treatment") c.treatment = value;
    else if (key == "instrument") for (const auto& w : words(value)) c.instruments.push_back(w);
    else if (key == "categorical") for (const auto& w : words(value)) c.categorical.push_back(w);
    else if (key == "outcome.term") c.model.outcome.push_back(parse_term(key, value));
    else if (key == "selection.term") c.model.selection.push_back(parse_term(key, value));
    else if (key == "uni_fit") c.uni_fit = to_bool(key, value);
    else if (key == "theta") c.theta = to_double(key, value);
    else if (key == "draws") c.draws = static_cast<int>(to_int(key, value));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "output") c.output = value;
    else if (key == "curve.points") c.curve_points = static_cast<int>(to_int(key, value));
    else if (key == "group") c.groups.push_back(parse_group(key, value, true));
    else if (key == "sate.times") c.sate_times = to_doubles(key, value);
    else if (key == "sate.group") {
      c.sate_group = parse_group(key, value, false);
      c.sate_group.label = "all";
      if (c.sate_group.treatment) throw ConfigError("sate.group cannot impose a treatment");
    }
    else if (key == "fit.max_outer_iters") c.fit.max_outer_iters = static_cast<int>(to_int(key, value));
    else if (key == "fit.max_tr_iters") c.fit.max_tr_iters = static_cast<int>(to_int(key, value));
    else if (key == "fit.gradient_tolerance") c.fit.gradient_tolerance = to_double(key, value);
    else if (key == "fit.initial_trust_radius") c.fit.initial_trust_radius = to_double(key, value);
    else if (key == "fit.log_lambda_lo") c.fit.log_lambda_lo = to_double(key, value);
    else if (key == "fit.log_lambda_hi") c.fit.log_lambda_hi = to_double(key, value);
    else if (key == "fit.log_lambda_tol") c.fit.log_lambda_tol = to_double(key, value);
    else if (key == "fit.log_lambda_grid") c.fit.log_lambda_grid = to_doubles(key, value);
    else if (key == "fit.lambda") {
      const auto v = to_doubles(key, value);
      c.fit.fixed_lambda = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    else throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }

  for (const auto& [key, v] : {std::pair{"data", &c.data}, {"time", &c.time}, {"status", &c.status},
                               {"treatment", &c.treatment}}) {
    if (v->empty()) throw ConfigError(std::string("missing required key '") + key + "'");
  }
  if (!(c.theta > 0.0 && c.theta < 1.0)) throw ConfigError("theta must lie in (0, 1)");
  if (c.draws < 1) throw ConfigError("draws must be positive");
  if (c.curve_points < 2) throw ConfigError("curve.points must be at least 2");
  for (const auto& t : c.model.outcome) {
    if (t.kind == TermKind::monotone && !t.covariate.empty() && t.covariate != c.time) {
      throw ConfigError("monotone term must use the time column '" + c.time + "'");
    }
  }
  c.model.validate(c.instruments);
  c.fit.validate();
  c.fit.seed = c.seed;
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

}  // namespace

DataSet ingest(std::istream& in, const RunConfig& config) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty CSV input");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const std::vector<std::string> header = split_csv(line);

  std::vector<std::string> wanted = {config.time, config.status, config.treatment};
  auto want = [&](const std::string& name) {
    if (!name.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) wanted.push_back(name);
  };
  for (const auto* terms : {&config.model.outcome, &config.model.selection}) {
    for (const auto& t : *terms)
      if (t.kind != TermKind::treatment && t.kind != TermKind::monotone) want(t.covariate);
  }
  for (const auto& g : config.groups)
    for (const auto& f : g.filters) want(f.first);
  for (const auto& f : config.sate_group.filters) want(f.first);

  std::vector<std::size_t> index;
  for (const auto& name : wanted) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IngestError("unknown column '" + name + "'");
    index.push_back(static_cast<std::size_t>(it - header.begin()));
  }

  std::vector<std::vector<std::string>> raw(wanted.size());
  std::size_t row = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw IngestError("row " + std::to_string(row) + " (line " + std::to_string(lineno) + "): expected " +
                        std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t k = 0; k < wanted.size(); ++k) {
      const std::string& v = fields[index[k]];
      if (missing(v)) throw IngestError("row " + std::to_string(row) + ": missing value in column '" + wanted[k] + "'");
      raw[k].push_back(v);
    }
  }
  if (row == 0) throw IngestError("CSV has no data rows");

  DataSet data;
  auto binary = [&](std::size_t k, std::vector<int>& out) {
    for (std::size_t i = 0; i < raw[k].size(); ++i) {
      const auto v = parse_double(raw[k][i]);
      if (!v || (*v != 0.0 && *v != 1.0)) {
        throw IngestError("row " + std::to_string(i + 1) + ": " + wanted[k] + " value '" + raw[k][i] +
                          "' is not 0 or 1");
      }
      out.push_back(static_cast<int>(*v));
    }
  };
  for (std::size_t i = 0; i < raw[0].size(); ++i) {
    const auto v = parse_double(raw[0][i]);
    if (!v || !(*v > 0.0) || !std::isfinite(*v)) {
      throw IngestError("row " + std::to_string(i + 1) + ": time value '" + raw[0][i] + "' is not a positive number");
    }
    data.time.push_back(*v);
  }
  binary(1, data.status);
  binary(2, data.treatment);

  for (std::size_t k = 3; k < wanted.size(); ++k) {
    const bool declared = std::find(config.categorical.begin(), config.categorical.end(), wanted[k]) !=
                          config.categorical.end();
    std::vector<double> numeric;
    bool all_numeric = true;
    for (const auto& s : raw[k]) {
      const auto v = parse_double(s);
      if (!v || !std::isfinite(*v)) {
        all_numeric = false;
        break;
      }
      numeric.push_back(*v);
    }
    if (all_numeric && !declared) {
      data.add_column(wanted[k], std::move(numeric));
      continue;
    }
    std::vector<std::string> levels(raw[k].begin(), raw[k].end());
    std::sort(levels.begin(), levels.end(), [&](const std::string& a, const std::string& b) {
      if (all_numeric) return *parse_double(a) < *parse_double(b);
      return a < b;
    });
    levels.erase(std::unique(levels.begin(), levels.end(),
                             [&](const std::string& a, const std::string& b) {
                               return all_numeric ? *parse_double(a) == *parse_double(b) : a == b;
                             }),
                 levels.end());
    std::vector<double> codes;
    for (const auto& s : raw[k]) {
      const auto it = std::find_if(levels.begin(), levels.end(), [&](const std::string& l) {
        return all_numeric ? *parse_double(l) == *parse_double(s) : l == s;
      });
      codes.push_back(static_cast<double>(it - levels.begin()));
    }
    Column& col = data.add_column(wanted[k], std::move(codes));
    col.levels = std::move(levels);
  }
  return data;
}

DataSet ingest(const std::string& path, const RunConfig& config) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open data file '" + path + "'");
  return ingest(in, config);
}

std::vector<std::size_t> select_rows(const DataSet& data, const GroupSpec& group) {
  std::vector<std::size_t> rows;
  std::vector<std::pair<const Column*, double>> tests;
  for (const auto& [name, value] : group.filters) {
    const Column& col = data.column(name);
    if (col.categorical()) {
      auto it = std::find(col.levels.begin(), col.levels.end(), value);
      if (it == col.levels.end()) {
        const auto v = parse_double(value);
        it = std::find_if(col.levels.begin(), col.levels.end(),
                          [&](const std::string& l) { return v && parse_double(l) == v; });
      }
      if (it == col.levels.end()) throw ConfigError("group filter: column '" + name + "' has no level '" + value + "'");
      tests.emplace_back(&col, static_cast<double>(it - col.levels.begin()));
    } else {
      const auto v = parse_double(value);
      if (!v) throw ConfigError("group filter: '" + value + "' is not a number for column '" + name + "'");
      tests.emplace_back(&col, *v);
    }
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    bool ok = true;
    for (const auto& [col, v] : tests) ok = ok && col->values[i] == v;
    if (ok) rows.push_back(i);
  }
  return rows;
}

}  // namespace ctm
