#include "ctm/run.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctm/errors.hpp"
#include "ctm/inference.hpp"
#include "ctm/likelihood.hpp"
#include "ctm/optimizer.hpp"

namespace ctm {

namespace {

using nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ordered_json fit_json(const DesignBundle& bundle, const FitResult& fit, const Summary& s) {
  ordered_json j;
  j["converged"] = fit.convergence.converged;
  j["iterations"] = fit.convergence.iterations;
  j["gradient_norm"] = fit.convergence.gradient_norm;
  j["rejections"] = fit.convergence.rejections;
  j["outer_iterations"] = fit.convergence.outer_iterations;
  j["inner_fits"] = fit.convergence.inner_fits;
  j["loglik"] = fit.loglik;
  j["penalized_loglik"] = fit.penalized_loglik;
  j["aic"] = fit.aic;
  j["edf_total"] = fit.edf_total;
  j["hessian_repair"] = fit.repair;
  ordered_json edf = ordered_json::object();
  for (const auto& t : fit.edf_terms) edf[t.label] = t.edf;
  j["edf"] = edf;
  ordered_json lambda = ordered_json::array();
  for (std::size_t k = 0; k < bundle.penalties.size(); ++k) {
    lambda.push_back({{"term", bundle.penalties[k].label}, {"lambda", fit.lambda[static_cast<Eigen::Index>(k)]}});
  }
  j["lambda"] = lambda;
  for (const char* eq : {"outcome", "selection"}) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : s.parametric) {
      if (r.equation != eq) continue;
      rows.push_back({{"term", r.term}, {"label", r.label}, {"estimate", r.estimate}, {"std_error", r.std_error},
                      {"z", r.z}, {"p_value", r.p_value}});
    }
    j[std::string(eq)] = rows;
  }
  ordered_json smooth = ordered_json::array();
  for (const auto& r : s.smooth) {
    smooth.push_back({{"equation", r.equation}, {"term", r.label}, {"edf", r.edf}, {"rank", r.rank},
                      {"statistic", r.statistic}, {"p_value", r.p_value}});
  }
  j["smooth"] = smooth;
  return j;
}

std::string curves_text(const CurveSet& c) {
  std::string out = "t\tgroup\testimate\tlo\thi\n";
  for (const auto& curve : c.curves) {
    for (std::size_t k = 0; k < c.times.size(); ++k) {
      out += fmt(c.times[k]) + "\t" + curve.label + "\t" + fmt(curve.estimate[k]) + "\t" + fmt(curve.lo[k]) + "\t" +
             fmt(curve.hi[k]) + "\n";
    }
  }
  return out;
}

std::string sate_text(const CurveSet& c) {
  std::string out = "t\testimate\tlo\thi\n";
  const auto& s = c.curves.front();
  for (std::size_t k = 0; k < c.times.size(); ++k) {
    out += fmt(c.times[k]) + "\t" + fmt(s.estimate[k]) + "\t" + fmt(s.lo[k]) + "\t" + fmt(s.hi[k]) + "\n";
  }
  return out;
}

const char* command_name(Command c) {
  switch (c) {
    case Command::fit: return "fit";
    case Command::sate: return "sate";
    case Command::curves: return "curves";
  }
  return "fit";
}

}  // namespace

RunResult run(const RunConfig& config, Command command) {
  RunResult out;
  out.manifest = std::string("# ctm run manifest\n# version ") + kVersion + "\n# compiler " + __VERSION__ +
                 "\n# command " + command_name(command) + "\n" + config.to_text();

  const DataSet data = ingest(config.data, config);
  const DesignBundle bundle = assemble(config.model, data);

  FitOptions options = config.fit;
  options.seed = config.seed;
  const FitResult joint = fit(bundle, options);

  ordered_json j;
  j["version"] = kVersion;
  j["n"] = data.size();
  j["seed"] = config.seed;
  ordered_json levels = ordered_json::object();
  for (const auto& c : data.columns)
    if (c.categorical()) levels[c.name] = c.levels;
  j["levels"] = levels;

  if (!joint.convergence.converged) {
    out.exit_code = kExitNonConvergence;
    out.message = "joint fit did not converge (gradient norm " + fmt(joint.convergence.gradient_norm) + ")";
  }
  const Posterior post = covariance(bundle, joint);
  const Summary s = summary(bundle, joint, post, config.theta);
  ordered_json joint_json = fit_json(bundle, joint, s);
  joint_json["rho"] = {{"estimate", s.rho.rho}, {"lo", s.rho.lo}, {"hi", s.rho.hi}, {"theta", config.theta},
                       {"rho_star", s.rho.rho_star}, {"rho_star_se", s.rho.se_star}};
  j["joint"] = joint_json;

  if (config.uni_fit) {
    FitOptions uni = options;
    uni.fix_rho = true;
    const FitResult u = fit(bundle, uni);
    const Posterior up = covariance(bundle, u);
    j["univariate"] = fit_json(bundle, u, summary(bundle, u, up, config.theta));
  }
  out.summary_json = j.dump(2) + "\n";

  const DrawOptions draws{config.draws, config.theta, config.seed, false};
  const auto [tmin, tmax] = std::minmax_element(data.time.begin(), data.time.end());
  const std::vector<double> grid = time_grid(*tmin, *tmax, config.curve_points);

  if (command == Command::fit || command == Command::curves) {
    std::vector<Group> groups;
    if (config.groups.empty()) {
      std::vector<std::size_t> all(data.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      groups.push_back({"treated", all, 1});
      groups.push_back({"control", all, 0});
    }
    for (const auto& g : config.groups) {
      Group grp{g.label, select_rows(data, g), g.treatment};
      if (grp.rows.empty()) throw ConfigError("group '" + g.label + "' selects no subjects");
      groups.push_back(std::move(grp));
    }
    out.curves_tsv = curves_text(survival_curves(bundle, post, grid, groups, draws));
  }
  if (command == Command::fit || command == Command::sate) {
    const std::vector<std::size_t> rows = select_rows(data, config.sate_group);
    if (rows.empty()) throw ConfigError("sate.group selects no subjects");
    const std::vector<double>& times = config.sate_times.empty() ? grid : config.sate_times;
    out.sate_tsv = sate_text(sate(bundle, post, times, rows, draws));
  }
  return out;
}

void write_outputs(const RunResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    if (text.empty()) return;
    std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary);
    f << text;
    if (!f) throw ConfigError(std::string("cannot write ") + name + " in '" + dir + "'");
  };
  put("summary.json", result.summary_json);
  put("curves.tsv", result.curves_tsv);
  put("sate.tsv", result.sate_tsv);
  put("manifest.cfg", result.manifest);
}

int run_command(const RunConfig& config, Command command, std::string& log) {
  try {
    const RunResult r = run(config, command);
    write_outputs(r, config.output);
    log = r.message;
    return r.exit_code;
  } catch (const IngestError& e) {
    log = std::string("ingestion error: ") + e.what();
    return kExitIngest;
  } catch (const InferenceError& e) {
    log = std::string("inference error: ") + e.what();
    return kExitInference;
  } catch (const ConfigError& e) {
    log = std::string("config error: ") + e.what();
    return kExitConfig;
  }
}

double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return ((a - b).array().abs() / b.array().abs().max(1.0)).maxCoeff();
}

CheckResult check_derivatives(const RunConfig& config) {
  const DataSet data = ingest(config.data, config);
  const DesignBundle bundle = assemble(config.model, data);
  FitOptions options = config.fit;
  options.quick_start = true;
  Eigen::VectorXd delta = initial_values(bundle, options);
  delta[bundle.layout.rho_index()] = 0.3;
  CheckResult r;
  const auto g = score(bundle, delta);
  const auto gf = score_fd(bundle, delta);
  const auto h = hessian(bundle, delta);
  const auto hf = hessian_fd(bundle, delta);
  if (!g || !gf || !h || !hf) throw InferenceError("log-likelihood invalid at the check point");
  r.score_error = max_relative_error(*g, *gf);
  r.hessian_error = max_relative_error(*h, *hf);
  r.passed = r.score_error <= 1e-5 && r.hessian_error <= 1e-3;
  return r;
}

}  // namespace ctm
