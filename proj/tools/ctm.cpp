// ctm: fit causal transformation models for censored survival with an endogenous binary treatment.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctm/config.hpp"
#include "ctm/errors.hpp"
#include "ctm/run.hpp"
#include "ctm/simulate.hpp"

namespace {

void set_threads() {
  if (const char* env = std::getenv("CTM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
}

nlohmann::ordered_json parameter_json(const ctm::ParameterSummary& p) {
  return {{"name", p.name},         {"truth", p.truth}, {"mean", p.mean},         {"bias", p.bias},
          {"rmse", p.rmse},         {"variance", p.variance}, {"coverage", p.coverage}, {"count", p.count}};
}

}  // namespace

int main(int argc, char** argv) {
  set_threads();
  CLI::App app{"Causal transformation models for right-censored survival with endogenous treatment"};
  app.require_subcommand(1);

  std::string config_path, output;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Run configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output", output, "Output directory (overrides the config)");
    sub->add_option("--seed", seed, "Seed for posterior simulation");
  };
  auto* fit_cmd = app.add_subcommand("fit", "Fit the model; write summary, curves, SATE and manifest");
  auto* sate_cmd = app.add_subcommand("sate", "Fit the model; write summary and SATE");
  auto* curves_cmd = app.add_subcommand("curves", "Fit the model; write summary and survival curves");
  auto* check_cmd = app.add_subcommand("check", "Compare analytic and finite-difference derivatives");
  for (auto* s : {fit_cmd, sate_cmd, curves_cmd, check_cmd}) add_common(s);

  std::vector<double> sate_times;
  std::vector<std::string> groups;
  sate_cmd->add_option("--sate-times", sate_times, "Evaluation times for the SATE");
  sate_cmd->add_option("--group", groups, "Restrict the SATE to rows matching column=value filters");

  auto* sim_cmd = app.add_subcommand("simulate", "Generate a data set or run a replication study");
  ctm::DgpConfig dgp;
  ctm::StudyOptions study;
  double rho = 0.5;
  std::string csv_path, report_path;
  std::string errors = "gaussian";
  sim_cmd->add_option("--n", dgp.n, "Sample size")->default_val(2000);
  sim_cmd->add_option("--rho", rho, "Error correlation")->default_val(0.5);
  sim_cmd->add_option("--beta-d", dgp.beta_d, "Treatment effect")->default_val(0.5);
  sim_cmd->add_option("--instrument", dgp.instrument_coef, "Instrument coefficient")->default_val(2.0);
  sim_cmd->add_option("--censor-max", dgp.censor_max, "Upper bound of uniform censoring times")->default_val(4.0);
  sim_cmd->add_option("--errors", errors, "gaussian or t5")->check(CLI::IsMember({"gaussian", "t5"}));
  sim_cmd->add_option("--replicates", study.replicates, "Replicates; 0 writes one data set")->default_val(0);
  sim_cmd->add_option("--time-basis", study.time_basis, "Basis size of the time term")->default_val(20);
  sim_cmd->add_option("--seed", study.master_seed, "Master seed")->default_val(1);
  sim_cmd->add_option("--csv", csv_path, "Data set output path");
  sim_cmd->add_option("--report", report_path, "Replication report path (JSON)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim_cmd->parsed()) {
      dgp.set_rho(rho);
      dgp.errors = errors == "t5" ? ctm::ErrorLaw::student_t5 : ctm::ErrorLaw::gaussian;
      if (study.replicates == 0) {
        const auto sim = ctm::generate(dgp, study.master_seed);
        std::ofstream f(csv_path.empty() ? "simulated.csv" : csv_path);
        f << "time,status,treatment,x,z\n";
        const auto& d = sim.data;
        char buf[128];
        for (std::size_t i = 0; i < d.size(); ++i) {
          std::snprintf(buf, sizeof buf, "%.17g,%d,%d,%.17g,%.17g\n", d.time[i], d.status[i], d.treatment[i],
                        d.columns[0].values[i], d.columns[1].values[i]);
          f << buf;
        }
        return 0;
      }
      const auto rep = ctm::run_study(dgp, study);
      nlohmann::ordered_json j;
      j["replicates"] = rep.replicates;
      j["joint_failures"] = rep.joint_failures;
      j["univariate_failures"] = rep.univariate_failures;
      j["beta_d_joint"] = parameter_json(rep.beta_d_joint);
      j["beta_d_univariate"] = parameter_json(rep.beta_d_univariate);
      j["rho_joint"] = parameter_json(rep.rho_joint);
      j["sate_times"] = rep.sate_times;
      for (const auto& s : rep.sate_joint) j["sate_joint"].push_back(parameter_json(s));
      const std::string text = j.dump(2) + "\n";
      if (report_path.empty()) {
        std::cout << text;
      } else {
        std::ofstream(report_path) << text;
      }
      return 0;
    }

    ctm::RunConfig config = ctm::load_config(config_path);
    if (!output.empty()) config.output = output;
    if (seed) config.seed = config.fit.seed = *seed;

    if (check_cmd->parsed()) {
      const auto r = ctm::check_derivatives(config);
      std::printf("score max relative error   %.3e\nhessian max relative error %.3e\n%s\n", r.score_error,
                  r.hessian_error, r.passed ? "PASS" : "FAIL");
      return r.passed ? 0 : 1;
    }

    ctm::Command command = ctm::Command::fit;
    if (sate_cmd->parsed()) {
      command = ctm::Command::sate;
      if (!sate_times.empty()) config.sate_times = sate_times;
      for (const auto& g : groups) {
        const auto eq = g.find('=');
        if (eq == std::string::npos) throw ctm::ConfigError("--group expects column=value, got '" + g + "'");
        config.sate_group.filters.emplace_back(g.substr(0, eq), g.substr(eq + 1));
      }
    } else if (curves_cmd->parsed()) {
      command = ctm::Command::curves;
    }
    std::string log;
    const int code = ctm::run_command(config, command, log);
    if (!log.empty()) std::cerr << log << "\n";
    return code;
  } catch (const ctm::IngestError& e) {
    std::cerr << "ingestion error: " << e.what() << "\n";
    return ctm::kExitIngest;
  } catch (const ctm::InferenceError& e) {
    std::cerr << "inference error: " << e.what() << "\n";
    return ctm::kExitInference;
  } catch (const ctm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ctm::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
