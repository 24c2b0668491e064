#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctm/config.hpp"
#include "ctm/errors.hpp"
#include "ctm/run.hpp"
#include "ctm/simulate.hpp"

using namespace ctm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctm_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int shell(const std::string& args) {
  const int status = std::system((std::string(CTM_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

std::string toy_config(const fs::path& data) {
  return "data = " + data.string() +
         "\n"
         "time = dur\nstatus = status\ntreatment = agree\ninstrument = bonus\ncategorical = eth\n"
         "outcome.term = monotone dur 5\noutcome.term = treatment\noutcome.term = parametric age\n"
         "selection.term = parametric bonus\nselection.term = parametric age\n";
}

// A simulated data set written as CSV with a matching config.
fs::path simulated_run(const fs::path& dir, std::uint64_t seed, std::size_t n = 800) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.set_rho(0.5);
  cfg.censor_max = 4.0;
  const SimulatedData sim = generate(cfg, seed);
  std::ostringstream csv;
  csv.precision(17);
  csv << "time,status,treatment,x,z,sex\n";
  for (std::size_t i = 0; i < n; ++i) {
    csv << sim.data.time[i] << "," << sim.data.status[i] << "," << sim.data.treatment[i] << ","
        << sim.data.columns[0].values[i] << "," << sim.data.columns[1].values[i] << "," << (i % 2 ? "f" : "m") << "\n";
  }
  put(dir / "data.csv", csv.str());
  put(dir / "run.cfg", "data = " + (dir / "data.csv").string() +
                           "\ntime = time\nstatus = status\ntreatment = treatment\ninstrument = z\n"
                           "outcome.term = monotone time 10\noutcome.term = treatment\noutcome.term = parametric x\n"
                           "selection.term = parametric x\nselection.term = parametric z\n"
                           "group = women sex=f\ngroup = men sex=m\nsate.group = sex=f\ncurve.points = 40\n"
                           "output = " + (dir / "out").string() + "\n");
  return dir / "run.cfg";
}

}  // namespace

TEST_CASE("ingest a three-row file") {
  const fs::path d = scratch("toy");
  put(d / "toy.csv", "dur,status,agree,bonus,age,eth\n3.5,1,0,1,40,white\n2,0,1,0,31,black\n7,1,1,1,52,white\n");
  std::istringstream cfg(toy_config(d / "toy.csv"));
  const RunConfig c = parse_config(cfg);
  const DataSet data = ingest((d / "toy.csv").string(), c);
  CHECK(data.size() == 3);
  CHECK(data.time == std::vector<double>{3.5, 2.0, 7.0});
  CHECK(data.status == std::vector<int>{1, 0, 1});
  CHECK(data.treatment == std::vector<int>{0, 1, 1});
  CHECK(data.column("age").values == std::vector<double>{40, 31, 52});
}

TEST_CASE("categorical columns record their level map") {
  RunConfig c;
  c.time = "t";
  c.status = "s";
  c.treatment = "d";
  c.categorical = {"eth"};
  c.model.selection = {{TermKind::ridge, "eth", 0}};
  std::istringstream csv("t,s,d,eth\n1,1,0,white\n2,0,1,black\n3,1,1,other\n4,1,0,white\n");
  const DataSet data = ingest(csv, c);
  const Column& eth = data.column("eth");
  CHECK(eth.levels == std::vector<std::string>{"black", "other", "white"});
  CHECK(eth.values == std::vector<double>{2, 0, 1, 2});
  GroupSpec g;
  g.filters = {{"eth", "white"}};
  CHECK(select_rows(data, g) == std::vector<std::size_t>{0, 3});
}

TEST_CASE("ingestion errors name the row") {
  RunConfig c;
  c.time = "t";
  c.status = "s";
  c.treatment = "d";
  auto message = [&](const std::string& text) {
    std::istringstream in(text);
    try {
      ingest(in, c);
    } catch (const IngestError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("t,s,d\n1,1,0\n2,2,1\n").find("row 2") != std::string::npos);
  CHECK(message("t,s,d\n1,1,0\n2,1,1\n-3,0,1\n").find("row 3") != std::string::npos);
  CHECK(message("t,s,d\n1,1,3\n").find("row 1") != std::string::npos);
  CHECK(message("t,s,d\n1,NA,0\n").find("missing") != std::string::npos);
  CHECK(message("t,s,q\n1,1,0\n").find("unknown column 'd'") != std::string::npos);
}

TEST_CASE("config parsing") {
  std::istringstream bad("data = nowhere.csv\ntime = t\nstatus = s\ntreatment = d\nfit.gradient_tol = 1e-6\n");
  try {
    parse_config(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 5") != std::string::npos);
  }
  std::istringstream missing("time = t\nstatus = s\ntreatment = d\n");
  CHECK_THROWS_AS(parse_config(missing), ConfigError);
  std::istringstream no_value("data = x.csv\ntime =\n");
  CHECK_THROWS_AS(parse_config(no_value), ConfigError);

  // Instruments may not enter the outcome equation.
  std::istringstream leak(toy_config("x.csv") + "outcome.term = parametric bonus\n");
  CHECK_THROWS_AS(parse_config(leak), ConfigError);

  std::istringstream good(toy_config("x.csv") + "draws = 250\ntheta = 0.1\nsate.times = 1, 2.5\nfit.lambda = 0\n"
                                               "group = women eth=black treatment=1\nsate.group = eth=white\n");
  const RunConfig c = parse_config(good);
  CHECK(c.draws == 250);
  CHECK(c.sate_times == std::vector<double>{1.0, 2.5});
  REQUIRE(c.groups.size() == 1);
  CHECK(c.groups[0].treatment == 1);
  std::istringstream again(c.to_text());
  CHECK(parse_config(again).to_text() == c.to_text());
}

TEST_CASE("in-process run: outputs, replay and monotone curves") {
  const fs::path d = scratch("run");
  const RunConfig c = load_config(simulated_run(d, 4).string());
  const RunResult a = run(c, Command::fit);
  REQUIRE(a.exit_code == kExitOk);
  write_outputs(a, c.output);
  for (const char* f : {"summary.json", "curves.tsv", "sate.tsv", "manifest.cfg"}) CHECK(fs::exists(fs::path(c.output) / f));

  const RunConfig replay = load_config((fs::path(c.output) / "manifest.cfg").string());
  const RunResult b = run(replay, Command::fit);
  CHECK(a.summary_json == b.summary_json);
  CHECK(a.curves_tsv == b.curves_tsv);
  CHECK(a.sate_tsv == b.sate_tsv);

  const auto j = nlohmann::json::parse(a.summary_json);
  CHECK(j["joint"]["converged"] == true);
  CHECK(j["n"] == 800);
  CHECK(j["joint"]["rho"]["lo"].get<double>() <= j["joint"]["rho"]["estimate"].get<double>());

  // Point estimates per group do not increase over time.
  std::istringstream curves(a.curves_tsv);
  std::string line;
  std::getline(curves, line);
  std::map<std::string, std::vector<double>> by_group;
  while (std::getline(curves, line)) {
    std::istringstream row(line);
    std::string t, group, est;
    std::getline(row, t, '\t');
    std::getline(row, group, '\t');
    std::getline(row, est, '\t');
    by_group[group].push_back(std::stod(est));
  }
  CHECK(by_group.size() == 2);
  for (const auto& [g, v] : by_group) {
    CHECK(v.size() == 40);
    for (std::size_t k = 1; k < v.size(); ++k) CHECK(v[k] <= v[k - 1]);
  }
}

TEST_CASE("simulated data round trip through the batch run") {
  // beta_d = 0.5 lies inside the joint 95% interval in most runs.
  const fs::path d = scratch("coverage");
  int covered = 0, converged = 0;
  for (std::uint64_t r = 0; r < 50; ++r) {
    const RunConfig c = load_config(simulated_run(d, 100 + r, 600).string());
    const RunResult res = run(c, Command::sate);
    const auto j = nlohmann::json::parse(res.summary_json);
    converged += j["joint"]["converged"].get<bool>();
    for (const auto& row : j["joint"]["outcome"]) {
      if (row["term"] != "treatment") continue;
      const double est = row["estimate"], se = row["std_error"];
      covered += std::abs(est - 0.5) <= 1.959963984540054 * se;
    }
  }
  MESSAGE("covered ", covered, " of 50");
  CHECK(converged == 50);
  CHECK(covered >= 45);
}

TEST_CASE("command line exit codes") {
  const fs::path d = scratch("exit");
  const fs::path cfg = simulated_run(d, 7, 400);
  const std::string out = (d / "cli_out").string();
  CHECK(shell("fit -c " + cfg.string() + " -o " + out) == 0);
  CHECK(fs::exists(fs::path(out) / "summary.json"));

  // Replaying the manifest from the command line reproduces the summary byte for byte.
  const std::string out2 = (d / "cli_replay").string();
  CHECK(shell("fit -c " + (fs::path(out) / "manifest.cfg").string() + " -o " + out2) == 0);
  CHECK(slurp(fs::path(out) / "summary.json") == slurp(fs::path(out2) / "summary.json"));

  CHECK(shell("check -c " + cfg.string()) == 0);
  CHECK(shell("sate -c " + cfg.string() + " -o " + out + " --sate-times 0.5 1.0 --group sex=f") == 0);
  CHECK(slurp(fs::path(out) / "sate.tsv").find("\n1\t") != std::string::npos);

  put(d / "bad.cfg", slurp(cfg) + "fit.unknown = 3\n");
  CHECK(shell("fit -c " + (d / "bad.cfg").string()) == kExitConfig);

  std::string csv = slurp(d / "data.csv");
  const auto second = csv.find('\n', csv.find('\n') + 1) + 1;
  csv.replace(csv.find(',', second) + 1, 1, "2");
  put(d / "data.csv", csv);
  CHECK(shell("fit -c " + cfg.string() + " -o " + out) == kExitIngest);

  simulated_run(d, 7, 400);
  put(d / "slow.cfg", slurp(cfg) + "fit.max_tr_iters = 1\nfit.max_outer_iters = 1\n");
  CHECK(shell("fit -c " + (d / "slow.cfg").string() + " -o " + out) == kExitNonConvergence);

  const std::string sim_csv = (d / "sim.csv").string();
  CHECK(shell("simulate --n 50 --seed 3 --csv " + sim_csv) == 0);
  CHECK(std::count(std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(sim_csv)),
                   std::istreambuf_iterator<char>(), '\n') == 51);
}

TEST_CASE("non-positive-definite Hessian maps to the inference exit code") {
  const fs::path d = scratch("inference");
  std::ostringstream csv;
  csv << "t,s,d,z,g\n";
  for (int i = 0; i < 60; ++i) csv << 0.2 + 0.05 * i << "," << (i % 3 ? 1 : 0) << "," << (i % 2) << "," << (i % 4 < 2) << ",l" << i << "\n";
  put(d / "data.csv", csv.str());
  put(d / "run.cfg", "data = " + (d / "data.csv").string() +
                         "\ntime = t\nstatus = s\ntreatment = d\ninstrument = z\ncategorical = g\n"
                         "outcome.term = monotone t 5\noutcome.term = treatment\noutcome.term = ridge g\n"
                         "selection.term = parametric z\nfit.lambda = 0, 0\n");
  const int code = shell("fit -c " + (d / "run.cfg").string() + " -o " + (d / "out").string());
  CHECK(code == kExitInference);
}
