#include "ctm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "ctm/errors.hpp"
#include "ctm/inference.hpp"
#include "ctm/numerics.hpp"

namespace ctm {

double DgpConfig::sigma_1() const { return std::sqrt(1.0 - beta_1U * beta_1U * sigma_U * sigma_U); }
double DgpConfig::sigma_2() const { return std::sqrt(1.0 - beta_2U * beta_2U * sigma_U * sigma_U); }

DgpConfig& DgpConfig::set_rho(double rho) {
  sigma_U = 1.0;
  beta_1U = std::sqrt(std::abs(rho));
  beta_2U = rho < 0.0 ? -beta_1U : beta_1U;
  return *this;
}

void DgpConfig::validate() const {
  if (n < 1) throw ConfigError("simulation needs n >= 1");
  if (!(sigma_U >= 0.0)) throw ConfigError("sigma_U must be non-negative");
  const double v1 = 1.0 - beta_1U * beta_1U * sigma_U * sigma_U;
  const double v2 = 1.0 - beta_2U * beta_2U * sigma_U * sigma_U;
  if (!(v1 > 0.0) || !(v2 > 0.0)) throw ConfigError("confounder loadings leave no idiosyncratic variance");
  if (!(instrument_prob >= 0.0 && instrument_prob <= 1.0)) throw ConfigError("instrument probability outside [0, 1]");
  if (!(censor_max > 0.0)) throw ConfigError("censoring bound must be positive");
}

SimulatedData generate(const DgpConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution instrument(config.instrument_prob);
  std::gamma_distribution<double> chi2_half(2.5, 2.0);
  const bool censoring = std::isfinite(config.censor_max);
  std::uniform_real_distribution<double> censor(0.0, censoring ? config.censor_max : 1.0);
  const double s1 = config.sigma_1(), s2 = config.sigma_2();

  SimulatedData out;
  const std::size_t n = config.n;
  std::vector<double> x(n), z(n);
  out.eps1.resize(n);
  out.eps2.resize(n);
  out.event_time.resize(n);
  out.censor_time.resize(n, std::numeric_limits<double>::infinity());
  auto& data = out.data;
  data.time.resize(n);
  data.status.resize(n);
  data.treatment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = normal(gen);
    z[i] = instrument(gen) ? 1.0 : 0.0;
    const double u = config.sigma_U * normal(gen);
    double e1 = config.beta_1U * u + s1 * normal(gen);
    double e2 = config.beta_2U * u + s2 * normal(gen);
    if (config.errors == ErrorLaw::student_t5) {
      const double scale = std::sqrt(3.0 / chi2_half(gen));
      e1 *= scale;
      e2 *= scale;
    }
    out.eps1[i] = e1;
    out.eps2[i] = e2;
    const int d = config.selection_intercept + config.selection_x * x[i] + config.instrument_coef * z[i] + e2 > 0.0;
    const double t = std::exp(-(config.outcome_intercept + config.outcome_x * x[i] + config.beta_d * d + e1));
    out.event_time[i] = t;
    if (censoring) out.censor_time[i] = censor(gen);
    data.treatment[i] = d;
    data.time[i] = std::min(t, out.censor_time[i]);
    data.status[i] = t <= out.censor_time[i] ? 1 : 0;
  }
  data.add_column("x", std::move(x));
  data.add_column("z", std::move(z));
  return out;
}

double true_survival(const DgpConfig& config, double t, double x, int d) {
  const double u = -std::log(t) - config.outcome_intercept - config.outcome_x * x - config.beta_d * d;
  if (config.errors == ErrorLaw::gaussian) return norm_cdf(u);
  return boost::math::cdf(boost::math::students_t(5.0), u / std::sqrt(0.6));
}

std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t r) {
  std::uint64_t z = master + (r + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ModelSpec study_model(int time_basis) {
  ModelSpec spec;
  spec.outcome = {{TermKind::monotone, "time", time_basis}, {TermKind::treatment, "", 0}, {TermKind::parametric, "x", 0}};
  spec.selection = {{TermKind::parametric, "x", 0}, {TermKind::parametric, "z", 0}};
  return spec;
}

namespace {

ReplicateResult run_replicate(const DgpConfig& config, const StudyOptions& options, const std::vector<double>& times,
                              std::uint64_t seed) {
  ReplicateResult res;
  res.seed = seed;
  const SimulatedData sim = generate(config, seed);
  const DataSet& data = sim.data;
  double censored = 0.0;
  for (int s : data.status) censored += 1 - s;
  res.censored_fraction = censored / static_cast<double>(data.size());
  const DesignBundle bundle = assemble(study_model(options.time_basis), data);
  const int tc = bundle.treatment_column;

  const std::vector<double>& xs = data.column("x").values;
  const double hi = bundle.monotone->spline().hi();
  res.sate_truth.assign(times.size(), std::nan(""));
  res.sate_estimate.assign(times.size(), std::nan(""));
  std::vector<double> usable;
  for (std::size_t k = 0; k < times.size(); ++k) {
    double sum = 0.0;
    for (double x : xs) sum += true_survival(config, times[k], x, 1) - true_survival(config, times[k], x, 0);
    res.sate_truth[k] = sum / static_cast<double>(xs.size());
    if (times[k] <= hi) usable.push_back(times[k]);
  }

  try {
    const FitResult joint = fit(bundle, options.fit);
    if (!joint.convergence.converged) throw std::runtime_error("joint fit did not converge");
    const Posterior post = covariance(bundle, joint);
    res.beta_d_joint = post.mean_tilde[tc];
    res.se_joint = std::sqrt(post.V_tilde(tc, tc));
    const RhoInterval ri = rho_interval(joint, post);
    res.rho = ri.rho;
    res.rho_lo = ri.lo;
    res.rho_hi = ri.hi;
    if (!usable.empty()) {
      const std::vector<double> est = sate_point(bundle, joint.delta, usable);
      for (std::size_t k = 0; k < usable.size(); ++k) res.sate_estimate[k] = est[k];
    }
    res.joint_ok = std::isfinite(res.beta_d_joint) && std::isfinite(res.se_joint) && std::isfinite(res.rho);
  } catch (const std::exception& e) {
    res.failure = std::string("joint: ") + e.what();
  }

  if (options.fit_univariate) {
    try {
      FitOptions uni = options.fit;
      uni.fix_rho = true;
      const FitResult r = fit(bundle, uni);
      if (!r.convergence.converged) throw std::runtime_error("univariate fit did not converge");
      const Posterior post = covariance(bundle, r);
      res.beta_d_univariate = post.mean_tilde[tc];
      res.se_univariate = std::sqrt(post.V_tilde(tc, tc));
      res.univariate_ok = std::isfinite(res.beta_d_univariate) && std::isfinite(res.se_univariate);
    } catch (const std::exception& e) {
      if (!res.failure.empty()) res.failure += "; ";
      res.failure += std::string("univariate: ") + e.what();
    }
  }
  return res;
}

ParameterSummary summarize(const std::string& name, double truth, const std::vector<double>& est,
                           const std::vector<int>& covered) {
  ParameterSummary s;
  s.name = name;
  s.truth = truth;
  s.count = static_cast<int>(est.size());
  if (est.empty()) return s;
  double sum = 0.0, sq = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    sum += est[i];
    sq += (est[i] - truth) * (est[i] - truth);
    if (!covered.empty()) cov += covered[i];
  }
  const double m = static_cast<double>(est.size());
  s.mean = sum / m;
  s.bias = s.mean - truth;
  s.rmse = std::sqrt(sq / m);
  double var = 0.0;
  for (double e : est) var += (e - s.mean) * (e - s.mean);
  s.variance = est.size() > 1 ? var / (m - 1.0) : 0.0;
  s.coverage = covered.empty() ? std::nan("") : cov / m;
  return s;
}

}  // namespace

ReplicationReport run_study(const DgpConfig& config, const StudyOptions& options) {
  config.validate();
  if (options.replicates < 1) throw ConfigError("replicates must be >= 1");
  std::vector<double> times = options.sate_times;
  if (times.empty()) {
    times = std::isfinite(config.censor_max)
                ? std::vector<double>{0.1 * config.censor_max, 0.2 * config.censor_max, 0.3 * config.censor_max,
                                      0.4 * config.censor_max, 0.5 * config.censor_max}
                : std::vector<double>{0.25, 0.5, 1.0, 2.0, 4.0};
  }
  std::sort(times.begin(), times.end());

  ReplicationReport rep;
  rep.replicates = options.replicates;
  rep.sate_times = times;
  rep.details.resize(static_cast<std::size_t>(options.replicates));
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < options.replicates; ++r) {
    const std::uint64_t seed = replicate_seed(options.master_seed, static_cast<std::uint64_t>(r));
    try {
      rep.details[static_cast<std::size_t>(r)] = run_replicate(config, options, times, seed);
    } catch (const std::exception& e) {
      auto& d = rep.details[static_cast<std::size_t>(r)];
      d.seed = seed;
      d.failure = e.what();
    }
  }

  const double z = norm_quantile(0.975);
  const double rho_true = config.rho();
  std::vector<double> bj, bu, rj;
  std::vector<int> cj, cu, cr;
  std::vector<std::vector<double>> sj(times.size());
  std::vector<double> sate_truth(times.size(), 0.0);
  std::vector<int> sate_count(times.size(), 0);
  for (const auto& d : rep.details) {
    if (d.joint_ok) {
      bj.push_back(d.beta_d_joint);
      cj.push_back(std::abs(d.beta_d_joint - config.beta_d) <= z * d.se_joint);
      rj.push_back(d.rho);
      cr.push_back(d.rho_lo <= rho_true && rho_true <= d.rho_hi);
      for (std::size_t k = 0; k < times.size(); ++k) {
        if (std::isnan(d.sate_estimate[k])) continue;
        sj[k].push_back(d.sate_estimate[k] - d.sate_truth[k]);
        sate_truth[k] += d.sate_truth[k];
        ++sate_count[k];
      }
    } else {
      ++rep.joint_failures;
    }
    if (options.fit_univariate) {
      if (d.univariate_ok) {
        bu.push_back(d.beta_d_univariate);
        cu.push_back(std::abs(d.beta_d_univariate - config.beta_d) <= z * d.se_univariate);
      } else {
        ++rep.univariate_failures;
      }
    }
  }
  rep.beta_d_joint = summarize("beta_d (joint)", config.beta_d, bj, cj);
  rep.beta_d_univariate = summarize("beta_d (univariate)", config.beta_d, bu, cu);
  rep.rho_joint = summarize("rho (joint)", rho_true, rj, cr);
  for (std::size_t k = 0; k < times.size(); ++k) {
    // Errors against the per-replicate sample truth; truth reported as its average.
    ParameterSummary s = summarize("SATE(" + std::to_string(times[k]) + ")", 0.0, sj[k], {});
    s.truth = sate_count[k] ? sate_truth[k] / sate_count[k] : std::nan("");
    s.mean += s.truth;
    rep.sate_joint.push_back(s);
  }
  return rep;
}

}  // namespace ctm
