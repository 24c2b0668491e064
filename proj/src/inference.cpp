#include "ctm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "ctm/errors.hpp"
#include "ctm/numerics.hpp"

namespace ctm {

Posterior covariance(const DesignBundle& bundle, const FitResult& fit) {
  const auto& L = bundle.layout;
  const std::vector<int>& free = fit.free;
  Eigen::MatrixXd A = -fit.penalized_hessian(free, free);
  A.diagonal().array() += fit.repair;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A, Eigen::EigenvaluesOnly);
  const double smallest = eig.eigenvalues().minCoeff();
  const double largest = eig.eigenvalues().maxCoeff();
  if (!(smallest > 1e-12 * std::max(1.0, largest))) {
    std::ostringstream msg;
    msg << "negated penalized Hessian is not positive definite (smallest eigenvalue " << smallest << ")";
    throw InferenceError(msg.str());
  }
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  const Eigen::LLT<Eigen::MatrixXd> llt(A);
  Eigen::MatrixXd Vf = llt.solve(I);
  Vf += llt.solve(I - A * Vf);  // one refinement step
  Vf = 0.5 * (Vf + Vf.transpose()).eval();

  Posterior post;
  post.free = free;
  post.mean = fit.delta;
  post.mean_tilde = L.linear(fit.delta);
  post.V = Eigen::MatrixXd::Zero(L.psi(), L.psi());
  post.V(free, free) = Vf;
  const Eigen::VectorXd E = L.E(fit.delta);
  post.V_tilde = E.asDiagonal() * post.V * E.asDiagonal();
  return post;
}

EdfReport edf(const DesignBundle& bundle, const FitResult& fit) {
  const auto& L = bundle.layout;
  const Posterior post = covariance(bundle, fit);
  const Eigen::VectorXd diag = (post.V * -fit.hessian).diagonal();
  const Eigen::MatrixXd S = bundle.penalty_matrix(fit.lambda);
  EdfReport out;
  out.total = diag.sum();
  out.total_trace = static_cast<double>(fit.free.size()) - (post.V * S).trace();
  for (const auto& t : L.terms) out.terms.push_back({t.label, diag.segment(t.offset, t.size).sum()});
  if (!fit.fix_rho) out.terms.push_back({"rho", diag[L.rho_index()]});
  return out;
}

double wald_p_value(double estimate, double std_error) {
  if (estimate == 0.0) return 1.0;
  return 2.0 * norm_cdf(-std::abs(estimate / std_error));
}

std::pair<double, double> rank_wald(const Eigen::VectorXd& f, const Eigen::MatrixXd& V, int rank) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(V);
  const auto m = static_cast<int>(V.rows());
  rank = std::clamp(rank, 1, m);
  double stat = 0.0;
  for (int k = m - rank; k < m; ++k) {
    const double ev = eig.eigenvalues()[k];
    if (!(ev > 0.0)) continue;
    const double u = eig.eigenvectors().col(k).dot(f);
    stat += u * u / ev;
  }
  const boost::math::chi_squared chi(rank);
  return {stat, boost::math::cdf(boost::math::complement(chi, stat))};
}

RhoInterval rho_interval(const FitResult& fit, const Posterior& post, double theta) {
  RhoInterval out;
  if (fit.fix_rho) return out;
  const auto ir = static_cast<Eigen::Index>(post.mean.size() - 1);
  out.rho_star = post.mean[ir];
  out.se_star = std::sqrt(post.V(ir, ir));
  const double z = norm_quantile(1.0 - theta / 2.0);
  out.rho = std::tanh(out.rho_star);
  out.lo = std::tanh(out.rho_star - z * out.se_star);
  out.hi = std::tanh(out.rho_star + z * out.se_star);
  return out;
}

Summary summary(const DesignBundle& bundle, const FitResult& fit, const Posterior& post, double theta) {
  const auto& L = bundle.layout;
  Summary out;
  out.loglik = fit.loglik;
  out.edf_total = fit.edf_total;
  out.aic = fit.aic;
  out.n = bundle.rows();
  out.rho = rho_interval(fit, post, theta);
  for (std::size_t k = 0; k < L.terms.size(); ++k) {
    const auto& t = L.terms[k];
    const std::string eq = t.equation == Equation::outcome ? "outcome" : "selection";
    const bool smooth = t.kind == TermKind::ridge || t.kind == TermKind::smooth || t.kind == TermKind::monotone;
    if (!smooth) {
      for (int j = 0; j < t.size; ++j) {
        CoefficientRow row;
        row.equation = eq;
        row.term = t.label;
        row.label = t.column_labels[static_cast<std::size_t>(j)];
        row.estimate = post.mean_tilde[t.offset + j];
        row.std_error = std::sqrt(post.V_tilde(t.offset + j, t.offset + j));
        row.z = row.estimate / row.std_error;
        row.p_value = wald_p_value(row.estimate, row.std_error);
        out.parametric.push_back(row);
      }
      continue;
    }
    const Eigen::MatrixXd& X = t.equation == Equation::outcome ? bundle.X_tilde : bundle.Z;
    const int col = t.equation == Equation::outcome ? t.offset : t.offset - L.selection_offset();
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(X.middleCols(col, t.size));
    const Eigen::MatrixXd R = qr.matrixQR().topRows(t.size).triangularView<Eigen::Upper>();
    const Eigen::VectorXd f = R * post.mean_tilde.segment(t.offset, t.size);
    const Eigen::MatrixXd Vf = R * post.V_tilde.block(t.offset, t.offset, t.size, t.size) * R.transpose();
    SmoothRow row;
    row.equation = eq;
    row.label = t.label;
    row.edf = fit.edf_terms[k].edf;
    row.rank = std::clamp(static_cast<int>(std::lround(row.edf)), 1, t.size);
    std::tie(row.statistic, row.p_value) = rank_wald(f, Vf, row.rank);
    out.smooth.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Posterior simulation

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DomainError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Eigen::MatrixXd draw_outcome_coefficients(const DesignBundle& bundle, const Posterior& post, int draws,
                                          std::uint64_t seed) {
  const int p1 = bundle.layout.outcome_size;
  const Eigen::MatrixXd V11 = post.V.topLeftCorner(p1, p1);
  Eigen::MatrixXd root;
  const Eigen::LLT<Eigen::MatrixXd> llt(V11);
  if (llt.info() == Eigen::Success) {
    root = llt.matrixL();
  } else {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(V11);
    root = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd z(p1, draws);
  for (int v = 0; v < draws; ++v)
    for (int j = 0; j < p1; ++j) z(j, v) = normal(gen);
  return (root * z).colwise() + post.mean.head(p1);
}

namespace {

// eta1(t, x_i, d) = base_i + h(t) + d * tau_i for a fixed linear-scale outcome vector.
class OutcomeEvaluator {
 public:
  OutcomeEvaluator(const DesignBundle& bundle, const std::vector<double>& times) : bundle_(bundle) {
    const auto& L = bundle.layout;
    if (times.empty()) throw ConfigError("empty time grid");
    const auto& spline = bundle.monotone->spline();
    time_rows_.resize(static_cast<Eigen::Index>(times.size()), L.monotone_size);
    for (std::size_t k = 0; k < times.size(); ++k) {
      if (!(times[k] >= spline.lo() && times[k] <= spline.hi())) {
        std::ostringstream msg;
        msg << "time " << times[k] << " outside the time-term interval [" << spline.lo() << ", " << spline.hi() << "]";
        throw ConfigError(msg.str());
      }
      time_rows_.row(static_cast<Eigen::Index>(k)) = bundle.monotone->cumulative_row(times[k]);
    }
    base_design_ = bundle.X_tilde;
    base_design_.middleCols(L.monotone_offset, L.monotone_size).setZero();
    base_design_.col(bundle.treatment_column).setZero();
    for (const auto& inter : bundle.interactions) base_design_.col(inter.column).setZero();
  }

  struct Parts {
    Eigen::VectorXd base;
    Eigen::VectorXd h;
    Eigen::VectorXd tau;
  };

  Parts parts(const Eigen::VectorXd& working) const {
    const auto& L = bundle_.layout;
    const Eigen::VectorXd b = L.linear(working);
    Parts p;
    p.base = base_design_ * b;
    p.h = time_rows_ * b.segment(L.monotone_offset, L.monotone_size);
    p.tau = Eigen::VectorXd::Constant(p.base.size(), b[bundle_.treatment_column]);
    for (const auto& inter : bundle_.interactions) {
      for (Eigen::Index i = 0; i < p.tau.size(); ++i) p.tau[i] += b[inter.column] * inter.modifier[static_cast<std::size_t>(i)];
    }
    return p;
  }

 private:
  const DesignBundle& bundle_;
  Eigen::MatrixXd time_rows_;
  Eigen::MatrixXd base_design_;
};

double survival(const OutcomeEvaluator::Parts& p, Eigen::Index t, std::size_t i, int d) {
  const auto k = static_cast<Eigen::Index>(i);
  return norm_cdf(-(p.base[k] + p.h[t] + d * p.tau[k]));
}

// Columns: one per curve, rows: time points.
using CurveFn = std::function<Eigen::MatrixXd(const OutcomeEvaluator::Parts&)>;

CurveSet simulate_bands(const DesignBundle& bundle, const Posterior& post, const std::vector<double>& times,
                        const std::vector<std::string>& labels, const CurveFn& curves, const DrawOptions& options) {
  if (options.draws < 1) throw ConfigError("posterior draw count must be positive");
  if (!(options.theta > 0.0 && options.theta < 1.0)) throw ConfigError("theta must lie in (0, 1)");
  const OutcomeEvaluator ev(bundle, times);
  const Eigen::MatrixXd point = curves(ev.parts(post.mean.head(bundle.layout.outcome_size)));
  const Eigen::MatrixXd beta = draw_outcome_coefficients(bundle, post, options.draws, options.seed);
  std::vector<Eigen::MatrixXd> drawn(static_cast<std::size_t>(options.draws));
#pragma omp parallel for schedule(static)
  for (int v = 0; v < options.draws; ++v) drawn[static_cast<std::size_t>(v)] = curves(ev.parts(beta.col(v)));

  CurveSet out;
  out.times = times;
  out.theta = options.theta;
  out.draws = options.draws;
  out.seed = options.seed;
  const auto T = static_cast<Eigen::Index>(times.size());
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const auto c = static_cast<Eigen::Index>(g);
    Curve curve;
    curve.label = labels[g];
    std::vector<double> sample(static_cast<std::size_t>(options.draws));
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int v = 0; v < options.draws; ++v) sample[static_cast<std::size_t>(v)] = drawn[static_cast<std::size_t>(v)](t, c);
      const double est = point(t, c);
      curve.estimate.push_back(est);
      curve.lo.push_back(std::min(est, quantile(sample, options.theta / 2.0)));
      curve.hi.push_back(std::max(est, quantile(sample, 1.0 - options.theta / 2.0)));
    }
    if (options.keep_draws) {
      for (int v = 0; v < options.draws; ++v) {
        const Eigen::VectorXd col = drawn[static_cast<std::size_t>(v)].col(c);
        curve.draws.emplace_back(col.data(), col.data() + col.size());
      }
    }
    out.curves.push_back(std::move(curve));
  }
  return out;
}

}  // namespace

CurveSet survival_curves(const DesignBundle& bundle, const Posterior& post, const std::vector<double>& times,
                         const std::vector<Group>& groups, const DrawOptions& options) {
  if (groups.empty()) throw ConfigError("no groups given for survival curves");
  std::vector<std::string> labels;
  for (const auto& g : groups) {
    if (g.rows.empty()) throw ConfigError("group '" + g.label + "' selects no subjects");
    labels.push_back(g.label);
  }
  const CurveFn fn = [&](const OutcomeEvaluator::Parts& p) {
    Eigen::MatrixXd out(p.h.size(), static_cast<Eigen::Index>(groups.size()));
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (Eigen::Index t = 0; t < p.h.size(); ++t) {
        double sum = 0.0;
        for (std::size_t i : groups[g].rows) sum += survival(p, t, i, groups[g].treatment.value_or(bundle.treatment[i]));
        out(t, static_cast<Eigen::Index>(g)) = sum / static_cast<double>(groups[g].rows.size());
      }
    }
    return out;
  };
  CurveSet out = simulate_bands(bundle, post, times, labels, fn, options);
  const OutcomeEvaluator at_zero(bundle, {0.0});
  const Eigen::MatrixXd s0 = fn(at_zero.parts(post.mean.head(bundle.layout.outcome_size)));
  for (Eigen::Index g = 0; g < s0.cols(); ++g) {
    out.survival_at_zero.push_back(s0(0, g));
    if (s0(0, g) < 0.99) out.left_boundary_flag = true;
  }
  return out;
}

CurveSet sate(const DesignBundle& bundle, const Posterior& post, const std::vector<double>& times,
              const std::vector<std::size_t>& rows, const DrawOptions& options, int treated, int control) {
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(bundle.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  }
  const std::vector<std::size_t>& use = rows.empty() ? all : rows;
  const CurveFn fn = [&](const OutcomeEvaluator::Parts& p) {
    Eigen::MatrixXd out(p.h.size(), 1);
    for (Eigen::Index t = 0; t < p.h.size(); ++t) {
      double sum = 0.0;
      for (std::size_t i : use) sum += survival(p, t, i, treated) - survival(p, t, i, control);
      out(t, 0) = sum / static_cast<double>(use.size());
    }
    return out;
  };
  return simulate_bands(bundle, post, times, {"SATE"}, fn, options);
}

std::vector<double> sate_point(const DesignBundle& bundle, const Eigen::VectorXd& delta, const std::vector<double>& times,
                               const std::vector<std::size_t>& rows, int treated, int control) {
  const OutcomeEvaluator ev(bundle, times);
  const auto p = ev.parts(delta.head(bundle.layout.outcome_size));
  const std::size_t n = rows.empty() ? bundle.rows() : rows.size();
  std::vector<double> out(times.size());
  for (std::size_t t = 0; t < times.size(); ++t) {
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = rows.empty() ? k : rows[k];
      sum += survival(p, static_cast<Eigen::Index>(t), i, treated) - survival(p, static_cast<Eigen::Index>(t), i, control);
    }
    out[t] = sum / static_cast<double>(n);
  }
  return out;
}

std::vector<double> time_grid(double lo, double hi, int points) {
  if (points < 1) throw ConfigError("time grid needs at least one point");
  if (points == 1) return {lo};
  std::vector<double> out(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) out[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (points - 1);
  out.back() = hi;
  return out;
}

int increase_violations(const std::vector<double>& v, double tol) {
  int count = 0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i)
    if (v[i + 1] > v[i] + tol) ++count;
  return count;
}

}  // namespace ctm
