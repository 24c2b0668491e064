#include "ctm/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctm/errors.hpp"
#include "ctm/likelihood.hpp"
#include "ctm/numerics.hpp"

namespace ctm {

void FitOptions::validate() const {
  if (max_outer_iters < 1 || max_tr_iters < 1) throw ConfigError("iteration limits must be positive");
  if (!(gradient_tolerance > 0.0)) throw ConfigError("gradient tolerance must be positive");
  if (!(initial_trust_radius > 0.0) || !(max_trust_radius >= initial_trust_radius)) {
    throw ConfigError("trust radius must be positive and not exceed its maximum");
  }
  if (!(log_lambda_hi > log_lambda_lo) || !(log_lambda_tol > 0.0)) throw ConfigError("invalid log-lambda bracket");
  if (!(initial_lambda > 0.0)) throw ConfigError("initial lambda must be positive");
  if (fixed_lambda && (fixed_lambda->array() < 0.0).any()) throw ConfigError("smoothing parameters must be >= 0");
}

// ---------------------------------------------------------------------------
// Trust region

double ridge_repair(const Eigen::MatrixXd& A) {
  if (!A.allFinite()) throw DomainError("ridge repair of a matrix with non-finite entries");
  auto ok = [&](double tau) {
    Eigen::MatrixXd B = A;
    B.diagonal().array() += tau;
    Eigen::LLT<Eigen::MatrixXd> llt(B);
    return llt.info() == Eigen::Success;
  };
  if (ok(0.0)) return 0.0;
  double hi = 1e-8 * (1.0 + A.diagonal().cwiseAbs().maxCoeff());
  while (!ok(hi)) {
    hi *= 2.0;
    if (!std::isfinite(hi)) throw DomainError("ridge repair found no positive definite shift");
  }
  double lo = 0.0;
  const double floor = 1e-14 * (1.0 + A.diagonal().cwiseAbs().maxCoeff());
  while (hi - lo > 1e-6 * hi && hi > floor) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

Eigen::VectorXd dogleg_step(const Eigen::VectorXd& g, const Eigen::MatrixXd& B, double radius) {
  const Eigen::LLT<Eigen::MatrixXd> llt(B);
  const Eigen::VectorXd newton = -llt.solve(g);
  if (newton.norm() <= radius) return newton;
  const double gnorm = g.norm();
  const Eigen::VectorXd cauchy = -(g.squaredNorm() / g.dot(B * g)) * g;
  if (cauchy.norm() >= radius) return -(radius / gnorm) * g;
  const Eigen::VectorXd d = newton - cauchy;
  const double a = d.squaredNorm(), b = 2.0 * cauchy.dot(d), c = cauchy.squaredNorm() - radius * radius;
  const double s = (-b + std::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);
  return cauchy + s * d;
}

TrustRegionResult maximize(const Objective& f, const Eigen::VectorXd& x0, const TrustRegionOptions& options) {
  TrustRegionResult out;
  out.x = x0;
  auto finite = [](const std::optional<LocalModel>& m) {
    return m && std::isfinite(m->value) && m->gradient.allFinite() && m->hessian.allFinite();
  };
  auto start = f(x0);
  if (!finite(start)) return out;
  out.model = std::move(*start);
  double radius = options.initial_radius;

  for (out.iterations = 0; out.iterations < options.max_iters; ++out.iterations) {
    out.gradient_norm = out.model.gradient.size() ? out.model.gradient.cwiseAbs().maxCoeff() : 0.0;
    if (out.gradient_norm <= options.gradient_tolerance * (1.0 + std::abs(out.model.value))) {
      out.converged = true;
      return out;
    }
    Eigen::MatrixXd B = -out.model.hessian;
    B.diagonal().array() += ridge_repair(B);
    const Eigen::VectorXd g = -out.model.gradient;
    const Eigen::VectorXd p = dogleg_step(g, B, radius);
    const double step = p.norm();
    const double predicted = -(g.dot(p) + 0.5 * p.dot(B * p));

    auto trial = f(out.x + p);
    if (!finite(trial)) trial.reset();
    const double actual = trial ? trial->value - out.model.value : -1.0;
    const double ratio = predicted > 0.0 ? actual / predicted : -1.0;
    // Near the optimum the predicted gain drops below the resolution of f; judge by the gradient there.
    const double resolution = 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(out.model.value));
    const bool roundoff = predicted <= 100.0 * resolution;
    const bool accept = (actual > 0.0 && ratio > 1e-4) ||
                        (roundoff && trial && actual >= -resolution &&
                         trial->gradient.cwiseAbs().maxCoeff() < out.model.gradient.cwiseAbs().maxCoeff());
    if (accept) {
      out.x += p;
      out.model = std::move(*trial);
      if (ratio < 0.25) {
        radius = 0.25 * step;
      } else if (ratio > 0.75 && step >= 0.99 * radius) {
        radius = std::min(2.0 * radius, options.max_radius);
      }
    } else {
      ++out.rejections;
      radius = 0.25 * step;
    }
    if (radius < 1e-14 * (1.0 + out.x.norm())) break;
  }
  out.gradient_norm = out.model.gradient.size() ? out.model.gradient.cwiseAbs().maxCoeff() : 0.0;
  out.converged = out.gradient_norm <= options.gradient_tolerance * (1.0 + std::abs(out.model.value));
  return out;
}

// ---------------------------------------------------------------------------
// Model fitting

namespace {

std::vector<int> free_indices(const ParameterLayout& layout, bool fix_rho) {
  std::vector<int> free;
  for (int j = 0; j < layout.psi(); ++j)
    if (!(fix_rho && j == layout.rho_index())) free.push_back(j);
  return free;
}

TrustRegionOptions tr_options(const FitOptions& o) {
  return {o.max_tr_iters, o.gradient_tolerance, o.initial_trust_radius, o.max_trust_radius};
}

Eigen::VectorXd lambda_or_default(const DesignBundle& bundle, const FitOptions& options) {
  const auto k = static_cast<Eigen::Index>(bundle.penalties.size());
  if (options.fixed_lambda) {
    if (options.fixed_lambda->size() != k) {
      throw ConfigError("expected " + std::to_string(k) + " smoothing parameters, got " +
                        std::to_string(options.fixed_lambda->size()));
    }
    return *options.fixed_lambda;
  }
  return Eigen::VectorXd::Constant(k, options.initial_lambda);
}

}  // namespace

Eigen::VectorXd edf_diagonal(const Eigen::MatrixXd& hessian, const Eigen::MatrixXd& penalized_hessian,
                             const std::vector<int>& free, double repair) {
  Eigen::MatrixXd A = -penalized_hessian(free, free);
  A.diagonal().array() += repair;
  const Eigen::MatrixXd F = A.ldlt().solve(-hessian(free, free));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(hessian.rows());
  for (std::size_t j = 0; j < free.size(); ++j) out[free[j]] = F(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
  return out;
}

std::optional<Eigen::VectorXd> probit_start(const DesignBundle& bundle, const Eigen::VectorXd& lambda) {
  const auto& L = bundle.layout;
  const int p2 = L.selection_size, off = L.selection_offset();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(p2, p2);
  for (std::size_t k = 0; k < bundle.penalties.size(); ++k) {
    const auto& pb = bundle.penalties[k];
    if (pb.offset < off) continue;
    S.block(pb.offset - off, pb.offset - off, pb.size, pb.size) += lambda[static_cast<Eigen::Index>(k)] * pb.matrix;
  }
  const Eigen::MatrixXd& Z = bundle.Z;
  const Objective f = [&](const Eigen::VectorXd& b) -> std::optional<LocalModel> {
    const Eigen::VectorXd eta = Z * b;
    Eigen::VectorXd w(eta.size()), h(eta.size());
    LocalModel m;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double s = bundle.treatment[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
      const double u = s * eta[i];
      const double mills = norm_mills(u);
      m.value += norm_log_cdf(u);
      w[i] = s * mills;
      h[i] = -mills * (u + mills);
    }
    m.value -= 0.5 * b.dot(S * b);
    m.gradient = Z.transpose() * w - S * b;
    m.hessian = Z.transpose() * h.asDiagonal() * Z - S;
    if (!std::isfinite(m.value)) return std::nullopt;
    return m;
  };
  Eigen::VectorXd b0 = Eigen::VectorXd::Zero(p2);
  double treated = 0.0;
  for (int d : bundle.treatment) treated += d;
  b0[0] = norm_quantile(treated / static_cast<double>(bundle.rows()));
  const auto r = maximize(f, b0, {200, 1e-9, 1.0, 1e3});
  if (!r.converged) return std::nullopt;
  return r.x;
}

Eigen::VectorXd ramp_start(const DesignBundle& bundle, double span) {
  const auto& L = bundle.layout;
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(L.psi());
  const int J = L.monotone_size, off = L.monotone_offset;
  for (int j = 1; j < J; ++j) delta[off + j] = std::log(span / (J - 1));
  const Eigen::VectorXd lin = L.linear(delta);
  Eigen::VectorXd h = bundle.X_tilde.middleCols(off, J) * lin.segment(off, J);
  std::vector<double> v(h.data(), h.data() + h.size());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  delta[off] = -v[v.size() / 2];
  return delta;
}

Eigen::VectorXd initial_values(const DesignBundle& bundle, const FitOptions& options) {
  const auto& L = bundle.layout;
  const Eigen::VectorXd lambda = lambda_or_default(bundle, options);
  Eigen::VectorXd delta;
  for (double span : {3.0, 1.5, 6.0, 0.75, 12.0}) {
    delta = ramp_start(bundle, span);
    if (loglik(bundle, delta)) break;
  }
  if (auto b2 = probit_start(bundle, lambda)) {
    delta.segment(L.selection_offset(), L.selection_size) = *b2;
    if (!loglik(bundle, delta)) delta.segment(L.selection_offset(), L.selection_size).setZero();
  }
  delta[L.rho_index()] = 0.0;
  if (options.quick_start) return delta;

  FitOptions uni = options;
  uni.fix_rho = true;
  const FitResult r = fit_fixed(bundle, delta, lambda, uni);
  if (std::isfinite(r.penalized_loglik) && r.delta.allFinite()) delta = r.delta;
  delta[L.rho_index()] = 0.0;
  return delta;
}

FitResult fit_fixed(const DesignBundle& bundle, const Eigen::VectorXd& delta0, const Eigen::VectorXd& lambda,
                    const FitOptions& options) {
  const auto& L = bundle.layout;
  if (delta0.size() != L.psi()) throw ConfigError("starting vector has the wrong dimension");
  FitResult out;
  out.fix_rho = options.fix_rho;
  out.free = free_indices(L, options.fix_rho);
  out.lambda = lambda;
  const Eigen::MatrixXd S = bundle.penalty_matrix(lambda);
  const std::vector<int>& free = out.free;

  Eigen::VectorXd base = delta0;
  if (options.fix_rho) base[L.rho_index()] = 0.0;
  const Objective f = [&](const Eigen::VectorXd& x) -> std::optional<LocalModel> {
    Eigen::VectorXd delta = base;
    delta(free) = x;
    auto e = evaluate(bundle, delta, Derivatives::hessian);
    if (!e) return std::nullopt;
    const Eigen::VectorXd Sd = S * delta;
    LocalModel m;
    m.value = e->loglik - 0.5 * delta.dot(Sd);
    m.gradient = (e->gradient - Sd)(free);
    m.hessian = (e->hessian - S)(free, free);
    return m;
  };
  const TrustRegionResult r = maximize(f, base(free), tr_options(options));

  out.delta = base;
  out.delta(free) = r.x;
  out.convergence.converged = r.converged;
  out.convergence.iterations = r.iterations;
  out.convergence.rejections = r.rejections;
  out.convergence.gradient_norm = r.gradient_norm;
  out.convergence.inner_fits = 1;

  const auto e = evaluate(bundle, out.delta, Derivatives::hessian);
  if (!e) {
    out.convergence.converged = false;
    out.loglik = out.penalized_loglik = out.aic = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.loglik = e->loglik;
  out.penalized_loglik = e->loglik - 0.5 * out.delta.dot(S * out.delta);
  out.hessian = e->hessian;
  out.penalized_hessian = e->hessian - S;
  out.repair = ridge_repair(-out.penalized_hessian(free, free));

  const Eigen::VectorXd diag = edf_diagonal(out.hessian, out.penalized_hessian, free, out.repair);
  out.edf_total = diag.sum();
  for (const auto& t : L.terms) out.edf_terms.push_back({t.label, diag.segment(t.offset, t.size).sum()});
  if (!options.fix_rho) out.edf_terms.push_back({"rho", diag[L.rho_index()]});
  out.aic = -2.0 * out.loglik + 2.0 * out.edf_total;
  return out;
}

// ---------------------------------------------------------------------------
// Smoothing parameter selection

namespace {

constexpr double kInvPhi = 0.6180339887498948482;

class AicSearch {
 public:
  AicSearch(const DesignBundle& bundle, const FitOptions& options, SmoothingSelection& sel)
      : bundle_(bundle), options_(options), sel_(sel) {}

  double operator()(const Eigen::VectorXd& log_lambda) {
    const Eigen::VectorXd start = have_best_ ? sel_.best.delta : start_;
    FitResult r = fit_fixed(bundle_, start, log_lambda.array().exp().matrix(), options_);
    ++fits_;
    const double aic = std::isfinite(r.aic) ? r.aic : std::numeric_limits<double>::infinity();
    sel_.trials.push_back({log_lambda, aic});
    if (!have_best_ || aic < sel_.best.aic || !std::isfinite(sel_.best.aic)) {
      sel_.best = std::move(r);
      have_best_ = true;
    }
    return aic;
  }

  void set_start(const Eigen::VectorXd& delta) { start_ = delta; }
  int fits() const { return fits_; }

 private:
  const DesignBundle& bundle_;
  const FitOptions& options_;
  SmoothingSelection& sel_;
  Eigen::VectorXd start_;
  bool have_best_ = false;
  int fits_ = 0;
};

// Minimizes phi on [lo, hi]; returns (argmin, value) among the evaluated points.
std::pair<double, double> golden_section(const std::function<double(double)>& phi, double lo, double hi, double tol) {
  double a = lo, b = hi;
  double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
  double fc = phi(c), fd = phi(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = phi(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = phi(d);
    }
  }
  return fc <= fd ? std::make_pair(c, fc) : std::make_pair(d, fd);
}

}  // namespace

SmoothingSelection select_smoothing(const DesignBundle& bundle, const Eigen::VectorXd& delta0,
                                    const FitOptions& options) {
  SmoothingSelection sel;
  const auto K = static_cast<Eigen::Index>(bundle.penalties.size());
  AicSearch aic(bundle, options, sel);
  aic.set_start(delta0);

  Eigen::VectorXd current = Eigen::VectorXd::Constant(K, std::log(options.initial_lambda));
  double current_aic = aic(current);
  int outer = 0;
  for (; outer < options.max_outer_iters && K > 0; ++outer) {
    bool changed = false;
    for (Eigen::Index k = 0; k < K; ++k) {
      auto phi = [&](double t) {
        Eigen::VectorXd v = current;
        v[k] = t;
        return aic(v);
      };
      double best_t = current[k], best_v = current_aic;
      if (!options.log_lambda_grid.empty()) {
        for (double t : options.log_lambda_grid) {
          const double v = phi(t);
          if (v < best_v) best_t = t, best_v = v;
        }
      } else {
        const double lo = outer == 0 ? options.log_lambda_lo : std::max(options.log_lambda_lo, current[k] - 2.0);
        const double hi = outer == 0 ? options.log_lambda_hi : std::min(options.log_lambda_hi, current[k] + 2.0);
        const auto [t, v] = golden_section(phi, lo, hi, options.log_lambda_tol);
        if (v < best_v) best_t = t, best_v = v;
      }
      if (std::abs(best_t - current[k]) > options.log_lambda_tol) changed = true;
      current[k] = best_t;
      current_aic = best_v;
    }
    if (!changed || K == 1) {
      ++outer;
      break;
    }
  }
  sel.best.convergence.outer_iterations = outer;
  sel.best.convergence.inner_fits = aic.fits();
  return sel;
}

FitResult fit(const DesignBundle& bundle, const FitOptions& options) {
  options.validate();
  return fit(bundle, initial_values(bundle, options), options);
}

FitResult fit(const DesignBundle& bundle, const Eigen::VectorXd& delta0, const FitOptions& options) {
  options.validate();
  if (options.fixed_lambda || bundle.penalties.empty()) {
    return fit_fixed(bundle, delta0, lambda_or_default(bundle, options), options);
  }
  return select_smoothing(bundle, delta0, options).best;
}

}  // namespace ctm
