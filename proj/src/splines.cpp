#include "ctm/splines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ctm/errors.hpp"

namespace ctm {

namespace {

constexpr int kMaxSmoothKnots = 400;

std::vector<double> sorted_unique(std::span<const double> x) {
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

// Thin-plate radial function for d = 1, m = 2.
double radial(double r) { return std::abs(r * r * r) / 12.0; }

}  // namespace

const char* to_string(TermKind kind) {
  switch (kind) {
    case TermKind::parametric: return "parametric";
    case TermKind::ridge: return "ridge";
    case TermKind::smooth: return "smooth";
    case TermKind::monotone: return "monotone";
    case TermKind::treatment: return "treatment";
    case TermKind::interaction: return "interaction";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// B-splines

BSplineBasis::BSplineBasis(int size, int order, double lo, double hi)
    : size_(size), order_(order), lo_(lo), hi_(hi) {
  if (order < 2) throw ConfigError("B-spline order must be at least 2");
  if (size < order + 1) throw ConfigError("B-spline basis needs size >= order + 1");
  if (!(hi > lo)) throw ConfigError("B-spline interval must have hi > lo");
  const double h = (hi - lo) / (size - order + 1);
  knots_.resize(size + order);
  for (int i = 0; i < size + order; ++i) knots_[i] = lo + (i - (order - 1)) * h;
}

Eigen::RowVectorXd BSplineBasis::evaluate(double x) const {
  if (!(x >= lo_ && x <= hi_)) {
    std::ostringstream msg;
    msg << "B-spline evaluation at " << x << " outside [" << lo_ << ", " << hi_ << "]";
    throw DomainError(msg.str());
  }
  const int degree = order_ - 1;
  // knot span m with t_m <= x < t_{m+1}, m in [degree, size - 1]
  const double h = knots_[1] - knots_[0];
  int m = degree + static_cast<int>(std::floor((x - lo_) / h));
  m = std::clamp(m, degree, size_ - 1);
  while (m > degree && x < knots_[m]) --m;
  while (m < size_ - 1 && x >= knots_[m + 1]) ++m;

  std::vector<double> n(order_, 0.0), left(order_, 0.0), right(order_, 0.0);
  n[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - knots_[m + 1 - j];
    right[j] = knots_[m + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(size_);
  for (int r = 0; r <= degree; ++r) row[m - degree + r] = n[r];
  return row;
}

TermBasis build_bspline_basis(std::span<const double> x, int size, int order, double lo, double hi) {
  const BSplineBasis spline(size, order, lo, hi);
  TermBasis out;
  out.kind = TermKind::monotone;
  out.design.resize(static_cast<Eigen::Index>(x.size()), size);
  for (std::size_t i = 0; i < x.size(); ++i) {
    try {
      out.design.row(static_cast<Eigen::Index>(i)) = spline.evaluate(x[i]);
    } catch (const DomainError& e) {
      throw DomainError("row " + std::to_string(i) + ": " + e.what());
    }
  }
  out.penalty = Eigen::MatrixXd::Zero(size, size);
  out.knots = spline.knots();
  return out;
}

// ---------------------------------------------------------------------------
// Monotone reparametrization

Eigen::VectorXd MonotoneReparam::increments(const Eigen::VectorXd& working) const {
  Eigen::VectorXd g = working.array().exp();
  g[0] = working[0];
  return g;
}

Eigen::VectorXd MonotoneReparam::coefficients(const Eigen::VectorXd& working) const {
  return sigma * increments(working);
}

MonotoneReparam make_monotone_reparam(int size, int order, double lo, double hi) {
  MonotoneReparam r;
  r.order = order;
  r.lo = lo;
  r.hi = hi;
  r.sigma = Eigen::MatrixXd::Zero(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j <= i; ++j) r.sigma(i, j) = 1.0;
  r.difference = Eigen::MatrixXd::Zero(std::max(size - 2, 0), size);
  for (int i = 0; i + 2 < size; ++i) {
    r.difference(i, i + 1) = 1.0;
    r.difference(i, i + 2) = -1.0;
  }
  r.penalty = r.difference.transpose() * r.difference;
  return r;
}

MonotoneTerm::MonotoneTerm(std::span<const double> y, int size, int order)
    : spline_(size, order, 0.0, [&] {
        if (sorted_unique(y).size() < 2) {
          throw ConfigError("monotone time term needs at least two distinct follow-up times");
        }
        return 1.001 * *std::max_element(y.begin(), y.end());
      }()),
      reparam_(make_monotone_reparam(size, order, spline_.lo(), spline_.hi())) {
  if (*std::min_element(y.begin(), y.end()) < 0.0) {
    throw ConfigError("monotone time term needs non-negative follow-up times");
  }
}

Eigen::RowVectorXd MonotoneTerm::cumulative_row(double y) const {
  const Eigen::RowVectorXd b = spline_.evaluate(y);
  const int n = size();
  Eigen::RowVectorXd tail(n);
  // Columns left of the active span are exactly 1 by partition of unity.
  int first = 0;
  while (first < n && b[first] == 0.0) ++first;
  double acc = 0.0;
  for (int j = n - 1; j >= 0; --j) {
    acc += b[j];
    tail[j] = j <= first ? 1.0 : acc;
  }
  return tail;
}

Eigen::RowVectorXd MonotoneTerm::cumulative_row_dy(double y, double step) const {
  const double lo = spline_.lo(), hi = spline_.hi();
  if (y - step >= lo && y + step <= hi) {
    return (cumulative_row(y + step) - cumulative_row(y - step)) / (2.0 * step);
  }
  if (y - step < lo) return (cumulative_row(y + step) - cumulative_row(y)) / step;
  return (cumulative_row(y) - cumulative_row(y - step)) / step;
}

TermBasis MonotoneTerm::basis(std::span<const double> y) const {
  TermBasis out = build_bspline_basis(y, size(), spline_.order(), spline_.lo(), spline_.hi());
  out.penalty = reparam_.penalty;
  out.penalty_rank = std::max(size() - 2, 0);
  return out;
}

std::pair<TermBasis, MonotoneReparam> build_monotone_term(std::span<const double> y, int size) {
  if (size < 4) throw ConfigError("monotone time term needs at least 4 basis functions");
  const MonotoneTerm term(y, size);
  return {term.basis(y), term.reparam()};
}

// ---------------------------------------------------------------------------
// Thin-plate smooth

ThinPlateSmooth::ThinPlateSmooth(std::span<const double> x, int size) {
  if (size < 3) throw ConfigError("smooth term needs at least 3 basis functions");
  const std::vector<double> unique = sorted_unique(x);
  if (static_cast<int>(unique.size()) < size) {
    throw ConfigError("smooth term has " + std::to_string(unique.size()) +
                      " distinct values, fewer than its basis dimension " + std::to_string(size));
  }
  const double n = static_cast<double>(x.size());
  center_ = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - center_) * (v - center_);
  scale_ = std::sqrt(ss / n);

  // Knots: distinct values, thinned evenly by rank when there are many.
  const int k = std::min<int>(static_cast<int>(unique.size()), kMaxSmoothKnots);
  knots_.resize(k);
  for (int i = 0; i < k; ++i) {
    const std::size_t idx =
        k == 1 ? 0 : static_cast<std::size_t>(std::llround(static_cast<double>(i) * (unique.size() - 1) / (k - 1)));
    knots_[i] = (unique[idx] - center_) / scale_;
  }

  Eigen::MatrixXd e(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) e(i, j) = radial(knots_[i] - knots_[j]);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(e);
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(eig.eigenvalues()[a]) > std::abs(eig.eigenvalues()[b]);
  });
  Eigen::MatrixXd u(k, size);
  Eigen::VectorXd d(size);
  for (int j = 0; j < size; ++j) {
    u.col(j) = eig.eigenvectors().col(order[j]);
    d[j] = eig.eigenvalues()[order[j]];
  }

  // Absorb T' delta = 0 (T = [1, x]) into the truncated coefficients.
  Eigen::MatrixXd t(k, 2);
  for (int i = 0; i < k; ++i) {
    t(i, 0) = 1.0;
    t(i, 1) = knots_[i];
  }
  const Eigen::MatrixXd ut = u.transpose() * t;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(ut);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(size, size);
  const Eigen::MatrixXd z = q.rightCols(size - 2);

  const Eigen::MatrixXd p = z.transpose() * d.asDiagonal() * z;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> peig(0.5 * (p + p.transpose()));
  // Descending eigenvalues, so the stiffest direction comes first.
  const int w = size - 2;
  Eigen::MatrixXd v(w, w);
  Eigen::VectorXd lam(w);
  for (int j = 0; j < w; ++j) {
    v.col(j) = peig.eigenvectors().col(w - 1 - j);
    lam[j] = std::max(peig.eigenvalues()[w - 1 - j], 0.0);
  }
  wiggly_map_ = u * z * v;

  column_means_ = Eigen::RowVectorXd::Zero(size - 1);
  Eigen::MatrixXd r(static_cast<Eigen::Index>(x.size()), size - 1);
  for (std::size_t i = 0; i < x.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = raw(x[i]);
  column_means_ = r.colwise().mean();
  r.rowwise() -= column_means_;

  // Scale the penalty to the magnitude of the design (max row sum squared over max column sum).
  const double design_norm = r.cwiseAbs().rowwise().sum().maxCoeff();
  const double penalty_norm = lam.cwiseAbs().maxCoeff();
  const double factor = penalty_norm > 0.0 ? penalty_norm / (design_norm * design_norm) : 1.0;
  penalty_diag_ = lam / factor;
  penalty_scale_ = scale_ * scale_ * scale_ / factor;
}

Eigen::RowVectorXd ThinPlateSmooth::raw(double x) const {
  const double s = (x - center_) / scale_;
  const int k = static_cast<int>(knots_.size());
  Eigen::RowVectorXd e(k);
  for (int j = 0; j < k; ++j) e[j] = radial(s - knots_[j]);
  Eigen::RowVectorXd out(wiggly_map_.cols() + 1);
  out.head(wiggly_map_.cols()) = e * wiggly_map_;
  out[wiggly_map_.cols()] = s;
  return out;
}

Eigen::RowVectorXd ThinPlateSmooth::evaluate(double x) const { return raw(x) - column_means_; }

TermBasis ThinPlateSmooth::basis(std::span<const double> x) const {
  TermBasis out;
  out.kind = TermKind::smooth;
  const int cols = columns();
  out.design.resize(static_cast<Eigen::Index>(x.size()), cols);
  for (std::size_t i = 0; i < x.size(); ++i) out.design.row(static_cast<Eigen::Index>(i)) = evaluate(x[i]);
  out.penalty = Eigen::MatrixXd::Zero(cols, cols);
  out.penalty.topLeftCorner(cols - 1, cols - 1) = penalty_diag_.asDiagonal();
  out.penalty_rank = static_cast<int>((penalty_diag_.array() > 0.0).count());
  out.knots.reserve(knots_.size());
  for (double k : knots_) out.knots.push_back(center_ + scale_ * k);
  return out;
}

TermBasis build_smooth_term(std::span<const double> x, int size) { return ThinPlateSmooth(x, size).basis(x); }

// ---------------------------------------------------------------------------
// Ridge

TermBasis build_ridge_term(std::span<const double> levels) {
  const std::vector<double> unique = sorted_unique(levels);
  if (unique.size() < 2) throw ConfigError("ridge term variable has no variation");
  const int cols = static_cast<int>(unique.size()) - 1;
  TermBasis out;
  out.kind = TermKind::ridge;
  out.design = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(levels.size()), cols);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto it = std::lower_bound(unique.begin(), unique.end(), levels[i]);
    const int level = static_cast<int>(it - unique.begin());
    if (level > 0) out.design(static_cast<Eigen::Index>(i), level - 1) = 1.0;
  }
  out.penalty = Eigen::MatrixXd::Identity(cols, cols);
  out.penalty_rank = cols;
  for (int j = 1; j <= cols; ++j) {
    std::ostringstream label;
    label << unique[j];
    out.column_labels.push_back(label.str());
  }
  return out;
}

}  // namespace ctm
