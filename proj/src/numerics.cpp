#include "ctm/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "ctm/errors.hpp"

namespace ctm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Phi(-z) / phi(z) for z >= 8 via the Laplace continued fraction.
double upper_tail_ratio(double z) {
  double t = z;
  for (int k = 120; k >= 1; --k) t = z + k / t;
  return 1.0 / t;
}

// Gauss-Legendre rules on [-1, 1]; only the non-negative half is stored.
template <int N>
struct Rule {
  static const auto& nodes() { return boost::math::quadrature::gauss<double, N>::abscissa(); }
  static const auto& weights() { return boost::math::quadrature::gauss<double, N>::weights(); }
};

// Sum over the full symmetric rule of w_i * f(x_i).
template <int N, class F>
double legendre_sum(F&& f) {
  const auto& x = Rule<N>::nodes();
  const auto& w = Rule<N>::weights();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) {
      s += w[i] * f(0.0);
    } else {
      s += w[i] * (f(x[i]) + f(-x[i]));
    }
  }
  return s;
}

template <class F>
double legendre_by_rho(double abs_rho, F&& f) {
  if (abs_rho < 0.3) return legendre_sum<6>(f);
  if (abs_rho < 0.75) return legendre_sum<12>(f);
  return legendre_sum<20>(f);
}

// Upper orthant probability P(X > h, Y > k) (Genz's BVND).
double upper_orthant(double h, double k, double r) {
  const double abs_r = std::abs(r);
  double hk = h * k;
  double bvn = 0.0;
  if (abs_r < 0.925) {
    if (abs_r > 0.0) {
      const double hs = (h * h + k * k) / 2.0;
      const double asr = std::asin(r);
      bvn = legendre_by_rho(abs_r, [&](double x) {
        const double sn = std::sin(asr * (x + 1.0) / 2.0);
        return std::exp((sn * hk - hs) / (1.0 - sn * sn));
      });
      bvn *= asr / (2.0 * kTwoPi);
    }
    return bvn + norm_cdf(-h) * norm_cdf(-k);
  }

  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (abs_r < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 16.0;
    double asr = -(bs / as + hk) / 2.0;
    if (asr > -100.0) {
      bvn = a * std::exp(asr) *
            (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
    }
    if (hk > -100.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-hk / 2.0) * std::sqrt(kTwoPi) * norm_cdf(-b / a) * b *
             (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    bvn += legendre_sum<20>([&](double x) {
      const double xs = (a * (x + 1.0)) * (a * (x + 1.0));
      const double rs = std::sqrt(1.0 - xs);
      const double e = -(bs / xs + hk) / 2.0;
      if (e <= -100.0) return 0.0;
      return a * std::exp(e) *
             (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs - (1.0 + c * xs * (1.0 + d * xs)));
    });
    bvn = -bvn / kTwoPi;
  }
  if (r > 0.0) return bvn + norm_cdf(-std::max(h, k));
  return -bvn + std::max(0.0, norm_cdf(-h) - norm_cdf(-k));
}

}  // namespace

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double norm_log_cdf(double x) {
  if (x < -8.0) return -0.5 * x * x + std::log(kInvSqrt2Pi) + std::log(upper_tail_ratio(-x));
  if (x > 5.0) return std::log1p(-norm_cdf(-x));
  return std::log(norm_cdf(x));
}

double norm_mills(double x) {
  if (x < -8.0) return 1.0 / upper_tail_ratio(-x);
  return norm_pdf(x) / norm_cdf(x);
}

double norm_quantile(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0) {
    throw DomainError("norm_quantile: probability outside [0, 1]");
  }
  p = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double bvn_pdf(double a, double b, double rho) {
  const double r2 = 1.0 - rho * rho;
  const double q = (a * a - 2.0 * rho * a * b + b * b) / r2;
  return std::exp(-0.5 * q) / (kTwoPi * std::sqrt(r2));
}

double bvn_cdf(double a, double b, double rho) {
  if (std::isnan(a) || std::isnan(b) || std::isnan(rho) || std::abs(rho) > 1.0) {
    throw DomainError("bvn_cdf: invalid argument");
  }
  if (a == -INFINITY || b == -INFINITY) return 0.0;
  if (a == INFINITY) return norm_cdf(b);
  if (b == INFINITY) return norm_cdf(a);
  const double p = upper_orthant(-a, -b, rho);
  return std::clamp(p, 0.0, 1.0);
}

double bvn_cdf_partial_b(double a, double b, double rho) {
  if (std::isnan(a) || std::isnan(b) || std::isnan(rho) || std::abs(rho) > 1.0) {
    throw DomainError("bvn_cdf_partial_b: invalid argument");
  }
  if (std::isinf(b)) return 0.0;
  if (a == INFINITY) return norm_pdf(b);
  if (a == -INFINITY) return 0.0;
  if (rho == 1.0) return b < a ? norm_pdf(b) : 0.0;
  if (rho == -1.0) return -b < a ? norm_pdf(b) : 0.0;
  const double r = std::sqrt((1.0 - rho) * (1.0 + rho));
  return norm_pdf(b) * norm_cdf((a - rho * b) / r);
}

}  // namespace ctm
