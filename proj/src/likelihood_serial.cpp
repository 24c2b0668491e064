#include "ctm/likelihood.hpp"

namespace ctm::kernel {

std::optional<Evaluation> serial(const DesignBundle& bundle, const Eigen::VectorXd& delta, Derivatives order) {
  const auto& L = bundle.layout;
  const int p1 = L.outcome_size, p2 = L.selection_size, psi = L.psi(), ir = L.rho_index();
  const Eigen::VectorXd lin = L.linear(delta);
  const Eigen::VectorXd E = L.E(delta);
  const Eigen::VectorXd Ebar = L.E_bar(delta);
  const Eigen::VectorXd beta1 = lin.head(p1);
  const Eigen::VectorXd beta2 = delta.segment(p1, p2);
  const double rho_star = delta[ir];

  Evaluation out;
  out.gradient = Eigen::VectorXd::Zero(psi);
  if (order == Derivatives::hessian) out.hessian = Eigen::MatrixXd::Zero(psi, psi);

  for (std::size_t i = 0; i < bundle.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const Eigen::RowVectorXd xt = bundle.X_tilde.row(k);
    const Eigen::RowVectorXd xp = bundle.X_tilde_prime.row(k);
    const Eigen::RowVectorXd z = bundle.Z.row(k);
    const double e1 = xt.dot(beta1), g = xp.dot(beta1), e2 = z.dot(beta2);
    const auto rs = row_contribution(row_case(bundle.treatment[i], bundle.status[i]), e1, e2, rho_star, g, order);
    if (!rs) return std::nullopt;
    out.loglik += rs->value;
    if (order == Derivatives::none) continue;

    const Eigen::VectorXd x = xt.transpose().cwiseProduct(E.head(p1));
    const Eigen::VectorXd xd = xp.transpose().cwiseProduct(E.head(p1));
    out.gradient.head(p1) += rs->grad[0] * x + rs->grad[3] * xd;
    out.gradient.segment(p1, p2) += rs->grad[1] * z.transpose();
    out.gradient[ir] += rs->grad[2];
    if (order != Derivatives::hessian) continue;

    const auto& h = rs->hess;
    auto& H = out.hessian;
    for (int a = 0; a < p1; ++a) {
      for (int b = 0; b < p1; ++b) {
        H(a, b) += h[0][0] * x[a] * x[b] + h[3][3] * xd[a] * xd[b] + h[0][3] * (x[a] * xd[b] + xd[a] * x[b]);
      }
      H(a, a) += Ebar[a] * (rs->grad[0] * xt[a] + rs->grad[3] * xp[a]);
      for (int b = 0; b < p2; ++b) H(a, p1 + b) += h[0][1] * x[a] * z[b];
      H(a, ir) += h[0][2] * x[a];
    }
    for (int a = 0; a < p2; ++a) {
      for (int b = 0; b < p2; ++b) H(p1 + a, p1 + b) += h[1][1] * z[a] * z[b];
      H(p1 + a, ir) += h[1][2] * z[a];
    }
    H(ir, ir) += h[2][2];
  }

  if (order == Derivatives::hessian) {
    auto& H = out.hessian;
    H.block(p1, 0, p2, p1) = H.block(0, p1, p1, p2).transpose();
    H.row(ir).head(ir) = H.col(ir).head(ir).transpose();
  }
  return out;
}

}  // namespace ctm::kernel
