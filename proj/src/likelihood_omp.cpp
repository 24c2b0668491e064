#include <vector>

#include "ctm/likelihood.hpp"

namespace ctm::kernel {

namespace {

struct Partial {
  bool valid = true;
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

}  // namespace

std::optional<Evaluation> parallel(const DesignBundle& bundle, const Eigen::VectorXd& delta, Derivatives order) {
  const auto& L = bundle.layout;
  const int p1 = L.outcome_size, p2 = L.selection_size, psi = L.psi(), ir = L.rho_index();
  const int off = L.monotone_offset, J = L.monotone_size;
  const Eigen::VectorXd lin = L.linear(delta);
  const Eigen::VectorXd E1 = L.E(delta).head(p1);
  const Eigen::VectorXd Ebar1 = L.E_bar(delta).head(p1);
  const Eigen::VectorXd beta1 = lin.head(p1);
  const Eigen::VectorXd inc = beta1.segment(off, J);
  const Eigen::VectorXd beta2 = delta.segment(p1, p2);
  const double rho_star = delta[ir];

  const auto n = static_cast<Eigen::Index>(bundle.rows());
  const Eigen::Index chunks = (n + kChunkRows - 1) / kChunkRows;
  std::vector<Partial> partial(static_cast<std::size_t>(chunks));

#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    Partial& P = partial[static_cast<std::size_t>(c)];
    const Eigen::Index start = c * kChunkRows;
    const Eigen::Index len = std::min<Eigen::Index>(kChunkRows, n - start);
    const auto Xc = bundle.X_tilde.middleRows(start, len);
    const auto Xdc = bundle.X_tilde_prime.block(start, off, len, J);
    const auto Zc = bundle.Z.middleRows(start, len);
    const Eigen::VectorXd e1 = Xc * beta1;
    const Eigen::VectorXd g = Xdc * inc;
    const Eigen::VectorXd e2 = Zc * beta2;

    Eigen::MatrixXd w(len, 4);   // first derivatives
    Eigen::MatrixXd hw(len, 7);  // h00 h11 h22 h33 h01 h02 h12 (h03 is identically 0)
    for (Eigen::Index r = 0; r < len; ++r) {
      const auto i = static_cast<std::size_t>(start + r);
      const auto rs = row_contribution(row_case(bundle.treatment[i], bundle.status[i]), e1[r], e2[r], rho_star, g[r],
                                       order);
      if (!rs) {
        P.valid = false;
        break;
      }
      P.value += rs->value;
      for (int k = 0; k < 4; ++k) w(r, k) = rs->grad[k];
      const auto& h = rs->hess;
      hw(r, 0) = h[0][0];
      hw(r, 1) = h[1][1];
      hw(r, 2) = h[2][2];
      hw(r, 3) = h[3][3];
      hw(r, 4) = h[0][1];
      hw(r, 5) = h[0][2];
      hw(r, 6) = h[1][2];
    }
    if (!P.valid || order == Derivatives::none) continue;

    const Eigen::MatrixXd Xe = Xc * E1.asDiagonal();
    const Eigen::MatrixXd Xde = Xdc * E1.segment(off, J).asDiagonal();
    P.grad = Eigen::VectorXd::Zero(psi);
    P.grad.head(p1) = Xe.transpose() * w.col(0);
    P.grad.segment(off, J) += Xde.transpose() * w.col(3);
    P.grad.segment(p1, p2) = Zc.transpose() * w.col(1);
    P.grad[ir] = w.col(2).sum();
    if (order != Derivatives::hessian) continue;

    Eigen::MatrixXd& H = P.hess;
    H = Eigen::MatrixXd::Zero(psi, psi);
    H.topLeftCorner(p1, p1) = Xe.transpose() * hw.col(0).asDiagonal() * Xe;
    H.block(off, off, J, J) += Xde.transpose() * hw.col(3).asDiagonal() * Xde;
    Eigen::VectorXd curvature = Xc.transpose() * w.col(0);
    curvature.segment(off, J) += Xdc.transpose() * w.col(3);
    H.topLeftCorner(p1, p1).diagonal() += Ebar1.cwiseProduct(curvature);
    H.block(0, p1, p1, p2) = Xe.transpose() * hw.col(4).asDiagonal() * Zc;
    H.block(0, ir, p1, 1) = Xe.transpose() * hw.col(5);
    H.block(p1, p1, p2, p2) = Zc.transpose() * hw.col(1).asDiagonal() * Zc;
    H.block(p1, ir, p2, 1) = Zc.transpose() * hw.col(6);
    H(ir, ir) = hw.col(2).sum();
  }

  Evaluation out;
  out.gradient = Eigen::VectorXd::Zero(psi);
  if (order == Derivatives::hessian) out.hessian = Eigen::MatrixXd::Zero(psi, psi);
  for (const auto& P : partial) {
    if (!P.valid) return std::nullopt;
    out.loglik += P.value;
    if (order != Derivatives::none) out.gradient += P.grad;
    if (order == Derivatives::hessian) out.hessian += P.hess;
  }
  if (order == Derivatives::hessian) {
    auto& H = out.hessian;
    H.block(p1, 0, p2, p1) = H.block(0, p1, p1, p2).transpose();
    H.row(ir).head(ir) = H.col(ir).head(ir).transpose();
  }
  return out;
}

}  // namespace ctm::kernel
