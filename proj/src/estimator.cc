#include "gridsentinel/estimator.h"

#include <cmath>
#include <string>

#include "gridsentinel/errors.h"

namespace gridsentinel::estimation {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double residual_stat(const VectorXd& residual, const VectorXd& sigma) {
  if (residual.size() != sigma.size()) {
    throw ContractError("residual_stat: dimension mismatch");
  }
  return residual.cwiseQuotient(sigma).squaredNorm();
}

namespace {

void require_full_rank(const MatrixXd& weighted, const char* who) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(weighted);
  const auto rank = qr.rank();
  if (rank == weighted.cols()) return;
  std::string cols;
  const auto& perm = qr.colsPermutation().indices();
  for (auto k = rank; k < weighted.cols(); ++k) {
    if (!cols.empty()) cols += ", ";
    cols += std::to_string(perm[k]);
  }
  throw EstimationError(std::string(who) + ": measurement matrix is rank deficient (rank " +
                        std::to_string(rank) + " of " + std::to_string(weighted.cols()) +
                        "); deficient columns: " + cols);
}

}  // namespace

WlsSolver::WlsSolver(const MatrixXd& H, const VectorXd& sigma)
    : h_(H), sigma_(sigma), inv_sigma_(sigma.cwiseInverse()) {
  if (H.rows() != sigma.size()) throw ContractError("WlsSolver: sigma has wrong length");
  if ((sigma.array() <= 0.0).any()) throw ContractError("WlsSolver: sigma must be positive");
  const MatrixXd weighted = inv_sigma_.asDiagonal() * H;
  require_full_rank(weighted, "wls");
  qr_.compute(weighted);
}

VectorXd WlsSolver::solve(const VectorXd& z) const {
  if (z.size() != h_.rows()) throw ContractError("WlsSolver: z has wrong length");
  return qr_.solve(z.cwiseProduct(inv_sigma_));
}

EstimationResult WlsSolver::estimate(const VectorXd& z) const {
  EstimationResult out;
  out.x_hat = solve(z);
  out.residual = z - h_ * out.x_hat;
  out.iterations = 1;
  out.converged = true;
  out.chi2 = residual_stat(out.residual, sigma_);
  return out;
}

EstimationResult wls_linear(const MatrixXd& H, const VectorXd& z, const VectorXd& sigma) {
  return WlsSolver(H, sigma).estimate(z);
}

EstimationResult newton_se(const MeasurementFn& h, const JacobianFn& jacobian,
                           const VectorXd& z, const VectorXd& sigma, const VectorXd& x_init,
                           const NewtonOptions& options) {
  if (!(options.tol > 0.0)) throw ContractError("newton_se: tol must be positive");
  if (z.size() != sigma.size()) throw ContractError("newton_se: sigma has wrong length");
  const VectorXd inv_sigma = sigma.cwiseInverse();

  VectorXd x = x_init;
  VectorXd r = z - h(x);
  if (r.size() != z.size()) throw ContractError("newton_se: h returned wrong length");
  double obj = r.cwiseProduct(inv_sigma).squaredNorm();

  EstimationResult out;
  int it = 0;
  for (; it < options.max_iter; ++it) {
    const MatrixXd weighted = inv_sigma.asDiagonal() * jacobian(x);
    Eigen::ColPivHouseholderQR<MatrixXd> qr(weighted);
    if (qr.rank() < weighted.cols()) require_full_rank(weighted, "newton_se");
    const VectorXd dx = qr.solve(r.cwiseProduct(inv_sigma));
    if (dx.lpNorm<Eigen::Infinity>() < options.tol) {
      out.converged = true;
      break;
    }

    double scale = 1.0;
    VectorXd x_next = x + dx;
    VectorXd r_next = z - h(x_next);
    double obj_next = r_next.cwiseProduct(inv_sigma).squaredNorm();
    for (int k = 0; k < options.max_halvings && !(obj_next <= obj); ++k) {
      scale *= 0.5;
      x_next = x + scale * dx;
      r_next = z - h(x_next);
      obj_next = r_next.cwiseProduct(inv_sigma).squaredNorm();
    }
    if (!(obj_next <= obj)) {
      // No descent along the Gauss-Newton direction: x is as good as we get.
      out.converged = dx.lpNorm<Eigen::Infinity>() * scale < options.tol;
      break;
    }
    x = std::move(x_next);
    r = std::move(r_next);
    obj = obj_next;
  }
  out.x_hat = std::move(x);
  out.residual = std::move(r);
  out.iterations = it;
  out.chi2 = obj;
  return out;
}

}  // namespace gridsentinel::estimation
