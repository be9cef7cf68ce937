#include "gridsentinel/attack.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "gridsentinel/errors.h"

namespace gridsentinel::attack {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void validate(const AttackSpec& spec, const std::vector<int>& candidates, int state_size) {
  if (std::find(candidates.begin(), candidates.end(), spec.target) == candidates.end()) {
    throw AttackSpecError("attack target " + std::to_string(spec.target) +
                          " is not a generator bus");
  }
  if (spec.onset < 1) throw AttackSpecError("attack onset must be >= 1");
  switch (spec.magnitude) {
    case Magnitude::kBeta:
      if (spec.beta.size() != state_size) {
        throw AttackSpecError("beta has " + std::to_string(spec.beta.size()) +
                              " entries, target owns " + std::to_string(state_size));
      }
      if (!spec.beta.allFinite()) throw AttackSpecError("beta must be finite");
      break;
    case Magnitude::kSnr:
      if (!(spec.snr >= 0.0) || !std::isfinite(spec.snr)) {
        throw AttackSpecError("snr must be a non-negative number");
      }
      break;
    case Magnitude::kLevel:
      if (spec.level < 1 || spec.level > 5) throw AttackSpecError("level must lie in 1..5");
      break;
  }
}

namespace {

void check_indices(const VectorXd& x_true, const VectorXd& z_normal,
                   const std::vector<int>& state_indices, const VectorXd& beta,
                   const std::vector<int>& mask) {
  if (static_cast<Eigen::Index>(state_indices.size()) != beta.size()) {
    throw ContractError("apply_covert_attack: beta does not match the state index set");
  }
  for (int k : state_indices) {
    if (k < 0 || k >= x_true.size()) throw ContractError("apply_covert_attack: bad state index");
  }
  for (int j : mask) {
    if (j < 0 || j >= z_normal.size()) throw ContractError("apply_covert_attack: bad sensor index");
  }
}

VectorXd shifted(const VectorXd& x_true, const std::vector<int>& state_indices,
                 const VectorXd& beta) {
  VectorXd x = x_true;
  for (std::size_t k = 0; k < state_indices.size(); ++k) x[state_indices[k]] += beta[k];
  return x;
}

}  // namespace

AttackedReading apply_covert_attack(const VectorXd& x_true, const VectorXd& z_normal,
                                    const std::vector<int>& state_indices, const VectorXd& beta,
                                    const std::vector<int>& mask, const MeasurementFn& h) {
  check_indices(x_true, z_normal, state_indices, beta, mask);
  AttackedReading out;
  out.x = shifted(x_true, state_indices, beta);
  if (beta.isZero(0.0)) {
    out.z = z_normal;
    return out;
  }
  const VectorXd noise = z_normal - h(x_true);
  out.z = h(out.x) + noise;
  for (int j : mask) out.z[j] = z_normal[j];
  return out;
}

AttackedReading apply_covert_attack(const VectorXd& x_true, const VectorXd& z_normal,
                                    const std::vector<int>& state_indices, const VectorXd& beta,
                                    const std::vector<int>& mask, const MatrixXd& H) {
  check_indices(x_true, z_normal, state_indices, beta, mask);
  if (H.rows() != z_normal.size() || H.cols() != x_true.size()) {
    throw ContractError("apply_covert_attack: H has wrong shape");
  }
  AttackedReading out;
  out.x = shifted(x_true, state_indices, beta);
  VectorXd delta = VectorXd::Zero(z_normal.size());
  for (std::size_t k = 0; k < state_indices.size(); ++k) {
    delta += H.col(state_indices[k]) * beta[k];
  }
  for (int j : mask) delta[j] = 0.0;
  out.z = z_normal + delta;
  return out;
}

double snr(const VectorXd& beta, const MatrixXd& sigma) {
  if (sigma.rows() != beta.size() || sigma.cols() != beta.size()) {
    throw ContractError("snr: covariance has wrong shape");
  }
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("snr: state covariance is not positive definite");
  }
  return std::sqrt(std::max(0.0, beta.dot(llt.solve(beta))));
}

VectorXd beta_from_snr(const VectorXd& direction, double target_snr, const MatrixXd& sigma) {
  if (direction.size() == 0 || direction.isZero(0.0)) {
    throw ContractError("beta_from_snr: direction must be nonzero");
  }
  if (!(target_snr >= 0.0)) throw ContractError("beta_from_snr: target must be >= 0");
  return direction * (target_snr / snr(direction, sigma));
}

}  // namespace gridsentinel::attack
