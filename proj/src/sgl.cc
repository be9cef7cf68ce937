#include "gridsentinel/sgl.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gridsentinel/errors.h"

namespace gridsentinel::sgl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double soft_threshold(double a, double lambda) {
  if (a > lambda) return a - lambda;
  if (a < -lambda) return a + lambda;
  return 0.0;
}

VectorXd soft_threshold(const VectorXd& a, double lambda) {
  return a.unaryExpr([lambda](double v) { return soft_threshold(v, lambda); });
}

bool group_zero_check(const MatrixXd& block, const VectorXd& partial_residual, double lambda1,
                      double lambda2, double weight) {
  if (block.rows() != partial_residual.size()) {
    throw ContractError("group_zero_check: dimension mismatch");
  }
  const VectorXd corr = 2.0 * (block.transpose() * partial_residual);
  return soft_threshold(corr, lambda1).norm() <= lambda2 * weight;
}

namespace {

void validate(const MatrixXd& design, const std::vector<int>& sizes) {
  if (sizes.empty()) throw ContractError("sgl: at least one group is required");
  long total = 0;
  for (int s : sizes) {
    if (s <= 0) throw ContractError("sgl: group sizes must be positive");
    total += s;
  }
  if (total != design.cols()) {
    throw ContractError("sgl: group sizes sum to " + std::to_string(total) + " but design has " +
                        std::to_string(design.cols()) + " columns");
  }
}

std::vector<double> group_weights(const std::vector<int>& sizes, bool by_size) {
  std::vector<double> w;
  for (int s : sizes) w.push_back(by_size ? std::sqrt(static_cast<double>(s)) : 1.0);
  return w;
}

double penalty(const VectorXd& beta, const std::vector<int>& sizes, const std::vector<double>& w,
               double lambda1, double lambda2) {
  double pen = lambda1 * beta.lpNorm<1>();
  int off = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    pen += lambda2 * w[g] * beta.segment(off, sizes[g]).norm();
    off += sizes[g];
  }
  return pen;
}

// argmin_t  a t^2 - 2 q t + lambda1 |t| + mu sqrt(t^2 + c2),  a > 0, c2 > 0.
double scalar_update(double a, double q, double lambda1, double mu, double c2) {
  const double target = 2.0 * std::abs(q) - lambda1;
  if (target <= 0.0) return 0.0;
  auto phi = [&](double t) { return 2.0 * a * t + mu * t / std::sqrt(t * t + c2); };
  auto dphi = [&](double t) {
    const double s2 = t * t + c2;
    return 2.0 * a + mu * c2 / (s2 * std::sqrt(s2));
  };
  double lo = 0.0;
  double hi = target / (2.0 * a);
  double t = hi;
  for (int it = 0; it < 200; ++it) {
    const double f = phi(t) - target;
    if (f > 0.0) hi = t; else lo = t;
    if (std::abs(f) <= 1e-15 * target || hi - lo <= 1e-16 * hi) break;
    double next = t - f / dphi(t);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    t = next;
  }
  return std::copysign(t, q);
}

}  // namespace

double sgl_objective(const SglProblem& p, const VectorXd& beta) {
  validate(p.design, p.group_sizes);
  if (beta.size() != p.design.cols()) throw ContractError("sgl_objective: wrong beta length");
  const auto w = group_weights(p.group_sizes, p.weight_by_group_size);
  return (p.response - p.design * beta).squaredNorm() +
         penalty(beta, p.group_sizes, w, p.lambda1, p.lambda2);
}

double kkt_residual(const SglProblem& p, const VectorXd& beta) {
  validate(p.design, p.group_sizes);
  if (beta.size() != p.design.cols()) throw ContractError("kkt_residual: wrong beta length");
  const auto w = group_weights(p.group_sizes, p.weight_by_group_size);
  const VectorXd grad = -2.0 * (p.design.transpose() * (p.response - p.design * beta));
  double worst = 0.0;
  int off = 0;
  for (std::size_t g = 0; g < p.group_sizes.size(); ++g) {
    const int size = p.group_sizes[g];
    const VectorXd b = beta.segment(off, size);
    const VectorXd gg = grad.segment(off, size);
    const double nb = b.norm();
    if (nb == 0.0) {
      worst = std::max(worst, soft_threshold(gg, p.lambda1).norm() - p.lambda2 * w[g]);
    } else {
      for (int k = 0; k < size; ++k) {
        const double group_term = p.lambda2 * w[g] * b[k] / nb;
        double v;
        if (b[k] != 0.0) {
          v = std::abs(gg[k] + group_term + p.lambda1 * (b[k] > 0.0 ? 1.0 : -1.0));
        } else {
          v = std::max(0.0, std::abs(gg[k]) - p.lambda1);
        }
        worst = std::max(worst, v);
      }
    }
    off += size;
  }
  return std::max(worst, 0.0);
}

SglSolver::SglSolver(MatrixXd design, std::vector<int> group_sizes, bool weight_by_group_size)
    : design_(std::move(design)), sizes_(std::move(group_sizes)) {
  validate(design_, sizes_);
  weights_ = group_weights(sizes_, weight_by_group_size);
  int off = 0;
  for (int s : sizes_) {
    offsets_.push_back(off);
    const auto block = design_.middleCols(off, s);
    MatrixXd gram = block.transpose() * block;
    const double top = Eigen::SelfAdjointEigenSolver<MatrixXd>(gram, Eigen::EigenvaluesOnly)
                           .eigenvalues()
                           .maxCoeff();
    grams_.push_back(std::move(gram));
    lipschitz_.push_back(2.0 * top);
    off += s;
  }
}

// Minimizes the block problem in place. `corr` is X_g^T (y - X_{-g} b_{-g}).
void SglSolver::update_block(int g, const VectorXd& corr, double lambda1, double lambda2,
                             double tol, Eigen::Ref<VectorXd> b) const {
  const double mu = lambda2 * weights_[g];
  if (soft_threshold(VectorXd(2.0 * corr), lambda1).norm() <= mu) {
    b.setZero();
    return;
  }
  const MatrixXd& gram = grams_[g];
  const double lip = lipschitz_[g];
  if (lip <= 0.0) {
    b.setZero();
    return;
  }
  auto prox_step = [&](const VectorXd& from) {
    const double step = 1.0 / lip;
    const VectorXd grad = 2.0 * (gram * from - corr);
    VectorXd u = soft_threshold(VectorXd(from - step * grad), lambda1 * step);
    const double nu = u.norm();
    if (nu <= mu * step) return VectorXd(VectorXd::Zero(from.size()));
    return VectorXd(u * (1.0 - mu * step / nu));
  };

  if (b.squaredNorm() == 0.0) b = prox_step(b);
  const VectorXd start = b;

  const int size = static_cast<int>(b.size());
  const double inner_tol = 1e-3 * tol;
  for (int sweep = 0; sweep < 1000; ++sweep) {
    double delta = 0.0;
    for (int k = 0; k < size; ++k) {
      const double a = gram(k, k);
      double next = 0.0;
      if (a > 0.0) {
        const double q = corr[k] - gram.row(k).dot(b) + a * b[k];
        const double c2 = std::max(0.0, b.squaredNorm() - b[k] * b[k]);
        if (c2 > 0.0) {
          next = scalar_update(a, q, lambda1, mu, c2);
        } else {
          next = soft_threshold(2.0 * q, lambda1 + mu) / (2.0 * a);
        }
      }
      delta = std::max(delta, std::abs(next - b[k]));
      b[k] = next;
    }
    if (delta < inner_tol) break;
  }

  if (b.squaredNorm() == 0.0) {
    // Coordinate steps can stall at the non-smooth origin; finish with
    // proximal gradient, which cannot.
    VectorXd x = start;
    for (int it = 0; it < 100000; ++it) {
      VectorXd next = prox_step(x);
      const double change = (next - x).lpNorm<Eigen::Infinity>();
      x = std::move(next);
      if (change < inner_tol) break;
    }
    b = x;
  }
}

SglSolution SglSolver::solve(const VectorXd& response, double lambda1, double lambda2,
                             const VectorXd* warm_start, double tol, int max_sweeps,
                             const BlockObserver& observer) const {
  if (response.size() != design_.rows()) throw ContractError("sgl: response length mismatch");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw ContractError("sgl: penalties must be non-negative");
  }
  if (!(tol > 0.0) || max_sweeps < 1) throw ContractError("sgl: invalid stopping rule");

  SglSolution out;
  out.beta = VectorXd::Zero(design_.cols());
  if (warm_start != nullptr) {
    if (warm_start->size() != design_.cols()) {
      throw ContractError("sgl: warm start has wrong length");
    }
    out.beta = *warm_start;
  }
  VectorXd resid = response - design_ * out.beta;

  auto objective = [&] {
    return resid.squaredNorm() + penalty(out.beta, sizes_, weights_, lambda1, lambda2);
  };

  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double delta = 0.0;
    for (int g = 0; g < num_groups(); ++g) {
      const int off = offsets_[g];
      const int size = sizes_[g];
      const auto block = design_.middleCols(off, size);
      const VectorXd old = out.beta.segment(off, size);
      const VectorXd corr = block.transpose() * resid + grams_[g] * old;
      update_block(g, corr, lambda1, lambda2, tol, out.beta.segment(off, size));
      const VectorXd change = out.beta.segment(off, size) - old;
      const double dmax = change.lpNorm<Eigen::Infinity>();
      if (dmax > 0.0) resid -= block * change;
      delta = std::max(delta, dmax);
      if (observer) observer(g, objective());
    }
    out.sweeps = sweep;
    if (delta < tol) {
      out.converged = true;
      break;
    }
  }

  out.group_l1.resize(num_groups());
  out.group_l2.resize(num_groups());
  for (int g = 0; g < num_groups(); ++g) {
    const auto seg = out.beta.segment(offsets_[g], sizes_[g]);
    out.group_l1[g] = seg.lpNorm<1>();
    out.group_l2[g] = seg.norm();
  }
  out.objective = objective();
  return out;
}

SglSolution solve_sgl(const SglProblem& p, const VectorXd* warm_start,
                      const BlockObserver& observer) {
  SglSolver solver(p.design, p.group_sizes, p.weight_by_group_size);
  SglSolution out =
      solver.solve(p.response, p.lambda1, p.lambda2, warm_start, p.tol, p.max_sweeps, observer);
  out.kkt = kkt_residual(p, out.beta);
  return out;
}

}  // namespace gridsentinel::sgl
