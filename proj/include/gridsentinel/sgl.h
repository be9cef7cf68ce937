#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace gridsentinel::sgl {

/// sign(a) * max(|a| - lambda, 0)
double soft_threshold(double a, double lambda);
Eigen::VectorXd soft_threshold(const Eigen::VectorXd& a, double lambda);

/// Sparse group lasso
///
///   ||y - sum_l X_l b_l||_2^2 + lambda1 ||b||_1 + lambda2 sum_l w_l ||b_l||_2
///
/// with the columns of `design` grouped contiguously by `group_sizes`;
/// w_l = sqrt(p_l) when `weight_by_group_size`, else 1.
struct SglProblem {
  Eigen::VectorXd response;
  Eigen::MatrixXd design;
  std::vector<int> group_sizes;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  bool weight_by_group_size = false;
  double tol = 1e-8;
  int max_sweeps = 10000;
};

struct SglSolution {
  Eigen::VectorXd beta;
  Eigen::VectorXd group_l1;
  Eigen::VectorXd group_l2;
  double objective = 0.0;
  int sweeps = 0;
  bool converged = false;
  double kkt = 0.0;
};

/// True iff b_g = 0 minimizes the block problem given the partial residual
/// (response minus every other group's fit), i.e.
/// ||S(2 X_g^T r_g, lambda1)||_2 <= lambda2 * weight.
bool group_zero_check(const Eigen::MatrixXd& block, const Eigen::VectorXd& partial_residual,
                      double lambda1, double lambda2, double weight = 1.0);

double sgl_objective(const SglProblem& problem, const Eigen::VectorXd& beta);

/// Largest violation of the subgradient optimality conditions; 0 iff beta
/// is optimal. Zero groups contribute their group-level violation.
double kkt_residual(const SglProblem& problem, const Eigen::VectorXd& beta);
inline double kkt_residual(const SglProblem& problem, const SglSolution& solution) {
  return kkt_residual(problem, solution.beta);
}

/// Called after every block update with the group index and the objective.
using BlockObserver = std::function<void(int group, double objective)>;

/// Cyclic block coordinate descent with the design factorized once, so many
/// responses / penalties can reuse it.
class SglSolver {
 public:
  SglSolver(Eigen::MatrixXd design, std::vector<int> group_sizes,
            bool weight_by_group_size = false);

  SglSolution solve(const Eigen::VectorXd& response, double lambda1, double lambda2,
                    const Eigen::VectorXd* warm_start = nullptr, double tol = 1e-8,
                    int max_sweeps = 10000, const BlockObserver& observer = {}) const;

  const Eigen::MatrixXd& design() const { return design_; }
  const std::vector<int>& group_sizes() const { return sizes_; }
  int num_groups() const { return static_cast<int>(sizes_.size()); }
  int group_offset(int g) const { return offsets_[g]; }

 private:
  void update_block(int g, const Eigen::VectorXd& grad_part, double lambda1, double lambda2,
                    double tol, Eigen::Ref<Eigen::VectorXd> beta_g) const;

  Eigen::MatrixXd design_;
  std::vector<int> sizes_;
  std::vector<int> offsets_;
  std::vector<double> weights_;
  std::vector<Eigen::MatrixXd> grams_;
  std::vector<double> lipschitz_;
};

SglSolution solve_sgl(const SglProblem& problem, const Eigen::VectorXd* warm_start = nullptr,
                      const BlockObserver& observer = {});

}  // namespace gridsentinel::sgl
