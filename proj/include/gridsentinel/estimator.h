#pragma once

#include <functional>

#include <Eigen/Dense>

namespace gridsentinel::estimation {

struct EstimationResult {
  Eigen::VectorXd x_hat;
  Eigen::VectorXd residual;  // z - h(x_hat)
  int iterations = 0;
  bool converged = false;
  double chi2 = 0.0;         // r^T Sigma^{-1} r
};

/// r^T Sigma^{-1} r for a diagonal noise covariance given by std devs.
double residual_stat(const Eigen::VectorXd& residual, const Eigen::VectorXd& sigma);
inline double residual_stat(const EstimationResult& result) { return result.chi2; }

/// Weighted least squares for a fixed H, factorized once.
///
/// Construction throws EstimationError naming the deficient columns when H
/// does not have full column rank.
class WlsSolver {
 public:
  WlsSolver(const Eigen::MatrixXd& H, const Eigen::VectorXd& sigma);

  Eigen::VectorXd solve(const Eigen::VectorXd& z) const;
  EstimationResult estimate(const Eigen::VectorXd& z) const;

  const Eigen::MatrixXd& H() const { return h_; }
  const Eigen::VectorXd& sigma() const { return sigma_; }

 private:
  Eigen::MatrixXd h_;
  Eigen::VectorXd sigma_;
  Eigen::VectorXd inv_sigma_;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr_;
};

EstimationResult wls_linear(const Eigen::MatrixXd& H, const Eigen::VectorXd& z,
                            const Eigen::VectorXd& sigma);

using MeasurementFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

struct NewtonOptions {
  double tol = 1e-8;
  int max_iter = 50;
  int max_halvings = 30;
};

/// Gauss-Newton on the weighted objective with step halving. Stops when the
/// proposed step has inf-norm below tol (that step is not counted). A
/// singular normal matrix throws EstimationError; running out of iterations
/// returns the best iterate with converged = false.
EstimationResult newton_se(const MeasurementFn& h, const JacobianFn& jacobian,
                           const Eigen::VectorXd& z, const Eigen::VectorXd& sigma,
                           const Eigen::VectorXd& x_init, const NewtonOptions& options = {});

}  // namespace gridsentinel::estimation
