#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "gridsentinel/random.h"

namespace gridsentinel::linear {

struct LinearSystemOptions {
  int n = 20;
  int m = 30;
  double density = 0.2;
  int groups = 4;                    // K equal-size state groups
  double eig_min = 0.2;              // spectrum of A
  double eig_max = 0.95;
  double process_noise_var = 1e-4;   // isotropic covariance of e(t)
  double measurement_noise_sd = 0.01;
  int max_rank_retries = 100;
};

/// x(t+1) = A x(t) + G u(t) + e(t),  z(t) = H x(t) + v(t),  u = -K x̂.
struct LinearSystem {
  Eigen::MatrixXd A;
  Eigen::MatrixXd G;
  Eigen::MatrixXd H;
  Eigen::MatrixXd process_cov;
  Eigen::VectorXd sensor_sd;       // diagonal measurement-noise std devs
  Eigen::MatrixXd K;               // LQR gain, p x n
  std::vector<std::vector<int>> groups;  // S_i, state indices per group

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(H.rows()); }
};

/// Random stable testbed. Deterministic per seed; throws GenerationError if
/// no full-column-rank H is found within the retry budget.
LinearSystem gen_random_system(const LinearSystemOptions& options, std::uint64_t seed);
LinearSystem gen_random_system(int n, int m, double density, std::uint64_t seed);

struct LqrResult {
  Eigen::MatrixXd K;
  Eigen::MatrixXd P;
  int iterations = 0;
};

/// Fixed-point iteration of the discrete algebraic Riccati equation until
/// ||P_{t+1} - P_t||_inf < tol. Throws NumericalError after max_iter.
LqrResult lqr(const Eigen::MatrixXd& A, const Eigen::MatrixXd& G, const Eigen::MatrixXd& Q,
              const Eigen::MatrixXd& R, double tol = 1e-10, int max_iter = 10000);

Eigen::MatrixXd lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& G,
                         const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

/// One closed-loop transition driven by the state estimate.
Eigen::VectorXd step(const LinearSystem& sys, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& x_hat, Rng& rng);

Eigen::VectorXd measure(const LinearSystem& sys, const Eigen::VectorXd& x, Rng& rng);

/// M_i = { j : max_{k in S_i} |H(j,k)| > threshold }.
std::vector<std::vector<int>> connectivity(const Eigen::MatrixXd& H,
                                           const std::vector<std::vector<int>>& groups,
                                           double threshold = 0.5);

/// Solves X = F X F^T + W by fixed-point iteration (F must be Schur stable).
Eigen::MatrixXd discrete_lyapunov(const Eigen::MatrixXd& F, const Eigen::MatrixXd& W,
                                  double tol = 1e-14, int max_iter = 100000);

/// Stationary in-control covariance of x under certainty-equivalence control
/// with the WLS estimate x̂ = x + (H^T W H)^{-1} H^T W v.
Eigen::MatrixXd stationary_state_cov(const LinearSystem& sys);

double spectral_radius(const Eigen::MatrixXd& M);

}  // namespace gridsentinel::linear
