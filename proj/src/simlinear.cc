#include "gridsentinel/simlinear.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gridsentinel/errors.h"

namespace gridsentinel::linear {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_orthogonal(int n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd g(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ();
  // Fix column signs so the distribution is Haar.
  const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

MatrixXd random_sparse_measurement(int m, int n, double density, Rng& rng) {
  const long cells = static_cast<long>(m) * n;
  const long target =
      std::clamp<long>(static_cast<long>(std::ceil(density * static_cast<double>(cells))), n, cells);
  std::uniform_int_distribution<int> row_dist(0, m - 1);
  std::uniform_real_distribution<double> value_dist(0.0, 1.0);
  auto draw_value = [&] {
    double v = 0.0;
    while (v == 0.0) v = value_dist(rng);
    return v;
  };

  MatrixXd h = MatrixXd::Zero(m, n);
  std::vector<bool> used(cells, false);
  for (int k = 0; k < n; ++k) {
    const int row = row_dist(rng);
    used[static_cast<long>(k) * m + row] = true;
  }
  std::vector<long> free_cells;
  for (long c = 0; c < cells; ++c) {
    if (!used[c]) free_cells.push_back(c);
  }
  std::shuffle(free_cells.begin(), free_cells.end(), rng);
  const long extra = target - n;
  for (long i = 0; i < extra && i < static_cast<long>(free_cells.size()); ++i) {
    used[free_cells[i]] = true;
  }
  for (long c = 0; c < cells; ++c) {
    if (used[c]) h(static_cast<int>(c % m), static_cast<int>(c / m)) = draw_value();
  }
  return h;
}

MatrixXd psd_sqrt(const MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  const VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

LinearSystem gen_random_system(const LinearSystemOptions& opt, std::uint64_t seed) {
  if (opt.n < 2 || opt.m <= opt.n || !(opt.density > 0.0) || opt.density > 1.0) {
    throw ContractError("gen_random_system requires n >= 2, m > n, 0 < density <= 1");
  }
  if (opt.groups < 1 || opt.groups > opt.n) {
    throw ContractError("group count must lie in [1, n]");
  }
  Rng rng(seed);
  LinearSystem sys;

  std::uniform_real_distribution<double> eig(opt.eig_min, opt.eig_max);
  const MatrixXd v = random_orthogonal(opt.n, rng);
  VectorXd d(opt.n);
  for (int i = 0; i < opt.n; ++i) d[i] = eig(rng);
  sys.A = v * d.asDiagonal() * v.transpose();
  sys.A = 0.5 * (sys.A + sys.A.transpose()).eval();

  bool full_rank = false;
  for (int attempt = 0; attempt < opt.max_rank_retries && !full_rank; ++attempt) {
    sys.H = random_sparse_measurement(opt.m, opt.n, opt.density, rng);
    full_rank = Eigen::ColPivHouseholderQR<MatrixXd>(sys.H).rank() == opt.n;
  }
  if (!full_rank) {
    throw GenerationError("no full-column-rank H found after " +
                          std::to_string(opt.max_rank_retries) + " draws");
  }

  sys.G = MatrixXd::Identity(opt.n, opt.n);
  sys.K = lqr_gain(sys.A, sys.G, MatrixXd::Identity(opt.n, opt.n),
                   MatrixXd::Identity(opt.n, opt.n));
  sys.process_cov = opt.process_noise_var * MatrixXd::Identity(opt.n, opt.n);
  sys.sensor_sd = VectorXd::Constant(opt.m, opt.measurement_noise_sd);

  const int base = opt.n / opt.groups;
  const int rem = opt.n % opt.groups;
  int next = 0;
  for (int g = 0; g < opt.groups; ++g) {
    const int size = base + (g < rem ? 1 : 0);
    std::vector<int> idx(size);
    std::iota(idx.begin(), idx.end(), next);
    next += size;
    sys.groups.push_back(std::move(idx));
  }
  return sys;
}

LinearSystem gen_random_system(int n, int m, double density, std::uint64_t seed) {
  LinearSystemOptions opt;
  opt.n = n;
  opt.m = m;
  opt.density = density;
  opt.groups = std::min(opt.groups, n);
  return gen_random_system(opt, seed);
}

LqrResult lqr(const MatrixXd& A, const MatrixXd& G, const MatrixXd& Q, const MatrixXd& R,
              double tol, int max_iter) {
  const auto n = A.rows();
  if (A.cols() != n || G.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != G.cols() || R.cols() != G.cols()) {
    throw ContractError("lqr: inconsistent matrix dimensions");
  }
  if (Eigen::LLT<MatrixXd>(R).info() != Eigen::Success) {
    throw ContractError("lqr: R must be positive definite");
  }
  MatrixXd p = Q;
  for (int it = 1; it <= max_iter; ++it) {
    const MatrixXd s = R + G.transpose() * p * G;
    const MatrixXd gpa = G.transpose() * p * A;
    MatrixXd next = Q + A.transpose() * p * A - gpa.transpose() * s.ldlt().solve(gpa);
    next = 0.5 * (next + next.transpose()).eval();
    const double change = (next - p).cwiseAbs().rowwise().sum().maxCoeff();
    p = std::move(next);
    if (!std::isfinite(change)) break;
    if (change < tol) {
      const MatrixXd k = (R + G.transpose() * p * G).ldlt().solve(G.transpose() * p * A);
      return {k, p, it};
    }
  }
  throw NumericalError("Riccati iteration did not converge in " + std::to_string(max_iter) +
                       " steps");
}

MatrixXd lqr_gain(const MatrixXd& A, const MatrixXd& G, const MatrixXd& Q, const MatrixXd& R) {
  return lqr(A, G, Q, R).K;
}

VectorXd step(const LinearSystem& sys, const VectorXd& x, const VectorXd& x_hat, Rng& rng) {
  if (x.size() != sys.n() || x_hat.size() != sys.n()) {
    throw ContractError("step: state dimension mismatch");
  }
  VectorXd next = sys.A * x - sys.G * (sys.K * x_hat);
  if (sys.process_cov.cwiseAbs().maxCoeff() > 0.0) {
    const VectorXd e = standard_normal(rng, sys.n());
    if (sys.process_cov.isDiagonal()) {
      next += sys.process_cov.diagonal().cwiseMax(0.0).cwiseSqrt().cwiseProduct(e);
    } else {
      next += psd_sqrt(sys.process_cov) * e;
    }
  }
  return next;
}

VectorXd measure(const LinearSystem& sys, const VectorXd& x, Rng& rng) {
  if (x.size() != sys.n()) throw ContractError("measure: state dimension mismatch");
  return sys.H * x + sys.sensor_sd.cwiseProduct(standard_normal(rng, sys.m()));
}

std::vector<std::vector<int>> connectivity(const MatrixXd& H,
                                           const std::vector<std::vector<int>>& groups,
                                           double threshold) {
  std::vector<std::vector<int>> out;
  for (const auto& group : groups) {
    std::vector<int> members;
    for (int j = 0; j < H.rows(); ++j) {
      double peak = 0.0;
      for (int k : group) peak = std::max(peak, std::abs(H(j, k)));
      if (peak > threshold) members.push_back(j);
    }
    out.push_back(std::move(members));
  }
  return out;
}

MatrixXd discrete_lyapunov(const MatrixXd& F, const MatrixXd& W, double tol, int max_iter) {
  // Smith doubling: X = sum_k F^k W F^k^T.
  MatrixXd x = W;
  MatrixXd fk = F;
  for (int it = 0; it < max_iter; ++it) {
    const MatrixXd add = fk * x * fk.transpose();
    x += add;
    fk = (fk * fk).eval();
    if (add.cwiseAbs().maxCoeff() <= tol * std::max(1.0, x.cwiseAbs().maxCoeff())) {
      return 0.5 * (x + x.transpose());
    }
  }
  throw NumericalError("discrete Lyapunov iteration did not converge");
}

MatrixXd stationary_state_cov(const LinearSystem& sys) {
  const VectorXd w = sys.sensor_sd.array().square().inverse();
  const MatrixXd info = sys.H.transpose() * w.asDiagonal() * sys.H;
  const MatrixXd est_cov = info.ldlt().solve(MatrixXd::Identity(sys.n(), sys.n()));
  const MatrixXd gk = sys.G * sys.K;
  const MatrixXd drive = sys.process_cov + gk * est_cov * gk.transpose();
  return discrete_lyapunov(sys.A - gk, drive);
}

double spectral_radius(const MatrixXd& M) {
  return Eigen::EigenSolver<MatrixXd>(M, false).eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace gridsentinel::linear
