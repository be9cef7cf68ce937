#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace gridsentinel::attack {

/// How the size of the state shift is given.
enum class Magnitude { kBeta, kSnr, kLevel };

/// A covert attack on a single generator bus (or state group on the linear
/// testbed), active for every tick t >= onset.
struct AttackSpec {
  int target = 0;
  int onset = 1;
  Magnitude magnitude = Magnitude::kBeta;
  Eigen::VectorXd beta;   // shift over S_i when magnitude == kBeta
  double snr = 0.0;       // when magnitude == kSnr
  int level = 0;          // 1..5 when magnitude == kLevel
};

/// Throws AttackSpecError unless `spec.target` is one of `candidates` and the
/// magnitude fields are consistent (|beta| = state_size, snr >= 0, level 1..5).
void validate(const AttackSpec& spec, const std::vector<int>& candidates, int state_size);

inline bool active(const AttackSpec& spec, int tick) { return tick >= spec.onset; }

struct AttackedReading {
  Eigen::VectorXd z;   // what the operator observes
  Eigen::VectorXd x;   // physical state after the shift
};

using MeasurementFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Shifts x_true by beta on `state_indices`, replays the real noise on the
/// shifted readings, then overwrites the sensors in `mask` with z_normal.
AttackedReading apply_covert_attack(const Eigen::VectorXd& x_true,
                                    const Eigen::VectorXd& z_normal,
                                    const std::vector<int>& state_indices,
                                    const Eigen::VectorXd& beta,
                                    const std::vector<int>& mask, const MeasurementFn& h);

/// Linear model: z^a = z_normal + B_i beta, with B_i = H[:, S_i] masked.
AttackedReading apply_covert_attack(const Eigen::VectorXd& x_true,
                                    const Eigen::VectorXd& z_normal,
                                    const std::vector<int>& state_indices,
                                    const Eigen::VectorXd& beta,
                                    const std::vector<int>& mask, const Eigen::MatrixXd& H);

/// sqrt(beta^T Sigma^{-1} beta). Throws NumericalError if Sigma is not
/// positive definite.
double snr(const Eigen::VectorXd& beta, const Eigen::MatrixXd& sigma);

/// The shift along `direction` whose SNR equals `target_snr`.
Eigen::VectorXd beta_from_snr(const Eigen::VectorXd& direction, double target_snr,
                              const Eigen::MatrixXd& sigma);

}  // namespace gridsentinel::attack
