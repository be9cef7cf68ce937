#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gridsentinel/attack.h"
#include "gridsentinel/netmodel.h"

namespace gridsentinel::grid {

struct LoadOptions {
  int ticks_per_day = 288;
  double daily_amplitude = 0.15;   // relative to base demand
  double ar_coefficient = 0.9;
  double noise_sd = 0.02;          // AR(1) innovation sd, relative to base demand
  double power_factor = 0.95;      // lagging
  double scale = 1.0;              // multiplies every base demand
};

/// Per-bus demand in per-unit; row t - 1 holds tick t.
struct LoadProfile {
  Eigen::MatrixXd p;  // T x N
  Eigen::MatrixXd q;  // T x N

  int ticks() const { return static_cast<int>(p.rows()); }
};

/// Daily sinusoid plus AR(1) fluctuation around each bus's base demand,
/// clipped at zero. Deterministic per seed.
LoadProfile synth_loads(const net::NetworkCase& grid, int ticks, std::uint64_t seed,
                        const LoadOptions& options = {});

/// CSV with header `t,bus,p,q` (t from 1, p/q in per-unit). Ticks run to
/// the largest t present; missing (t, bus) pairs are zero demand.
LoadProfile parse_load_csv(std::string_view text, const net::NetworkCase& grid);
LoadProfile load_load_csv(const std::filesystem::path& path, const net::NetworkCase& grid);

/// Scheduled active power per generator (case order) and voltage setpoints.
struct DispatchPlan {
  Eigen::MatrixXd p;      // T x G [pu]
  Eigen::VectorXd v_set;  // G

  int ticks() const { return static_cast<int>(p.rows()); }
};

/// Every generator serves a share of total demand proportional to its
/// capacity; the reference bus additionally absorbs losses during power flow.
/// Throws DispatchError when capacity < peak demand * (1 + loss_margin).
DispatchPlan dispatch(const LoadProfile& loads, const net::NetworkCase& grid,
                      double loss_margin = 0.05);

/// Specified net injections (generation minus demand) and voltage setpoints
/// per bus. Only the quantities a bus type fixes are used.
struct BusSchedule {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
  Eigen::VectorXd vm;
};

/// Schedule of tick `t` (1-based). `generator_scale` multiplies the
/// dispatched active power of the generator at bus `scaled_bus`.
BusSchedule schedule_at(const net::NetworkCase& grid, const LoadProfile& loads,
                        const DispatchPlan& plan, int t, int scaled_bus = -1,
                        double generator_scale = 1.0);

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 50;
};

struct PowerFlowResult {
  net::GridState state;
  int iterations = 0;
  double mismatch = 0.0;
};

/// Newton-Raphson in polar form. Starts from `warm` when given, otherwise
/// from flat angles at the scheduled magnitudes. Throws PowerFlowError on
/// divergence.
PowerFlowResult solve_powerflow(const net::NetworkCase& grid, const BusSchedule& schedule,
                                const net::GridState* warm = nullptr,
                                const PowerFlowOptions& options = {});

/// Active/reactive mismatch of `state` against the schedule on the buses
/// where the schedule fixes it.
Eigen::VectorXd power_mismatch(const net::NetworkCase& grid, const BusSchedule& schedule,
                               const net::GridState& state);

struct StreamAttack {
  attack::AttackSpec spec;     // target bus id, onset, level or beta
  std::vector<int> mask;       // M_i
};

struct Stream {
  std::vector<Eigen::VectorXd> x;       // physical state per tick
  std::vector<Eigen::VectorXd> z;       // observed measurements per tick
  std::vector<int> pf_iterations;       // Newton steps of the normal power flow
};

/// Runs ticks 1..loads.ticks(). Noise is drawn identically with or without
/// an attack, so ticks before onset match the attack-free stream exactly.
Stream simulate_stream(const net::NetworkCase& grid, const net::MeasurementPlan& plan,
                       const LoadProfile& loads, const DispatchPlan& dispatch_plan,
                       const StreamAttack* attack, std::uint64_t seed);

}  // namespace gridsentinel::grid
