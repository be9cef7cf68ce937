#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace gridsentinel::net {

enum class BusType { kReference, kGenerator, kLoad };

struct Bus {
  int id = 0;
  BusType type = BusType::kLoad;
  int region = 1;
  double pd = 0.0;   // base active demand [MW]
  double vm = 1.0;   // initial voltage magnitude [pu]
  double va = 0.0;   // initial angle [deg], file convention
};

struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;  // total line charging
};

struct Generator {
  int bus = 0;
  double p_max = 0.0;  // [MW]
  double v_set = 1.0;  // [pu]
};

/// Validated, immutable bus/branch/generator topology.
///
/// State vectors use the layout [θ of every non-reference bus, |V| of every
/// bus], both in bus order, so n = 2N - 1.
class NetworkCase {
 public:
  /// Throws ValidationError if any topology invariant fails.
  NetworkCase(std::string name, double base_mva, std::vector<Bus> buses,
              std::vector<Branch> branches, std::vector<Generator> generators);

  const std::string& name() const { return name_; }
  double base_mva() const { return base_mva_; }
  int num_buses() const { return static_cast<int>(buses_.size()); }
  int num_regions() const { return num_regions_; }
  int state_dim() const { return 2 * num_buses() - 1; }

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<Generator>& generators() const { return generators_; }

  /// Position of the bus with the given id; throws ContractError if absent.
  int index_of(int bus_id) const;
  bool has_bus(int bus_id) const { return index_.count(bus_id) > 0; }
  int reference_index() const { return reference_; }

  /// State-vector column of bus `bus_index`'s angle, or -1 for the reference.
  int angle_index(int bus_index) const;
  int magnitude_index(int bus_index) const;
  /// S_i: the state indices owned by a bus (angle first when present).
  std::vector<int> state_indices(int bus_index) const;

  const std::vector<int>& incident_branches(int bus_index) const {
    return incident_[bus_index];
  }
  std::vector<int> neighbors(int bus_index) const;

  /// Ids of generator-typed buses (the reference bus is excluded).
  std::vector<int> generator_bus_ids() const;

  /// Dense bus admittance matrix.
  const Eigen::MatrixXcd& admittance() const { return ybus_; }

 private:
  void validate();

  std::string name_;
  double base_mva_;
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::vector<Generator> generators_;
  std::map<int, int> index_;
  std::vector<std::vector<int>> incident_;
  int reference_ = -1;
  int num_regions_ = 0;
  Eigen::MatrixXcd ybus_;
};

NetworkCase parse_case(std::string_view text);
std::string serialize_case(const NetworkCase& grid);
NetworkCase load_case(const std::filesystem::path& path);

/// Voltage magnitudes [pu] and angles [rad] per bus, in bus order.
struct GridState {
  Eigen::VectorXd vm;
  Eigen::VectorXd va;
};

GridState flat_state(const NetworkCase& grid);
Eigen::VectorXd to_vector(const NetworkCase& grid, const GridState& state);
/// Throws ContractError on a wrong dimension or non-positive magnitude.
GridState from_vector(const NetworkCase& grid, const Eigen::VectorXd& x);

enum class SensorKind { kFlowP, kFlowQ, kVoltage, kInjectionP, kInjectionQ };

std::string_view to_string(SensorKind kind);

/// `location` is a branch index for flow sensors (measured at the from-end)
/// and a bus index otherwise.
struct Sensor {
  SensorKind kind = SensorKind::kVoltage;
  int location = 0;
  double sigma = 0.01;
};

class MeasurementPlan {
 public:
  /// Validates sigma > 0, locations, m > n and observability at flat start.
  MeasurementPlan(const NetworkCase& grid, std::vector<Sensor> sensors);

  int size() const { return static_cast<int>(sensors_.size()); }
  const std::vector<Sensor>& sensors() const { return sensors_; }
  const Eigen::VectorXd& sigma() const { return sigma_; }

 private:
  std::vector<Sensor> sensors_;
  Eigen::VectorXd sigma_;
};

/// |V| at every bus, P/Q injection at every bus, P/Q flow at the from-end of
/// every branch.
MeasurementPlan default_plan(const NetworkCase& grid, double sigma_voltage = 0.01,
                             double sigma_power = 0.02);

struct PowerInjections {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};

PowerInjections bus_injections(const NetworkCase& grid, const GridState& state);

/// d[P_0..P_{N-1}, Q_0..Q_{N-1}] / dx, shape 2N x n.
Eigen::MatrixXd injection_jacobian(const NetworkCase& grid, const GridState& state);

Eigen::VectorXd eval_h(const NetworkCase& grid, const MeasurementPlan& plan,
                       const Eigen::VectorXd& x);
Eigen::MatrixXd eval_jacobian(const NetworkCase& grid, const MeasurementPlan& plan,
                              const Eigen::VectorXd& x);

enum class NeighborhoodScope {
  kLocal,   // sensors at the bus and flows on incident branches
  kOneHop,  // kLocal plus injections at adjacent buses
};

/// M_i for one bus: sorted sensor indices.
std::vector<int> neighborhood(const NetworkCase& grid, const MeasurementPlan& plan,
                              int bus_id, NeighborhoodScope scope);

/// M_i for every generator-typed bus, keyed by bus id.
std::map<int, std::vector<int>> neighborhood_sets(
    const NetworkCase& grid, const MeasurementPlan& plan,
    NeighborhoodScope scope = NeighborhoodScope::kOneHop);

}  // namespace gridsentinel::net
