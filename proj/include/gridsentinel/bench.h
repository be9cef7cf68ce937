#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridsentinel/detector.h"
#include "gridsentinel/netmodel.h"
#include "gridsentinel/simgrid.h"
#include "gridsentinel/simlinear.h"

namespace gridsentinel::bench {

enum class Testbed { kLinear, kGrid14 };

std::string to_string(Testbed testbed);

/// What the attacker does in every replication of a scenario.
struct AttackPlan {
  enum class Kind { kNone, kSnr, kLevel, kBeta };
  Kind kind = Kind::kNone;
  double snr = 0.0;
  int level = 0;
  Eigen::VectorXd beta;
  std::optional<int> target;  // drawn uniformly from the candidates when absent
};

std::string describe(const AttackPlan& attack);

struct LinearSetup {
  linear::LinearSystemOptions system;
  std::uint64_t system_seed = 1;
};

struct GridSetup {
  std::filesystem::path case_path;  // empty: the bundled IEEE 14-bus case
  double sigma_voltage = 0.01;
  double sigma_power = 0.02;
  net::NeighborhoodScope scope = net::NeighborhoodScope::kLocal;
  grid::LoadOptions loads;
};

struct Scenario {
  std::string name = "scenario";
  Testbed testbed = Testbed::kLinear;
  AttackPlan attack;
  int replications = 200;
  std::uint64_t seed = 1;
  int ticks = 2000;
  int onset = 100;
  int workers = 1;
  LinearSetup linear;
  GridSetup grid;
  detect::DetectorConfig detector;
  detect::PenaltyRule penalty;
  int calibration_ticks = 50000;
  double chi2_alpha = 0.005;
  int log_replications = 0;  // replications whose full tick series is kept

  Scenario();
};

/// Throws ConfigError when a field is out of range.
void validate(const Scenario& scenario);

/// Outcome of one replication. Ticks are 1-based; -1 marks "none".
struct ReplicationRecord {
  int index = 0;
  int target = -1;
  int run_length = 0;
  bool censored = false;
  int alarm_tick = -1;
  int location = -1;
  bool tie = false;
  int tied_ticks = 0;
  int ht_location = -1;        // hypothesis test at the SGL alarm tick
  int chi2_run_length = 0;
  bool chi2_censored = false;
  int chi2_alarm_tick = -1;
  int ht_chi2_location = -1;   // hypothesis test at the chi-square alarm tick
  bool failed = false;
  std::string error;
};

struct RunLengthSummary {
  int count = 0;          // every run, censored ones at their censored length
  double mean = 0.0;
  double sd = 0.0;        // sample standard deviation
  double se = 0.0;        // sd / sqrt(count)
  int censored = 0;
  int uncensored = 0;
  std::optional<double> mean_uncensored;
  std::optional<double> sd_uncensored;
};

/// Throws MetricsError on empty input or mismatched sizes.
RunLengthSummary summarize_run_lengths(const std::vector<int>& lengths,
                                       const std::vector<bool>& censored);

struct ClassMetrics {
  int id = 0;
  int support = 0;  // records whose true class is `id`
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f;
};

struct Confusion {
  int total = 0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> classes;
  std::optional<double> macro_precision;
  std::optional<double> macro_recall;
  std::optional<double> macro_f;
};

/// (true, predicted) pairs; a prediction of -1 counts as wrong for every
/// class. Metrics with a zero denominator are left empty and skipped by the
/// macro averages. Throws MetricsError on empty input.
Confusion compute_confusion(const std::vector<std::pair<int, int>>& records,
                            const std::vector<int>& classes);

struct RunMetrics {
  std::string name;
  Testbed testbed = Testbed::kLinear;
  std::string attack;
  AttackPlan::Kind kind = AttackPlan::Kind::kNone;
  double magnitude = 0.0;  // SNR or level; 0 when there is no attack
  int replications = 0;
  int failures = 0;
  int onset = 0;
  double threshold = 0.0;
  RunLengthSummary sgl;
  RunLengthSummary chi2;
  std::optional<Confusion> sgl_localization;
  std::optional<Confusion> ht_localization;      // at chi-square alarm ticks
  std::optional<Confusion> ht_sgl_localization;  // at SGL alarm ticks
  std::vector<ReplicationRecord> records;
};

/// Full tick series of one replication, for plots.
struct TickLog {
  std::string name;
  int onset = 0;  // 0 when there is no attack
  std::vector<detect::TickRecord> ticks;
};

/// One simulated stream together with its ground truth.
struct SimulatedStream {
  std::vector<Eigen::VectorXd> z;
  std::vector<Eigen::VectorXd> x;
  int target = -1;
  int onset = 0;
  Eigen::VectorXd beta;
};

/// A built testbed with its detector. The detector configuration is shared
/// by every scenario run through the harness.
class Harness {
 public:
  /// Builds the testbed from the setup fields of `setup`; no calibration.
  explicit Harness(const Scenario& setup);
  ~Harness();
  Harness(const Harness&) = delete;
  Harness& operator=(const Harness&) = delete;

  /// In-control calibration on `setup.calibration_ticks` ticks drawn from a
  /// seed derived from `setup.seed`.
  detect::CalibrationReport calibrate();

  const detect::DetectorConfig& detector_config() const;
  void set_detector_config(const detect::DetectorConfig& config);

  std::vector<int> candidate_ids() const;
  const std::vector<detect::Candidate>& candidates() const;
  int measurement_count() const;
  int state_count() const;
  double chi2_threshold() const;
  const Scenario& setup() const;

  /// Stream of replication `index`; deterministic per (scenario seed, attack,
  /// index).
  SimulatedStream simulate(const Scenario& scenario, int index) const;

  /// Detection on a given stream, monitored from `start` to the end.
  detect::DetectionOutcome detect(const std::vector<Eigen::VectorXd>& z, int start,
                                  bool stop_at_alarm) const;

  /// Chi-square statistic of every tick.
  std::vector<double> chi2_series(const std::vector<Eigen::VectorXd>& z) const;

  ReplicationRecord replicate(const Scenario& scenario, int index) const;

  /// Runs every replication on `scenario.workers` threads. Failed
  /// replications are excluded and counted; more than 5% failures throws
  /// HarnessError.
  RunMetrics run(const Scenario& scenario) const;

  /// Series of the first `scenario.log_replications` replications, monitored
  /// over the whole stream without stopping at alarms.
  std::vector<TickLog> logs(const Scenario& scenario) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Aggregates a set of replication records.
RunMetrics aggregate(const Scenario& scenario, std::vector<ReplicationRecord> records,
                     const std::vector<int>& classes, double threshold);

struct Report {
  std::string name = "report";
  std::optional<detect::CalibrationReport> calibration;
  std::vector<RunMetrics> runs;
  std::vector<TickLog> logs;
  std::vector<std::string> notes;
};

/// Writes metrics.json, table.csv, stats_<log>.csv and plot_<log>.svg into
/// `out_dir` and returns the written paths. Nothing is left behind on
/// failure; throws MetricsError on an empty report and IoError naming the
/// path on I/O failure.
std::vector<std::filesystem::path> emit_report(const Report& report,
                                               const std::filesystem::path& out_dir);

std::string metrics_json(const Report& report);
std::string table_csv(const Report& report);
std::string plot_svg(const TickLog& log);

/// Reads back the aggregates written by metrics_json.
std::vector<RunMetrics> parse_metrics_json(const std::string& text);

}  // namespace gridsentinel::bench
