#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <json.hpp>

#include "gridsentinel/bench.h"
#include "gridsentinel/config.h"
#include "gridsentinel/errors.h"

namespace fs = std::filesystem;
using Eigen::VectorXd;

namespace gridsentinel::cli {
namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out = "out";
  std::string stream;
  int replication = 0;
};

void write_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
  std::cout << "wrote " << path.string() << "\n";
}

std::string stream_csv(const std::vector<VectorXd>& z) {
  std::ostringstream os;
  os << std::setprecision(17) << 't';
  const Eigen::Index m = z.empty() ? 0 : z.front().size();
  for (Eigen::Index j = 0; j < m; ++j) os << ",z" << j;
  os << '\n';
  for (std::size_t t = 0; t < z.size(); ++t) {
    os << t + 1;
    for (Eigen::Index j = 0; j < m; ++j) os << ',' << z[t][j];
    os << '\n';
  }
  return os.str();
}

std::vector<VectorXd> read_stream_csv(const fs::path& path, int m) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<VectorXd> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream fields(line);
    std::string cell;
    std::getline(fields, cell, ',');
    VectorXd z(m);
    int j = 0;
    while (std::getline(fields, cell, ',')) {
      if (j >= m) throw ParseError(path.string() + ": too many columns", row, "z");
      try {
        z[j++] = std::stod(cell);
      } catch (const std::exception&) {
        throw ParseError(path.string() + ": bad number", row, "z" + std::to_string(j));
      }
    }
    if (j != m) throw ParseError(path.string() + ": too few columns", row, "z");
    out.push_back(std::move(z));
  }
  if (out.empty()) throw ParseError(path.string() + ": no measurement rows", 0, "");
  return out;
}

bench::RunConfig load(const Options& opt) {
  bench::Overrides overrides;
  overrides.seed = opt.seed;
  overrides.workers = opt.workers;
  return bench::load_config(opt.config, overrides);
}

std::optional<detect::CalibrationReport> prepare(bench::Harness& harness,
                                                 const bench::RunConfig& config) {
  if (config.frozen) {
    harness.set_detector_config(*config.frozen);
    return std::nullopt;
  }
  std::cout << "calibrating on " << harness.setup().calibration_ticks << " in-control ticks\n";
  return harness.calibrate();
}

int run_simulate(const Options& opt) {
  const bench::RunConfig config = load(opt);
  const bench::Scenario& scenario = config.scenarios.front();
  const bench::Harness harness(scenario);
  const bench::SimulatedStream sim = harness.simulate(scenario, opt.replication);
  nlohmann::ordered_json truth;
  truth["scenario"] = scenario.name;
  truth["replication"] = opt.replication;
  truth["target"] = sim.target;
  truth["onset"] = sim.onset;
  truth["beta"] = std::vector<double>(sim.beta.data(), sim.beta.data() + sim.beta.size());
  write_file(fs::path(opt.out) / "stream.csv", stream_csv(sim.z));
  write_file(fs::path(opt.out) / "states.csv", stream_csv(sim.x));
  write_file(fs::path(opt.out) / "truth.json", truth.dump(2) + "\n");
  return 0;
}

int run_calibrate(const Options& opt) {
  const bench::RunConfig config = load(opt);
  bench::Harness harness(config.scenarios.front());
  const detect::CalibrationReport report = harness.calibrate();
  std::cout << "lambda1 " << report.config.lambda1 << "  lambda2 " << report.config.lambda2
            << "  threshold " << report.config.threshold << "\n";
  write_file(fs::path(opt.out) / "calibration.json", bench::calibration_json(report));
  return 0;
}

int run_detect(const Options& opt) {
  const bench::RunConfig config = load(opt);
  const bench::Scenario& scenario = config.scenarios.front();
  bench::Harness harness(scenario);
  const auto calibration = prepare(harness, config);

  std::vector<VectorXd> z;
  int onset = 0;
  int target = -1;
  if (opt.stream.empty()) {
    bench::SimulatedStream sim = harness.simulate(scenario, opt.replication);
    z = std::move(sim.z);
    onset = sim.onset;
    target = sim.target;
  } else {
    z = read_stream_csv(opt.stream, harness.measurement_count());
  }
  const int start = onset > 0 ? onset : 1;
  const detect::DetectionOutcome first = harness.detect(z, start, true);
  const std::vector<double> chi2 = harness.chi2_series(z);

  bench::TickLog log;
  log.name = "detect";
  log.onset = onset;
  log.ticks = harness.detect(z, 1, false).ticks;

  nlohmann::ordered_json summary;
  summary["ticks"] = z.size();
  summary["onset"] = onset;
  summary["target"] = target;
  summary["alarm_tick"] = first.alarm_tick ? nlohmann::ordered_json(*first.alarm_tick) : nullptr;
  summary["location"] = first.location;
  summary["run_length"] = first.run_length;
  summary["censored"] = first.censored;
  summary["tie"] = first.tie;
  summary["threshold"] = harness.detector_config().threshold;
  summary["chi2_threshold"] = harness.chi2_threshold();
  summary["chi2"] = chi2;
  if (calibration) summary["lambda2"] = calibration->config.lambda2;

  std::ostringstream stats;
  detect::write_tick_csv(stats, log.ticks);
  write_file(fs::path(opt.out) / "stats_detect.csv", stats.str());
  write_file(fs::path(opt.out) / "plot_detect.svg", bench::plot_svg(log));
  write_file(fs::path(opt.out) / "detection.json", summary.dump(2) + "\n");
  if (first.alarm_tick) {
    std::cout << "alarm at t=" << *first.alarm_tick << ", located at " << first.location << "\n";
  } else {
    std::cout << "no alarm in ticks " << start << ".." << z.size() << "\n";
  }
  return 0;
}

int run_bench(const Options& opt) {
  const bench::RunConfig config = load(opt);
  bench::Harness harness(config.scenarios.front());
  bench::Report report;
  report.name = config.scenarios.front().name;
  report.calibration = prepare(harness, config);
  report.notes.push_back(
      "precision, recall and F are macro averages over all " +
      std::to_string(harness.candidate_ids().size()) + " candidates");
  report.notes.push_back("chi2 columns: chi-square detector with hypothesis-test localization");
  for (const auto& scenario : config.scenarios) {
    const bench::RunMetrics m = harness.run(scenario);
    std::cout << std::left << std::setw(24) << m.name << " ARL sgl " << m.sgl.mean << " (se "
              << m.sgl.se << ")  chi2 " << m.chi2.mean;
    if (m.sgl_localization) std::cout << "  accuracy " << m.sgl_localization->accuracy;
    std::cout << "\n";
    report.runs.push_back(m);
    for (auto& log : harness.logs(scenario)) report.logs.push_back(std::move(log));
  }
  for (const auto& path : bench::emit_report(report, opt.out)) {
    std::cout << "wrote " << path.string() << "\n";
  }
  return 0;
}

int main_impl(int argc, char** argv) {
  CLI::App app{"Covert-attack detection and localization with the sparse group lasso.\n\n" +
               bench::config_reference()};
  app.require_subcommand(1);
  Options opt;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON configuration file")->required();
    sub->add_option("--seed", opt.seed, "override the master seed");
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    sub->add_option("--workers", opt.workers, "worker threads")->check(CLI::PositiveNumber);
  };
  CLI::App* simulate = app.add_subcommand("simulate", "write one simulated measurement stream");
  CLI::App* calibrate = app.add_subcommand("calibrate", "calibrate penalties and threshold");
  CLI::App* detect = app.add_subcommand("detect", "run the detector on one stream");
  CLI::App* bench_cmd = app.add_subcommand("bench", "run replications and write the report");
  for (CLI::App* sub : {simulate, calibrate, detect, bench_cmd}) common(sub);
  for (CLI::App* sub : {simulate, detect}) {
    sub->add_option("--replication", opt.replication, "replication index")->capture_default_str();
  }
  detect->add_option("--stream", opt.stream, "stream CSV from `simulate` instead of simulating");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*simulate) return run_simulate(opt);
    if (*calibrate) return run_calibrate(opt);
    if (*detect) return run_detect(opt);
    return run_bench(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace
}  // namespace gridsentinel::cli

int main(int argc, char** argv) { return gridsentinel::cli::main_impl(argc, argv); }
