#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridsentinel/bench.h"
#include "gridsentinel/detector.h"

namespace gridsentinel::bench {

/// A parsed run configuration. A list of SNRs or levels expands into one
/// scenario per value; an SNR of 0 is the attack-free scenario.
struct RunConfig {
  std::vector<Scenario> scenarios;
  // Penalties, threshold and normalization, when the document fixes them
  // (inline or through `detector.calibration_file`). Otherwise the harness
  // calibrates.
  std::optional<detect::DetectorConfig> frozen;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

/// Parses a JSON run configuration. Relative paths resolve against
/// `base_dir`. Throws ConfigError on unknown keys, wrong types or values out
/// of range.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {},
                       const Overrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// JSON with the calibrated detector settings, as read back through
/// `detector.calibration_file`.
std::string calibration_json(const detect::CalibrationReport& report);
detect::DetectorConfig parse_calibration(std::string_view text, detect::DetectorConfig base = {});

/// The documented configuration keys with their defaults, for --help.
std::string config_reference();

}  // namespace gridsentinel::bench
