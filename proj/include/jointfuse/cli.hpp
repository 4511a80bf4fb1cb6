#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace jointfuse::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kDataError = 3,
  kNotConverged = 4,
  kSamplerFailure = 5,
};

inline constexpr const char* kToolVersion = "0.1.0";

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> chains;
  std::optional<int> iterations;
  std::optional<int> burnin;
  std::optional<int> thin;
  std::optional<double> rhat_threshold;
};

/// Writes long.csv, surv.csv, truth.json and manifest.json into `out_dir`.
int cmd_simulate(const std::string& config_path, const std::string& out_dir, const Overrides& overrides,
                 std::ostream& out, std::ostream& err);

/// Fits the configured model to `data_dir` and writes draws, summaries, plot data and a manifest.
int cmd_fit(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
            const Overrides& overrides, std::ostream& out, std::ostream& err);

/// Recomputes summaries and plot data from stored draws. `draws_dir` may be a fit output
/// directory or its draws/ subdirectory; results go to `out_dir` (defaults to the fit directory).
int cmd_diagnose(const std::string& draws_dir, const std::optional<std::string>& out_dir,
                 const std::optional<std::string>& config_path, const Overrides& overrides, std::ostream& out,
                 std::ostream& err);

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_hash(const std::string& path);

}  // namespace jointfuse::cli
