#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "foem/engines.hpp"
#include "foem/linalg.hpp"
#include "foem/report.hpp"
#include "json.hpp"

namespace foem::cli {

enum ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kConfigError = 2,
  kNumericalFailure = 3,
  kVerificationFailure = 4,
};

// Maps an in-flight exception to the process exit code.
int exit_code_for(const std::exception& e);

inline constexpr const char* kOutputDirEnv = "FOEM_OUTPUT_DIR";

struct SyntheticOptions {
  Index n_tokens = 512;
  double rho = 0.9;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::filesystem::path weights;                   // tensors named "<layer>.weight", (d_out x d_in)
  std::vector<std::filesystem::path> activations;  // tensors named "<layer>.input[.<shard>]", (d_in x tokens)
  std::optional<SyntheticOptions> synthetic;
  std::filesystem::path hessians;    // directory of Hessian files; defaults to output_dir
  std::filesystem::path output_dir;  // defaults to $FOEM_OUTPUT_DIR, then "foem_out"
  std::vector<std::string> layer_filters;  // ECMAScript regexes, full match; empty selects every layer
  engines::EngineConfig engine;
  std::vector<std::string> engines;  // compare: engine labels such as "gptq", "foem@plus"
  std::string baseline;              // compare: ratio baseline label
  int jobs = 1;

  // At most one calibration source; `require` demands exactly one.
  void validate_sources(bool require) const;
  std::filesystem::path hessian_dir() const { return hessians.empty() ? output_dir : hessians; }
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig default_run_config();  // applies the output-directory environment default

std::filesystem::path hessian_path(const std::filesystem::path& dir, const std::string& layer);
std::filesystem::path quantized_path(const std::filesystem::path& dir, const std::string& layer);
std::filesystem::path report_path(const std::filesystem::path& dir, const std::string& layer);

void save_hessian(const linalg::HessianState& h, const std::string& layer, double damping_ratio,
                  const std::filesystem::path& path);
linalg::HessianState load_hessian(const std::filesystem::path& path);

// Writes one Hessian file per selected layer; returns the layer names.
std::vector<std::string> cmd_calibrate(const RunConfig& config);

// Quantizes every selected layer; writes quantized files and reports.
std::vector<report::LayerReport> cmd_quantize(const RunConfig& config);

// Runs every engine label in config.engines against the same Hessians.
report::ComparisonArtifact cmd_compare(const RunConfig& config);

struct VerifyOptions {
  double tolerance_scale = 1.0;
  std::map<std::string, double> tolerance_overrides;
  engines::FirstOrderSign sign = engines::FirstOrderSign::minus;
  bool inject_sign_flip = false;  // mutation test: flips the first-order sign inside the optimality check
  std::uint64_t seed = 1;
};

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool lower_is_better = true;  // pass iff measured <= tol (or measured > tol when false)
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> cmd_verify(const VerifyOptions& options);
std::vector<std::string> verify_check_names();

// Full command-line entry point.
int run_main(int argc, char** argv);

}  // namespace foem::cli
