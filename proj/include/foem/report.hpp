#pragma once

#include <string>
#include <vector>

#include "foem/types.hpp"
#include "json.hpp"

namespace foem::report {

struct LayerReport {
  std::string layer;
  std::string engine;  // engine label, e.g. "gptq" or "foem@minus"
  int bits = 0;
  int group_size = 0;
  double beta = 0.0;
  int block_size = 0;
  double proxy_loss = 0.0;
  double rtn_relative = 1.0;  // proxy_loss / proxy_loss(RTN)
  double wall_time_s = 0.0;
  double drift_max = 0.0;   // max |W - W_orig| over the final latent weights
  double drift_mean = 0.0;
};

nlohmann::json to_json(const LayerReport& r);
LayerReport report_from_json(const nlohmann::json& j);

// trace(D H D^T) with D = W_deq - W_orig; equals ||D X||_F^2 when H = X X^T.
double proxy_loss(const DenseMatrix& w_deq, const DenseMatrix& w_orig, const DenseMatrix& H);

struct ComparisonArtifact {
  std::string csv;
  nlohmann::json summary;
};

inline constexpr const char* kCsvSchema = "# foem-compare-csv v1";

// One CSV row per (layer, engine), sorted by layer then engine label, plus a
// JSON summary with per-engine means, win counts and the full distribution
// of loss ratios against `baseline` (defaults to "gptq" when present, else
// the first engine in sorted order). Mismatched layer sets are flagged in the
// summary rather than rejected.
ComparisonArtifact compare_table(std::vector<LayerReport> reports, std::string baseline = "");

}  // namespace foem::report
