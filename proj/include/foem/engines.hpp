#pragma once

// Column-wise error-compensated quantization engines.
//
//   rtn        independent rounding
//   obs_oracle exact inverse-Hessian route: OBC downdate of H^{-1} after
//              every column plus the closed-form quantization update
//   gptq       the same updates driven by the upper inverse-Cholesky factor
//              with blocked lazy updates
//   foem       gptq plus the first-order correction c * (W - W_orig) * M,
//              M = T_{s,s}^T T_{s,s} recovered from the factor for the
//              active slice s
//   foem_plus  foem plus the extra cross-column term W_{:,q} H_{q,q+1:} M

#include <optional>
#include <string>
#include <string_view>

#include "foem/linalg.hpp"
#include "foem/quantizer.hpp"
#include "foem/report.hpp"
#include "foem/types.hpp"
#include "json.hpp"

namespace foem::engines {

enum class EngineKind { rtn, obs_oracle, gptq, foem, foem_plus };

// Sign of the first-order term. `minus` descends the modelled loss and is the
// default; `plus` reproduces the sign printed in the blocked procedure.
enum class FirstOrderSign { minus, plus };

// Which weights the per-group scales are fitted on when a group's first
// column is reached.
enum class ScaleSource { latent, original };

// Scale of the Hessian the first-order term is measured against.
// `mean_diagonal` divides H by its mean diagonal, so beta is dimensionless
// and every engine is invariant to a positive rescaling of H.
// `sample_mean` uses 2 H / n_samples (the usual GPTQ accumulation);
// `raw_sum` uses H as accumulated.
enum class HessianNorm { mean_diagonal, sample_mean, raw_sum };

std::string_view to_string(EngineKind k);
std::string_view to_string(FirstOrderSign s);
std::string_view to_string(ScaleSource s);
std::string_view to_string(HessianNorm n);
EngineKind parse_engine_kind(std::string_view s);
FirstOrderSign parse_first_order_sign(std::string_view s);
ScaleSource parse_scale_source(std::string_view s);
HessianNorm parse_hessian_norm(std::string_view s);

struct EngineConfig {
  EngineKind engine = EngineKind::foem;
  int bits = 4;
  int group_size = 128;
  bool symmetric = true;
  int block_size = 128;
  double beta = 3e-4;
  double damping_ratio = 0.01;
  FirstOrderSign first_order_sign = FirstOrderSign::minus;
  ScaleSource scale_source = ScaleSource::latent;
  HessianNorm hessian_norm = HessianNorm::mean_diagonal;
  Backend backend = Backend::parallel;

  void validate() const;  // throws ConfigError
  quant::QuantGrid grid() const;
  bool uses_first_order() const { return engine == EngineKind::foem || engine == EngineKind::foem_plus; }
  // "gptq", "foem@minus", "foem_plus@plus", ...
  std::string label() const;
};

// Backend is an execution detail and is not serialized.
nlohmann::json to_json(const EngineConfig& c);
// Keys absent from `j` keep their value from `base`. Unknown keys are rejected.
EngineConfig config_from_json(const nlohmann::json& j, EngineConfig base = {});
// Parses "foem", "foem@plus", "gptq", ... on top of `base`.
EngineConfig config_from_label(std::string_view label, EngineConfig base = {});

// Latent weights W, mutated during calibration, and the frozen originals.
class LayerBundle {
 public:
  explicit LayerBundle(DenseMatrix weights) : latent_(weights), original_(std::move(weights)) {}

  DenseMatrix& latent() { return latent_; }
  const DenseMatrix& latent() const { return latent_; }
  const DenseMatrix& original() const { return original_; }
  Index d_out() const { return original_.rows(); }
  Index d_in() const { return original_.cols(); }
  void reset() { latent_ = original_; }

 private:
  DenseMatrix latent_;
  DenseMatrix original_;
};

struct ColumnStepResult {
  Eigen::VectorXi q_col;
  Vector deq_col;
  // Change applied to latent columns [delta_first_col, block end); empty
  // unless recording was requested.
  DenseMatrix delta_W;
  Index delta_first_col = 0;
};

// Closed-form OBS pruning step for one row: -(w_q / Hinv_qq) Hinv_{q,:}.
RowVector obs_prune_step(const RowVector& w_row, const DenseMatrix& Hinv, Index q);

// OBC quantization step for one row: -((w_q - deq_q) / Hinv_qq) Hinv_{q,:}.
RowVector obc_quant_step(const RowVector& w_row, const DenseMatrix& Hinv, Index q, double deq_q);

// Compensation of the remaining columns r = q+1: when column q is rounded to
// deq_q under the first-order loss g.dw + dw H dw^T / 2, written with the
// factor: -((w_q - deq_q) / T_qq) T_{q,r} + sign * g_r T_rr^T T_rr.
// With sign = -1 this is the exact constrained minimizer.
RowVector first_order_update(const RowVector& w_row, const linalg::InvCholFactor& factor, Index q, double deq_q,
                             const RowVector& gradient, double sign);

struct OracleResult {
  quant::QuantizedLayer quantized;
  DenseMatrix latent_at_quant;  // column j: latent value just before quantizing column j
};

// Dense-inverse route (OBC downdate + closed-form update), columns left to right.
OracleResult run_obc_oracle(LayerBundle& layer, const DenseMatrix& damped_H, const EngineConfig& config);

// Blocked column-wise compensator shared by gptq, foem and foem_plus.
//
// Columns must be stepped strictly in order and each block closed with
// block_boundary() once its last column is quantized. All rows are updated
// together; the kernels split rows across threads.
class ColumnwiseCompensator {
 public:
  // `raw_hessian` is the undamped Hessian; its sample count sets the
  // first-order normalization and its rows feed the foem_plus term.
  ColumnwiseCompensator(LayerBundle& layer, const linalg::InvCholFactor& factor,
                        const linalg::HessianState& raw_hessian, const EngineConfig& config);

  ColumnStepResult gptq_column_step(Index j, bool record_delta = false);
  ColumnStepResult foem_column_step(Index j, bool record_delta = false);
  // Lazy update of every column past the current block.
  void block_boundary();

  // W_{:,q} H_{q,q+1:} T_{q+1:,q+1:}^T T_{q+1:,q+1:} for the current latent W.
  DenseMatrix foem_plus_term(Index q) const;

  // Full left-to-right pass according to config.engine.
  void run();

  // Signed multiplier applied to (W - W_orig) M; zero for gptq.
  double first_order_coefficient() const { return coef_; }
  Index next_column() const { return next_; }
  void record_trace(bool on);
  const DenseMatrix& latent_at_quant() const { return trace_; }
  quant::QuantizedLayer quantized() const;

 private:
  ColumnStepResult step(Index j, bool first_order, bool record_delta);
  void fit_group(Index j);
  Index block_start(Index j) const { return (j / block_) * block_; }
  Index block_end(Index j) const { return std::min(block_start(j) + block_, layer_.d_in()); }

  LayerBundle& layer_;
  const linalg::InvCholFactor& factor_;
  const linalg::HessianState& raw_hessian_;
  EngineConfig config_;
  quant::QuantGrid grid_;
  Index block_;
  double coef_ = 0.0;
  Index next_ = 0;
  DenseMatrix errors_;  // d_out x B, scaled errors of the active block
  std::vector<quant::GroupScale> current_;  // per-row scale of the active group
  IntMatrix codes_;
  DenseMatrix scales_;
  IntMatrix zero_points_;
  bool tracing_ = false;
  DenseMatrix trace_;
};

struct EngineResult {
  quant::QuantizedLayer quantized;
  report::LayerReport report;
  DenseMatrix latent;  // final latent weights
};

// Runs the configured engine on an undamped Hessian. The layer is restored
// to its original weights first; the proxy loss and RTN reference are
// measured on the undamped Hessian.
EngineResult run_engine(const std::string& layer_name, LayerBundle& layer, const linalg::HessianState& hessian,
                        const EngineConfig& config);

}  // namespace foem::engines
