#include <chrono>
#include <limits>

#include "foem/engines.hpp"
#include "foem/errors.hpp"

namespace foem::engines {

EngineResult run_engine(const std::string& layer_name, LayerBundle& layer, const linalg::HessianState& hessian,
                        const EngineConfig& config) {
  config.validate();
  if (hessian.dim() != layer.d_in()) {
    throw ShapeError("layer '" + layer_name + "': Hessian dimension " + std::to_string(hessian.dim()) +
                     " does not match d_in " + std::to_string(layer.d_in()));
  }
  if (hessian.damped()) throw StateError("run_engine expects an undamped Hessian");
  if (!layer.original().allFinite()) throw NumericalError("layer '" + layer_name + "': non-finite weights");
  layer.reset();

  const auto grid = config.grid();
  EngineResult out;
  const auto start = std::chrono::steady_clock::now();
  if (config.engine == EngineKind::rtn) {
    out.quantized = quant::rtn_quantize(layer.original(), grid);
  } else {
    linalg::HessianState damped = hessian;
    damped.dampen(config.damping_ratio);
    if (config.engine == EngineKind::obs_oracle) {
      out.quantized = run_obc_oracle(layer, damped.matrix(), config).quantized;
    } else {
      const auto factor = linalg::inverse_cholesky(damped);
      ColumnwiseCompensator comp(layer, factor, hessian, config);
      comp.run();
      out.quantized = comp.quantized();
    }
  }
  const auto stop = std::chrono::steady_clock::now();
  out.latent = layer.latent();

  auto& r = out.report;
  r.layer = layer_name;
  r.engine = config.label();
  r.bits = config.bits;
  r.group_size = config.group_size;
  r.beta = config.beta;
  r.block_size = config.block_size;
  r.wall_time_s = std::chrono::duration<double>(stop - start).count();
  r.proxy_loss = report::proxy_loss(out.quantized.dequantize(), layer.original(), hessian.matrix());
  const double rtn_loss =
      config.engine == EngineKind::rtn
          ? r.proxy_loss
          : report::proxy_loss(quant::rtn_quantize(layer.original(), grid).dequantize(), layer.original(),
                               hessian.matrix());
  if (rtn_loss > 0.0) r.rtn_relative = r.proxy_loss / rtn_loss;
  else r.rtn_relative = r.proxy_loss == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  if (layer.latent().size()) {
    const DenseMatrix drift = (layer.latent() - layer.original()).cwiseAbs();
    r.drift_max = drift.maxCoeff();
    r.drift_mean = drift.mean();
  }
  return out;
}

}  // namespace foem::engines
