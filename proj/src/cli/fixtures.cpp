#include "foem/fixtures.hpp"

#include "foem/calib.hpp"

namespace foem::fixtures {

SyntheticLayer make_synthetic_layer(Index d_out, Index d_in, Index n_tokens, double rho, std::uint64_t seed) {
  calib::SyntheticSpec spec{d_in, n_tokens, rho, seed};
  DenseMatrix x = calib::generate_synthetic(spec);
  linalg::HessianState h(d_in);
  h.accumulate(x);
  return SyntheticLayer{engines::LayerBundle(calib::synthetic_weights(d_out, d_in, seed + 7919)), std::move(h),
                        std::move(x)};
}

linalg::InvCholFactor advance_columns(SyntheticLayer& s, const engines::EngineConfig& config, Index columns) {
  linalg::HessianState damped = s.hessian;
  damped.dampen(config.damping_ratio);
  auto factor = linalg::inverse_cholesky(damped);
  engines::ColumnwiseCompensator comp(s.layer, factor, s.hessian, config);
  const Index block = config.block_size;
  for (Index j = 0; j < columns; ++j) {
    comp.foem_column_step(j);
    if ((j + 1) % block == 0 || j + 1 == s.layer.d_in()) comp.block_boundary();
  }
  return factor;
}

}  // namespace foem::fixtures
