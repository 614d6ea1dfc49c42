#pragma once

// Seeded synthetic layers shared by the verify command, tests and benchmarks.

#include <cstdint>
#include <string>

#include "foem/engines.hpp"
#include "foem/linalg.hpp"

namespace foem::fixtures {

struct SyntheticLayer {
  engines::LayerBundle layer;
  linalg::HessianState hessian;  // undamped, H = X X^T
  DenseMatrix X;                 // d_in x n_tokens, kept for two-route checks
};

// Weights ~ N(0, 1); inputs correlated with singular-value decay rho.
SyntheticLayer make_synthetic_layer(Index d_out, Index d_in, Index n_tokens, double rho, std::uint64_t seed);

// Runs the compensator over the first `columns` columns so W has drifted
// from the original weights. Returns the factor used.
linalg::InvCholFactor advance_columns(SyntheticLayer& s, const engines::EngineConfig& config, Index columns);

}  // namespace foem::fixtures
