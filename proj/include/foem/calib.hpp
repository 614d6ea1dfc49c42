#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "foem/engines.hpp"
#include "foem/linalg.hpp"
#include "foem/types.hpp"

namespace foem::calib {

struct SyntheticSpec {
  Index d_in = 128;
  Index n_tokens = 512;
  double rho = 0.9;  // singular values of the mixing matrix decay as rho^k
  std::uint64_t seed = 0;
};

// Smallest singular value used for the mixing matrix, so rho = 0 stays full rank.
inline constexpr double kSingularValueFloor = 1e-3;

// The mixing matrix A = U diag(max(rho^k, floor)) V^T with U, V random
// orthogonal matrices drawn from `seed`.
DenseMatrix synthetic_mixing(const SyntheticSpec& spec);

// X = A G, G standard normal: correlated channels with covariance A A^T.
DenseMatrix generate_synthetic(const SyntheticSpec& spec);

// Standard-normal weights with the given shape; deterministic in `seed`.
DenseMatrix synthetic_weights(Index d_out, Index d_in, std::uint64_t seed, double scale = 1.0);

// beta * (W - W_orig).
DenseMatrix approx_gradient(const engines::LayerBundle& layer, double beta);

// 2 (W - W_orig) H, the gradient of ||(W - W_orig) X||_F^2 for H = X X^T.
DenseMatrix exact_proxy_gradient(const engines::LayerBundle& layer, const DenseMatrix& H);

struct GradientDiagnostics {
  Index col_begin = 0;
  Index col_end = 0;
  // Per-row cosine; empty where the row has no drift in the inspected range.
  std::vector<std::optional<double>> cosine;
  // Per-row ||approx|| / ||exact||; same definedness as `cosine`.
  std::vector<std::optional<double>> magnitude_ratio;
  std::size_t defined_rows = 0;
  double min_cosine = 0.0;
  double mean_cosine = 0.0;
  double mean_magnitude_ratio = 0.0;
};

// Row-wise agreement between the approximate gradient and the exact proxy
// gradient (computed from the undamped H), over columns [col_begin, col_end).
GradientDiagnostics gradient_alignment(const engines::LayerBundle& layer, const DenseMatrix& H, double beta,
                                       Index col_begin = 0, Index col_end = -1);

// Activation tensors for `layer` inside one file, in accumulation order:
// "<layer>.input" first, then "<layer>.input.<k>" by ascending k.
std::vector<std::string> shard_names(const std::vector<std::string>& tensor_names, const std::string& layer);

// Layer names that have at least one activation tensor.
std::vector<std::string> activation_layers(const std::vector<std::string>& tensor_names);

// Accumulates every shard of `layer` from `files` (in order) into `state`.
// Returns the number of shards consumed.
std::size_t accumulate_shards(linalg::HessianState& state, const std::vector<std::filesystem::path>& files,
                              const std::string& layer, Backend backend = Backend::parallel);

}  // namespace foem::calib
