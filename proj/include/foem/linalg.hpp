#pragma once

#include <optional>
#include <string>

#include "foem/types.hpp"

namespace foem::linalg {

// Accumulated input covariance H = sum X X^T over calibration tokens.
//
// The conventional factor 2 is omitted; every update rule is invariant to
// a positive rescaling of H except the first-order term, which the engines
// normalize explicitly by the sample count.
class HessianState {
 public:
  HessianState() = default;
  explicit HessianState(Index dim);

  // Rebuilds a state from a stored matrix. Only the upper triangle is read.
  static HessianState from_matrix(const DenseMatrix& H, long n_samples, bool damped = false, double lambda = 0.0);

  // H += X X^T for X of shape (dim x n_tokens). Refused once damped.
  void accumulate(const DenseMatrix& X, Backend backend = Backend::parallel);

  // lambda = ratio * mean(diag H); H += lambda I. A zero diagonal with a
  // positive ratio leaves lambda = 0 and records a warning.
  void dampen(double ratio);

  Index dim() const { return H_.rows(); }
  long n_samples() const { return n_samples_; }
  bool damped() const { return damped_; }
  double lambda() const { return lambda_; }
  const DenseMatrix& matrix() const { return H_; }
  const std::optional<std::string>& warning() const { return warning_; }

 private:
  DenseMatrix H_;
  long n_samples_ = 0;
  bool damped_ = false;
  double lambda_ = 0.0;
  std::optional<std::string> warning_;
};

// Upper-triangular T with T^T T = H^{-1} and a strictly positive diagonal.
struct InvCholFactor {
  DenseMatrix T;
  Index dim() const { return T.rows(); }
};

// Requires a damped state. Throws FactorizationError naming the first
// non-positive pivot when H is not positive definite.
InvCholFactor inverse_cholesky(const HessianState& state);

// Same, for a raw SPD matrix.
InvCholFactor inverse_cholesky(const DenseMatrix& H);

// T_{q+1:,q+1:}^T T_{q+1:,q+1:}, the inverse of the trailing principal
// block H_{q+1:,q+1:}. Empty for q = dim - 1.
DenseMatrix recover_inverse_submatrix(const InvCholFactor& factor, Index q);

// One step of the OBC removal rule: (Hinv - Hinv_{:,p} Hinv_{p,:} / Hinv_pp)
// with row and column p deleted.
DenseMatrix iterative_inverse_update(const DenseMatrix& Hinv, Index p);

}  // namespace foem::linalg
