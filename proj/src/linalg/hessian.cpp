#include "foem/errors.hpp"
#include "foem/kernels.hpp"
#include "foem/linalg.hpp"

namespace foem::linalg {

HessianState::HessianState(Index dim) : H_(DenseMatrix::Zero(dim, dim)) {}

HessianState HessianState::from_matrix(const DenseMatrix& H, long n_samples, bool damped, double lambda) {
  if (H.rows() != H.cols()) throw ShapeError("Hessian must be square");
  if (n_samples < 0) throw ShapeError("Hessian sample count must be non-negative");
  HessianState s;
  s.H_ = H.selfadjointView<Eigen::Upper>();
  s.n_samples_ = n_samples;
  s.damped_ = damped;
  s.lambda_ = lambda;
  return s;
}

void HessianState::accumulate(const DenseMatrix& X, Backend backend) {
  if (damped_) throw StateError("accumulate after damping is not allowed");
  if (X.rows() != dim()) {
    throw ShapeError("accumulate: X has " + std::to_string(X.rows()) + " rows, Hessian dimension is " +
                     std::to_string(dim()));
  }
  kernels::gram_update(backend, H_, X);
  n_samples_ += static_cast<long>(X.cols());
}

void HessianState::dampen(double ratio) {
  if (!(ratio >= 0.0)) throw ConfigError("damping ratio must be >= 0");
  if (damped_) throw StateError("Hessian already damped");
  if (n_samples_ <= 0) throw StateError("cannot dampen a Hessian with no accumulated samples");
  const double mean_diag = dim() ? H_.diagonal().mean() : 0.0;
  lambda_ = ratio * mean_diag;
  if (ratio > 0.0 && mean_diag == 0.0) {
    warning_ = "all-zero Hessian diagonal: damping is zero and H may be singular";
  }
  H_.diagonal().array() += lambda_;
  damped_ = true;
}

}  // namespace foem::linalg
