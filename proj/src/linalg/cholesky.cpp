#include <cmath>
#include <string>

#include "foem/errors.hpp"
#include "foem/linalg.hpp"

namespace foem::linalg {
namespace {

// Unblocked Cholesky scan used only after the blocked factorization failed,
// to name the first non-positive pivot.
Index first_bad_pivot(const DenseMatrix& A) {
  const Index n = A.rows();
  DenseMatrix L = DenseMatrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    const double d = A(j, j) - L.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) return j;
    L(j, j) = std::sqrt(d);
    for (Index i = j + 1; i < n; ++i) {
      L(i, j) = (A(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
    }
  }
  return n;
}

}  // namespace

InvCholFactor inverse_cholesky(const HessianState& state) {
  if (!state.damped()) throw StateError("inverse_cholesky requires a damped Hessian");
  return inverse_cholesky(state.matrix());
}

InvCholFactor inverse_cholesky(const DenseMatrix& H) {
  if (H.rows() != H.cols()) throw ShapeError("inverse_cholesky: H must be square");
  const Index n = H.rows();
  if (n == 0) return {};

  // With P the order-reversal permutation: P H P = C C^T (C lower) gives
  // H^{-1} = (P C^{-1} P)^T (P C^{-1} P), and P C^{-1} P is upper triangular.
  const DenseMatrix reversed = H.reverse();
  Eigen::LLT<DenseMatrix> llt(reversed);
  if (llt.info() != Eigen::Success) {
    const Index k = first_bad_pivot(reversed);
    const long pivot = static_cast<long>(k < n ? n - 1 - k : 0);
    throw FactorizationError("Cholesky breakdown: H is not positive definite (pivot at index " +
                                 std::to_string(pivot) + ")",
                             pivot);
  }
  DenseMatrix c_inv = DenseMatrix::Identity(n, n);
  llt.matrixL().solveInPlace(c_inv);

  InvCholFactor f;
  f.T = c_inv.reverse();
  f.T.triangularView<Eigen::StrictlyLower>().setZero();
  for (Index i = 0; i < n; ++i) {
    if (!(f.T(i, i) > 0.0) || !std::isfinite(f.T(i, i))) {
      throw FactorizationError("inverse Cholesky factor has a non-positive diagonal entry at index " +
                                   std::to_string(i),
                               static_cast<long>(i));
    }
  }
  return f;
}

DenseMatrix recover_inverse_submatrix(const InvCholFactor& factor, Index q) {
  const Index n = factor.dim();
  if (q < 0 || q >= n) throw ShapeError("recover_inverse_submatrix: q out of range");
  const Index k = n - q - 1;
  if (k == 0) return DenseMatrix(0, 0);
  const auto tail = factor.T.bottomRightCorner(k, k).triangularView<Eigen::Upper>();
  DenseMatrix tail_dense = factor.T.bottomRightCorner(k, k);
  return tail.transpose() * tail_dense;
}

DenseMatrix iterative_inverse_update(const DenseMatrix& Hinv, Index p) {
  const Index n = Hinv.rows();
  if (Hinv.cols() != n) throw ShapeError("iterative_inverse_update: Hinv must be square");
  if (p < 0 || p >= n) throw ShapeError("iterative_inverse_update: p out of range");
  const double pivot = Hinv(p, p);
  if (!(pivot > 0.0)) throw NumericalError("iterative_inverse_update: Hinv_pp <= 0 (not SPD)");

  const DenseMatrix full = Hinv - Hinv.col(p) * Hinv.row(p) / pivot;
  DenseMatrix out(n - 1, n - 1);
  for (Index c = 0, oc = 0; c < n; ++c) {
    if (c == p) continue;
    for (Index r = 0, orow = 0; r < n; ++r) {
      if (r == p) continue;
      out(orow++, oc) = full(r, c);
    }
    ++oc;
  }
  return out;
}

}  // namespace foem::linalg
