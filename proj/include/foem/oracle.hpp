#pragma once

// Independent dense reference computations. Nothing here touches the
// Cholesky-factor code paths it is used to check: inverses go through
// full-pivot LU and constrained problems through an explicit KKT system.

#include <functional>

#include "foem/types.hpp"

namespace foem::oracle {

DenseMatrix dense_inverse(const DenseMatrix& A);

// inverse(H_{q+1:,q+1:})
DenseMatrix trailing_inverse(const DenseMatrix& H, Index q);

// inverse of H with row and column p deleted
DenseMatrix delete_then_invert(const DenseMatrix& H, Index p);

// argmin_d g.d + d H d^T / 2 subject to d_q = value, via the bordered system
// [[H, e_q], [e_q^T, 0]] [d; lambda] = [-g; value].
RowVector kkt_solve(const DenseMatrix& H, const RowVector& g, Index q, double value);

// Central differences of a scalar function of a matrix argument.
DenseMatrix finite_difference_gradient(const std::function<double(const DenseMatrix&)>& f, const DenseMatrix& x,
                                       double step);

// ||a - b||_F / max(||b||_F, tiny)
double relative_frobenius(const DenseMatrix& a, const DenseMatrix& b);

// max |a - b| / max(max |b|, tiny)
double relative_max(const DenseMatrix& a, const DenseMatrix& b);

// Random symmetric positive definite matrix: G G^T / n + shift I.
DenseMatrix random_spd(Index n, unsigned seed, double shift = 0.1);

}  // namespace foem::oracle
