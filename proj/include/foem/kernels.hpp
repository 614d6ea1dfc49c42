#pragma once

// Row-partitioned update kernels shared by the compensation engines.
//
// Every kernel exists twice: a plain-loop serial reference and an OpenMP
// version that splits the output rows across threads and hands each slab
// to Eigen. Rows never interact, so both produce the same result up to
// floating-point summation order.

#include "foem/types.hpp"

namespace foem::kernels {

using MatrixRef = Eigen::Ref<DenseMatrix>;
using ConstMatrixRef = Eigen::Ref<const DenseMatrix>;

namespace serial {

// Upper triangle of H += X X^T, then mirrored so H is exactly symmetric.
void gram_update(MatrixRef H, const ConstMatrixRef& X);

// W -= E * F.
void subtract_product(MatrixRef W, const ConstMatrixRef& E, const ConstMatrixRef& F);

// W += coef * D * U^T * U with U upper triangular (only the upper triangle is read).
void add_upper_gram_product(MatrixRef W, const ConstMatrixRef& D, const ConstMatrixRef& U, double coef);

}  // namespace serial

namespace parallel {

void gram_update(MatrixRef H, const ConstMatrixRef& X);
void subtract_product(MatrixRef W, const ConstMatrixRef& E, const ConstMatrixRef& F);
void add_upper_gram_product(MatrixRef W, const ConstMatrixRef& D, const ConstMatrixRef& U, double coef);

}  // namespace parallel

void gram_update(Backend backend, MatrixRef H, const ConstMatrixRef& X);
void subtract_product(Backend backend, MatrixRef W, const ConstMatrixRef& E, const ConstMatrixRef& F);
void add_upper_gram_product(Backend backend, MatrixRef W, const ConstMatrixRef& D, const ConstMatrixRef& U,
                            double coef);

}  // namespace foem::kernels
