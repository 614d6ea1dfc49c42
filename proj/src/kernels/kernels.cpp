#include "foem/kernels.hpp"

#include <algorithm>
#include <vector>

#include "foem/errors.hpp"

namespace foem::kernels {
namespace {

constexpr Index kRowSlab = 64;
constexpr Index kGramTile = 128;

void check_product_shapes(const MatrixRef& W, const ConstMatrixRef& E, const ConstMatrixRef& F) {
  if (E.rows() != W.rows() || F.cols() != W.cols() || E.cols() != F.rows()) {
    throw ShapeError("subtract_product: incompatible operand shapes");
  }
}

void check_gram_product_shapes(const MatrixRef& W, const ConstMatrixRef& D, const ConstMatrixRef& U) {
  if (D.rows() != W.rows() || D.cols() != W.cols() || U.rows() != U.cols() || U.cols() != W.cols()) {
    throw ShapeError("add_upper_gram_product: incompatible operand shapes");
  }
}

void mirror_upper(MatrixRef H) {
  for (Index c = 0; c < H.cols(); ++c) {
    for (Index r = c + 1; r < H.rows(); ++r) H(r, c) = H(c, r);
  }
}

}  // namespace

namespace serial {

void gram_update(MatrixRef H, const ConstMatrixRef& X) {
  if (H.rows() != H.cols() || X.rows() != H.rows()) throw ShapeError("gram_update: X rows must equal dim(H)");
  const Index d = X.rows();
  for (Index r = 0; r < d; ++r) {
    for (Index c = r; c < d; ++c) {
      double acc = 0.0;
      for (Index t = 0; t < X.cols(); ++t) acc += X(r, t) * X(c, t);
      H(r, c) += acc;
    }
  }
  mirror_upper(H);
}

void subtract_product(MatrixRef W, const ConstMatrixRef& E, const ConstMatrixRef& F) {
  check_product_shapes(W, E, F);
  for (Index r = 0; r < W.rows(); ++r) {
    for (Index c = 0; c < W.cols(); ++c) {
      double acc = 0.0;
      for (Index k = 0; k < E.cols(); ++k) acc += E(r, k) * F(k, c);
      W(r, c) -= acc;
    }
  }
}

void add_upper_gram_product(MatrixRef W, const ConstMatrixRef& D, const ConstMatrixRef& U, double coef) {
  check_gram_product_shapes(W, D, U);
  const Index n = U.cols();
  std::vector<double> p(static_cast<std::size_t>(n));
  for (Index r = 0; r < W.rows(); ++r) {
    // p = D_r U^T: p_k = sum_{l >= k} D_rl U_kl
    for (Index k = 0; k < n; ++k) {
      double acc = 0.0;
      for (Index l = k; l < n; ++l) acc += D(r, l) * U(k, l);
      p[static_cast<std::size_t>(k)] = acc;
    }
    // W_r += coef * p U: (pU)_c = sum_{k <= c} p_k U_kc
    for (Index c = 0; c < n; ++c) {
      double acc = 0.0;
      for (Index k = 0; k <= c; ++k) acc += p[static_cast<std::size_t>(k)] * U(k, c);
      W(r, c) += coef * acc;
    }
  }
}

}  // namespace serial

namespace parallel {

void gram_update(MatrixRef H, const ConstMatrixRef& X) {
  if (H.rows() != H.cols() || X.rows() != H.rows()) throw ShapeError("gram_update: X rows must equal dim(H)");
  const Index d = X.rows();
  const Index tiles = (d + kGramTile - 1) / kGramTile;
  // Upper-triangular tile pairs (a <= b) are independent output blocks.
#pragma omp parallel for schedule(dynamic)
  for (Index pair = 0; pair < tiles * tiles; ++pair) {
    const Index a = pair / tiles;
    const Index b = pair % tiles;
    if (b < a) continue;
    const Index r0 = a * kGramTile;
    const Index c0 = b * kGramTile;
    const Index nr = std::min(kGramTile, d - r0);
    const Index nc = std::min(kGramTile, d - c0);
    H.block(r0, c0, nr, nc).noalias() += X.middleRows(r0, nr) * X.middleRows(c0, nc).transpose();
  }
  mirror_upper(H);
}

void subtract_product(MatrixRef W, const ConstMatrixRef& E, const ConstMatrixRef& F) {
  check_product_shapes(W, E, F);
  if (W.size() == 0 || E.cols() == 0) return;
  const Index m = W.rows();
  const Index slabs = (m + kRowSlab - 1) / kRowSlab;
#pragma omp parallel for schedule(static) if (slabs > 1 && W.size() * E.cols() > 32768)
  for (Index s = 0; s < slabs; ++s) {
    const Index r0 = s * kRowSlab;
    const Index nr = std::min(kRowSlab, m - r0);
    W.middleRows(r0, nr).noalias() -= E.middleRows(r0, nr) * F;
  }
}

void add_upper_gram_product(MatrixRef W, const ConstMatrixRef& D, const ConstMatrixRef& U, double coef) {
  check_gram_product_shapes(W, D, U);
  if (W.size() == 0) return;
  const Index m = W.rows();
  const Index slabs = (m + kRowSlab - 1) / kRowSlab;
  const auto upper = U.triangularView<Eigen::Upper>();
#pragma omp parallel for schedule(static) if (slabs > 1 && W.size() * U.cols() > 32768)
  for (Index s = 0; s < slabs; ++s) {
    const Index r0 = s * kRowSlab;
    const Index nr = std::min(kRowSlab, m - r0);
    const DenseMatrix p = D.middleRows(r0, nr) * upper.transpose();
    const DenseMatrix q = p * upper;
    W.middleRows(r0, nr) += coef * q;
  }
}

}  // namespace parallel

void gram_update(Backend backend, MatrixRef H, const ConstMatrixRef& X) {
  backend == Backend::serial ? serial::gram_update(H, X) : parallel::gram_update(H, X);
}

void subtract_product(Backend backend, MatrixRef W, const ConstMatrixRef& E, const ConstMatrixRef& F) {
  backend == Backend::serial ? serial::subtract_product(W, E, F) : parallel::subtract_product(W, E, F);
}

void add_upper_gram_product(Backend backend, MatrixRef W, const ConstMatrixRef& D, const ConstMatrixRef& U,
                            double coef) {
  backend == Backend::serial ? serial::add_upper_gram_product(W, D, U, coef)
                             : parallel::add_upper_gram_product(W, D, U, coef);
}

}  // namespace foem::kernels
