#include "foem/oracle.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>

namespace foem::oracle {

DenseMatrix dense_inverse(const DenseMatrix& A) { return A.fullPivLu().inverse(); }

DenseMatrix trailing_inverse(const DenseMatrix& H, Index q) {
  const Index k = H.rows() - q - 1;
  if (k <= 0) return DenseMatrix(0, 0);
  return dense_inverse(H.bottomRightCorner(k, k));
}

DenseMatrix delete_then_invert(const DenseMatrix& H, Index p) {
  const Index n = H.rows();
  DenseMatrix reduced(n - 1, n - 1);
  for (Index c = 0, oc = 0; c < n; ++c) {
    if (c == p) continue;
    for (Index r = 0, orow = 0; r < n; ++r) {
      if (r == p) continue;
      reduced(orow++, oc) = H(r, c);
    }
    ++oc;
  }
  return dense_inverse(reduced);
}

RowVector kkt_solve(const DenseMatrix& H, const RowVector& g, Index q, double value) {
  const Index n = H.rows();
  DenseMatrix K = DenseMatrix::Zero(n + 1, n + 1);
  K.topLeftCorner(n, n) = H;
  K(q, n) = 1.0;
  K(n, q) = 1.0;
  Vector rhs(n + 1);
  rhs.head(n) = -g.transpose();
  rhs(n) = value;
  const Vector sol = K.fullPivLu().solve(rhs);
  return sol.head(n).transpose();
}

DenseMatrix finite_difference_gradient(const std::function<double(const DenseMatrix&)>& f, const DenseMatrix& x,
                                       double step) {
  DenseMatrix grad(x.rows(), x.cols());
  DenseMatrix probe = x;
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < x.rows(); ++r) {
      const double orig = probe(r, c);
      probe(r, c) = orig + step;
      const double up = f(probe);
      probe(r, c) = orig - step;
      const double down = f(probe);
      probe(r, c) = orig;
      grad(r, c) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

double relative_frobenius(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("relative_frobenius: shape mismatch");
  if (a.size() == 0) return 0.0;
  return (a - b).norm() / std::max(b.norm(), std::numeric_limits<double>::min());
}

double relative_max(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("relative_max: shape mismatch");
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
}

DenseMatrix random_spd(Index n, unsigned seed, double shift) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> normal;
  DenseMatrix g(n, n);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  DenseMatrix h = g * g.transpose() / static_cast<double>(n);
  h.diagonal().array() += shift;
  return h;
}

}  // namespace foem::oracle
