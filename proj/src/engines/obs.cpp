#include "foem/engines.hpp"
#include "foem/errors.hpp"

namespace foem::engines {
namespace {

void check_step(const RowVector& w_row, const DenseMatrix& Hinv, Index q) {
  if (Hinv.rows() != Hinv.cols() || Hinv.rows() != w_row.size()) throw ShapeError("OBS step: shape mismatch");
  if (q < 0 || q >= w_row.size()) throw ShapeError("OBS step: q out of range");
  if (!(Hinv(q, q) > 0.0)) throw NumericalError("OBS step: Hinv_qq <= 0");
}

}  // namespace

RowVector obs_prune_step(const RowVector& w_row, const DenseMatrix& Hinv, Index q) {
  check_step(w_row, Hinv, q);
  return -(w_row(q) / Hinv(q, q)) * Hinv.row(q);
}

RowVector obc_quant_step(const RowVector& w_row, const DenseMatrix& Hinv, Index q, double deq_q) {
  check_step(w_row, Hinv, q);
  return -((w_row(q) - deq_q) / Hinv(q, q)) * Hinv.row(q);
}

RowVector first_order_update(const RowVector& w_row, const linalg::InvCholFactor& factor, Index q, double deq_q,
                             const RowVector& gradient, double sign) {
  const Index n = factor.dim();
  if (w_row.size() != n || gradient.size() != n) throw ShapeError("first_order_update: shape mismatch");
  if (q < 0 || q >= n) throw ShapeError("first_order_update: q out of range");
  const Index k = n - q - 1;
  const auto& T = factor.T;
  RowVector delta = -((w_row(q) - deq_q) / T(q, q)) * T.row(q).tail(k);
  if (k > 0) delta += sign * gradient.tail(k) * linalg::recover_inverse_submatrix(factor, q);
  return delta;
}

OracleResult run_obc_oracle(LayerBundle& layer, const DenseMatrix& damped_H, const EngineConfig& config) {
  const Index m = layer.d_out();
  const Index n = layer.d_in();
  if (damped_H.rows() != n || damped_H.cols() != n) throw ShapeError("run_obc_oracle: Hessian dimension mismatch");
  const auto grid = config.grid();
  const Index width = grid.group_width(n);

  OracleResult out;
  auto& q = out.quantized;
  q.grid = grid;
  q.codes.resize(m, n);
  q.scales.resize(m, grid.n_groups(n));
  q.zero_points.resize(m, grid.n_groups(n));
  out.latent_at_quant.resize(m, n);

  auto& W = layer.latent();
  DenseMatrix Hinv = damped_H.partialPivLu().inverse();  // inverse over columns j..n-1
  std::vector<quant::GroupScale> gs(static_cast<std::size_t>(m));

  for (Index j = 0; j < n; ++j) {
    if (j % width == 0) {
      const Index len = std::min(width, n - j);
      const DenseMatrix& src = config.scale_source == ScaleSource::latent ? W : layer.original();
      for (Index r = 0; r < m; ++r) {
        gs[static_cast<std::size_t>(r)] = quant::fit_scales(src.row(r).segment(j, len), grid);
        q.scales(r, j / width) = gs[static_cast<std::size_t>(r)].scale;
        q.zero_points(r, j / width) = gs[static_cast<std::size_t>(r)].zero_point;
      }
    }
    out.latent_at_quant.col(j) = W.col(j);
    for (Index r = 0; r < m; ++r) {
      const auto v = quant::quantize_value(W(r, j), gs[static_cast<std::size_t>(r)], grid);
      q.codes(r, j) = v.code;
      const RowVector w_rest = W.row(r).tail(n - j);
      W.row(r).tail(n - j) += obc_quant_step(w_rest, Hinv, 0, v.deq);
    }
    if (j + 1 < n) Hinv = linalg::iterative_inverse_update(Hinv, 0);
  }
  return out;
}

}  // namespace foem::engines
