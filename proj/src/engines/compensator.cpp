#include <algorithm>

#include "foem/engines.hpp"
#include "foem/errors.hpp"
#include "foem/kernels.hpp"

namespace foem::engines {

ColumnwiseCompensator::ColumnwiseCompensator(LayerBundle& layer, const linalg::InvCholFactor& factor,
                                             const linalg::HessianState& raw_hessian, const EngineConfig& config)
    : layer_(layer), factor_(factor), raw_hessian_(raw_hessian), config_(config), grid_(config.grid()),
      block_(config.block_size) {
  config_.validate();
  const Index m = layer.d_out();
  const Index n = layer.d_in();
  if (factor.dim() != n) throw ShapeError("compensator: factor dimension does not match d_in");
  if (raw_hessian.dim() != n) throw ShapeError("compensator: Hessian dimension does not match d_in");

  if (config.uses_first_order() && config.beta > 0.0) {
    // M is the inverse of the damped raw H, so beta * norm * M is beta times
    // the inverse of the normalized Hessian.
    double norm = 1.0;
    if (config.hessian_norm == HessianNorm::mean_diagonal) {
      norm = raw_hessian.matrix().diagonal().mean();
      if (!(norm > 0.0)) throw StateError("mean-diagonal normalization needs a positive Hessian diagonal");
    } else if (config.hessian_norm == HessianNorm::sample_mean) {
      if (raw_hessian.n_samples() <= 0) throw StateError("sample-mean normalization needs a positive sample count");
      norm = 0.5 * static_cast<double>(raw_hessian.n_samples());
    }
    const double sign = config.first_order_sign == FirstOrderSign::minus ? -1.0 : 1.0;
    coef_ = sign * config.beta * norm;
  }

  errors_ = DenseMatrix::Zero(m, std::min<Index>(block_, n));
  current_.resize(static_cast<std::size_t>(m));
  codes_.resize(m, n);
  scales_.resize(m, grid_.n_groups(n));
  zero_points_.resize(m, grid_.n_groups(n));
}

void ColumnwiseCompensator::record_trace(bool on) {
  tracing_ = on;
  if (on) trace_ = DenseMatrix::Zero(layer_.d_out(), layer_.d_in());
}

void ColumnwiseCompensator::fit_group(Index j) {
  const Index m = layer_.d_out();
  const Index n = layer_.d_in();
  const Index len = std::min(grid_.group_width(n), n - j);
  const Index g = grid_.group_of(j, n);

  DenseMatrix view;
  if (config_.scale_source == ScaleSource::original) {
    view = layer_.original().middleCols(j, len);
  } else {
    // Columns past the active block still owe their lazy update from the
    // columns already quantized in this block.
    view = layer_.latent().middleCols(j, len);
    const Index i = block_start(j);
    const Index e = block_end(j);
    if (j + len > e && j > i) {
      view.rightCols(j + len - e).noalias() -=
          errors_.leftCols(j - i) * factor_.T.block(i, e, j - i, j + len - e);
    }
  }
  for (Index r = 0; r < m; ++r) {
    auto& gs = current_[static_cast<std::size_t>(r)];
    gs = quant::fit_scales(view.row(r), grid_);
    scales_(r, g) = gs.scale;
    zero_points_(r, g) = gs.zero_point;
  }
}

ColumnStepResult ColumnwiseCompensator::step(Index j, bool first_order, bool record_delta) {
  const Index m = layer_.d_out();
  const Index n = layer_.d_in();
  if (j != next_ || j >= n) throw StateError("columns must be quantized in order");
  const Index i = block_start(j);
  const Index e = block_end(j);
  const Index len = e - j;
  if (j == i) errors_.setZero();
  if (j % grid_.group_width(n) == 0) fit_group(j);

  auto& W = layer_.latent();
  const auto& T = factor_.T;
  if (tracing_) trace_.col(j) = W.col(j);

  ColumnStepResult res;
  res.q_col.resize(m);
  res.deq_col.resize(m);
  const Vector w_pre = W.col(j);
  for (Index r = 0; r < m; ++r) {
    const auto v = quant::quantize_value(w_pre(r), current_[static_cast<std::size_t>(r)], grid_);
    codes_(r, j) = v.code;
    res.q_col(r) = v.code;
    res.deq_col(r) = v.deq;
  }
  errors_.col(j - i) = (w_pre - res.deq_col) / T(j, j);

  DenseMatrix before;
  if (record_delta) before = W.middleCols(j, len);

  const bool apply_first_order = first_order && coef_ != 0.0;
  DenseMatrix drift;
  if (apply_first_order) drift = W.middleCols(j, len) - layer_.original().middleCols(j, len);

  kernels::subtract_product(config_.backend, W.middleCols(j, len), errors_.col(j - i), T.block(j, j, 1, len));
  if (apply_first_order) {
    kernels::add_upper_gram_product(config_.backend, W.middleCols(j, len), drift, T.block(j, j, len, len), coef_);
  }
  if (first_order && config_.engine == EngineKind::foem_plus && j + 1 < n) {
    // w_pre H_{j,j+1:} M, formed as w_pre * (T_rr^T (T_rr h))^T.
    const Index k = n - j - 1;
    const auto tail = T.bottomRightCorner(k, k).triangularView<Eigen::Upper>();
    const Vector h = raw_hessian_.matrix().col(j).tail(k);
    const Vector th = tail * h;
    const Vector v = tail.transpose() * th;
    W.rightCols(k).noalias() += w_pre * v.transpose();
  }

  if (record_delta) {
    res.delta_W = W.middleCols(j, len) - before;
    res.delta_first_col = j;
  }
  ++next_;
  return res;
}

ColumnStepResult ColumnwiseCompensator::gptq_column_step(Index j, bool record_delta) {
  return step(j, false, record_delta);
}

ColumnStepResult ColumnwiseCompensator::foem_column_step(Index j, bool record_delta) {
  return step(j, true, record_delta);
}

void ColumnwiseCompensator::block_boundary() {
  const Index n = layer_.d_in();
  if (next_ == 0) throw StateError("block_boundary before any column");
  const Index i = block_start(next_ - 1);
  const Index e = block_end(next_ - 1);
  if (next_ != e) throw StateError("block_boundary called before the block was fully quantized");
  if (e >= n) return;

  auto& W = layer_.latent();
  const auto& T = factor_.T;
  const Index rest = n - e;
  const bool apply_first_order = config_.uses_first_order() && coef_ != 0.0;
  DenseMatrix drift;
  if (apply_first_order) drift = W.rightCols(rest) - layer_.original().rightCols(rest);
  kernels::subtract_product(config_.backend, W.rightCols(rest), errors_.leftCols(e - i), T.block(i, e, e - i, rest));
  if (apply_first_order) {
    kernels::add_upper_gram_product(config_.backend, W.rightCols(rest), drift, T.bottomRightCorner(rest, rest),
                                    coef_);
  }
}

DenseMatrix ColumnwiseCompensator::foem_plus_term(Index q) const {
  const Index n = layer_.d_in();
  if (q < 0 || q >= n) throw ShapeError("foem_plus_term: q out of range");
  const Index k = n - q - 1;
  if (k == 0) return DenseMatrix(layer_.d_out(), 0);
  const RowVector hq = raw_hessian_.matrix().row(q).tail(k);
  return layer_.latent().col(q) * (hq * linalg::recover_inverse_submatrix(factor_, q));
}

void ColumnwiseCompensator::run() {
  const Index n = layer_.d_in();
  const bool first_order = config_.engine != EngineKind::gptq;
  for (Index j = next_; j < n; ++j) {
    step(j, first_order, false);
    if (j + 1 == block_end(j)) block_boundary();
  }
}

quant::QuantizedLayer ColumnwiseCompensator::quantized() const {
  if (next_ != layer_.d_in()) throw StateError("quantized() before every column was processed");
  quant::QuantizedLayer q;
  q.grid = grid_;
  q.codes = codes_;
  q.scales = scales_;
  q.zero_points = zero_points_;
  return q;
}

}  // namespace foem::engines
