#include "foem/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "foem/errors.hpp"

namespace foem::quant {

QuantGrid QuantGrid::make(int bits, int group_size, bool symmetric) {
  if (bits < 2 || bits > 8) throw ConfigError("bits must lie in [2, 8], got " + std::to_string(bits));
  if (group_size < 0) throw ConfigError("group_size must be >= 0 (0 = whole row)");
  QuantGrid g;
  g.bits = bits;
  g.group_size = group_size;
  g.symmetric = symmetric;
  if (symmetric) {
    g.q_max = (1 << (bits - 1)) - 1;
    g.q_min = -g.q_max;
  } else {
    g.q_min = 0;
    g.q_max = (1 << bits) - 1;
  }
  return g;
}

Index QuantGrid::group_width(Index d_in) const {
  if (group_size == 0 || group_size >= d_in) return std::max<Index>(d_in, 1);
  return group_size;
}

Index QuantGrid::n_groups(Index d_in) const {
  if (d_in == 0) return 0;
  const Index w = group_width(d_in);
  return (d_in + w - 1) / w;
}

GroupScale fit_scales(const RowSegment& values, const QuantGrid& grid) {
  GroupScale gs;
  if (values.size() == 0) return gs;
  if (grid.symmetric) {
    gs.scale = values.cwiseAbs().maxCoeff() / grid.q_max;
  } else {
    const double lo = values.minCoeff();
    const double hi = values.maxCoeff();
    gs.scale = (hi - lo) / (grid.q_max - grid.q_min);
    if (gs.scale > 0.0) gs.zero_point = static_cast<int>(std::nearbyint(-lo / gs.scale));
  }
  if (!(gs.scale > 0.0)) {
    gs.scale = 1.0;
    if (!grid.symmetric) gs.zero_point = static_cast<int>(std::nearbyint(-values.minCoeff()));
  }
  return gs;
}

QuantizedValue quantize_value(double w, const GroupScale& gs, const QuantGrid& grid) {
  // nearbyint honours the default FE_TONEAREST mode: ties go to even.
  const double r = std::nearbyint(w / gs.scale) + gs.zero_point;
  const double clamped = std::clamp(r, static_cast<double>(grid.q_min), static_cast<double>(grid.q_max));
  QuantizedValue out;
  out.code = static_cast<int>(clamped);
  out.deq = dequantize_code(out.code, gs);
  return out;
}

void QuantizedLayer::validate() const {
  const Index groups = grid.n_groups(d_in());
  if (scales.rows() != d_out() || scales.cols() != groups || zero_points.rows() != d_out() ||
      zero_points.cols() != groups) {
    throw FormatError("quantized layer: scale/zero-point shape does not match ceil(d_in / group_size) groups");
  }
  for (Index r = 0; r < codes.rows(); ++r) {
    for (Index c = 0; c < codes.cols(); ++c) {
      if (!grid.in_range(codes(r, c))) {
        throw FormatError("quantized layer: code " + std::to_string(codes(r, c)) + " at (" + std::to_string(r) +
                          ", " + std::to_string(c) + ") outside [" + std::to_string(grid.q_min) + ", " +
                          std::to_string(grid.q_max) + "]");
      }
    }
  }
  for (Index i = 0; i < scales.size(); ++i) {
    if (!(scales.data()[i] > 0.0) || !std::isfinite(scales.data()[i])) {
      throw FormatError("quantized layer: scales must be finite and positive");
    }
  }
  if (grid.symmetric && zero_points.size() && (zero_points.array() != 0).any()) {
    throw FormatError("quantized layer: symmetric grid with nonzero zero point");
  }
}

DenseMatrix QuantizedLayer::dequantize() const {
  DenseMatrix out(d_out(), d_in());
  for (Index c = 0; c < d_in(); ++c) {
    const Index g = grid.group_of(c, d_in());
    for (Index r = 0; r < d_out(); ++r) {
      out(r, c) = dequantize_code(codes(r, c), GroupScale{scales(r, g), zero_points(r, g)});
    }
  }
  return out;
}

QuantizedLayer rtn_quantize(const DenseMatrix& weights, const QuantGrid& grid) {
  if (!weights.allFinite()) throw NumericalError("rtn_quantize: non-finite weights");
  const Index m = weights.rows();
  const Index n = weights.cols();
  const Index width = grid.group_width(n);
  const Index groups = grid.n_groups(n);

  QuantizedLayer q;
  q.grid = grid;
  q.codes.resize(m, n);
  q.scales.resize(m, groups);
  q.zero_points.resize(m, groups);
  for (Index r = 0; r < m; ++r) {
    for (Index g = 0; g < groups; ++g) {
      const Index c0 = g * width;
      const Index len = std::min(width, n - c0);
      const auto gs = fit_scales(weights.row(r).segment(c0, len), grid);
      q.scales(r, g) = gs.scale;
      q.zero_points(r, g) = gs.zero_point;
      for (Index c = c0; c < c0 + len; ++c) q.codes(r, c) = quantize_value(weights(r, c), gs, grid).code;
    }
  }
  return q;
}

}  // namespace foem::quant
