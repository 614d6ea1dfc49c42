#pragma once

// Uniform integer grids with one scale (and zero point) per (row, input-group).

#include "foem/types.hpp"

namespace foem::quant {

struct QuantGrid {
  int bits = 4;
  // Input channels per scale group; 0 means one group spanning the whole row.
  int group_size = 128;
  bool symmetric = true;
  int q_min = -7;
  int q_max = 7;

  // Validates bits in [2, 8] and group_size >= 0, then derives the code range.
  // Symmetric grids are balanced: [-(2^(b-1) - 1), 2^(b-1) - 1].
  static QuantGrid make(int bits, int group_size, bool symmetric);

  Index group_width(Index d_in) const;
  Index n_groups(Index d_in) const;
  Index group_of(Index column, Index d_in) const { return column / group_width(d_in); }
  bool in_range(std::int64_t code) const { return code >= q_min && code <= q_max; }
};

struct GroupScale {
  double scale = 1.0;
  int zero_point = 0;
};

struct QuantizedValue {
  int code = 0;
  double deq = 0.0;
};

using RowSegment = Eigen::Ref<const RowVector, 0, Eigen::InnerStride<>>;

GroupScale fit_scales(const RowSegment& values, const QuantGrid& grid);

// Round-half-to-even, clamp to the grid, dequantize.
QuantizedValue quantize_value(double w, const GroupScale& gs, const QuantGrid& grid);

inline double dequantize_code(int code, const GroupScale& gs) {
  return static_cast<double>(code - gs.zero_point) * gs.scale;
}

struct QuantizedLayer {
  QuantGrid grid;
  IntMatrix codes;         // d_out x d_in
  DenseMatrix scales;      // d_out x n_groups
  IntMatrix zero_points;   // d_out x n_groups, zero when symmetric

  Index d_out() const { return codes.rows(); }
  Index d_in() const { return codes.cols(); }

  // Throws FormatError when a shape, range or sign invariant is violated.
  void validate() const;
  DenseMatrix dequantize() const;
};

// Round-to-nearest baseline: each element fitted and rounded independently.
QuantizedLayer rtn_quantize(const DenseMatrix& weights, const QuantGrid& grid);

}  // namespace foem::quant
