#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace foem {

// All internal arithmetic is 64-bit; files may carry 32-bit reals.
using DenseMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// Execution path for the heavy row-partitioned kernels. `serial` is the
// plain-loop reference kept for testing; `parallel` is OpenMP + Eigen.
enum class Backend { serial, parallel };

}  // namespace foem
