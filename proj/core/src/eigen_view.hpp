#pragma once

#include <Eigen/Core>
#include <span>

#include "surfreg/real.hpp"

namespace SURFREG_NAMESPACE::detail {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;
using MatrixView = Eigen::Map<RowMatrix>;

inline ConstMatrixView view(std::span<const Real> data, std::size_t rows, std::size_t cols) {
  return ConstMatrixView(data.data(), static_cast<Eigen::Index>(rows),
                         static_cast<Eigen::Index>(cols));
}

inline MatrixView view(std::span<Real> data, std::size_t rows, std::size_t cols) {
  return MatrixView(data.data(), static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
}

}  // namespace surfreg::detail
