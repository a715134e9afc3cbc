#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "vdi/common.hpp"

namespace vdi {

// Row-major so the canonical byte form (token-major, dimension-minor) is a
// straight memcpy of the storage.
using MatrixRX = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One activation tensor at a segment boundary: rows are token positions,
// columns are hidden dimensions.
struct HiddenState {
  std::string task_id;
  std::uint32_t segment_index = 0;  // boundary index in [1, L+1]
  std::uint32_t token_index = 0;    // decode step t >= 1 that produced it
  MatrixRX values;

  std::size_t scalar_count() const { return static_cast<std::size_t>(values.size()); }

  // Throws NonFiniteScalar if any entry is NaN/Inf.
  void validate() const;
};

}  // namespace vdi
