#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

/// Compressed-sparse-row matrix. Column indices within a row are sorted.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets{0};
  std::vector<std::size_t> col_indices;
  std::vector<double> values;

  std::size_t nnz() const noexcept { return col_indices.size(); }

  /// Builds from (row, col, value) triplets; duplicates are summed.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols,
                                 std::vector<std::pair<std::size_t, std::size_t>> coords,
                                 std::vector<double> values);
  /// Keeps exact nonzeros of a dense matrix.
  static CsrMatrix from_dense(const Tensor& dense);

  CsrMatrix transposed() const;
  Tensor to_dense() const;
};

}  // namespace distill
