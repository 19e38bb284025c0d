#include "distill/sparse.hpp"

#include <algorithm>
#include <numeric>

#include "distill/error.hpp"

namespace distill {

CsrMatrix CsrMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                   std::vector<std::pair<std::size_t, std::size_t>> coords,
                                   std::vector<double> values) {
  if (coords.size() != values.size()) throw DimensionError("triplet count mismatch");
  std::vector<std::size_t> order(coords.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });

  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_offsets.assign(rows + 1, 0);
  bool has_prev = false;
  std::pair<std::size_t, std::size_t> prev;
  for (std::size_t idx : order) {
    const auto [r, c] = coords[idx];
    if (r >= rows || c >= cols) throw DimensionError("triplet outside matrix bounds");
    if (has_prev && coords[idx] == prev) {
      m.values.back() += values[idx];
      continue;
    }
    m.col_indices.push_back(c);
    m.values.push_back(values[idx]);
    ++m.row_offsets[r + 1];
    prev = coords[idx];
    has_prev = true;
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_offsets[r + 1] += m.row_offsets[r];
  return m;
}

CsrMatrix CsrMatrix::from_dense(const Tensor& dense) {
  CsrMatrix m;
  m.rows = dense.rows();
  m.cols = dense.cols();
  m.row_offsets.assign(m.rows + 1, 0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double v = dense.at(r, c);
      if (v != 0.0) {
        m.col_indices.push_back(c);
        m.values.push_back(v);
      }
    }
    m.row_offsets[r + 1] = m.nnz();
  }
  return m;
}

CsrMatrix CsrMatrix::transposed() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_offsets.assign(cols + 1, 0);
  for (std::size_t c : col_indices) ++t.row_offsets[c + 1];
  for (std::size_t c = 0; c < cols; ++c) t.row_offsets[c + 1] += t.row_offsets[c];
  t.col_indices.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
  // Visiting source rows in order keeps each output row's columns sorted.
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = row_offsets[r]; p < row_offsets[r + 1]; ++p) {
      const std::size_t dst = cursor[col_indices[p]]++;
      t.col_indices[dst] = r;
      t.values[dst] = values[p];
    }
  }
  return t;
}

Tensor CsrMatrix::to_dense() const {
  Tensor d({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = row_offsets[r]; p < row_offsets[r + 1]; ++p) d.at(r, col_indices[p]) += values[p];
  return d;
}

}  // namespace distill
