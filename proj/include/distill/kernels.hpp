#pragma once

// Dense and sparse inner loops. Every kernel parallelizes over output rows
// only; each output entry is reduced sequentially in index order, so results
// are bit-identical for any thread count. The `serial` namespace holds
// straightforward single-threaded reference versions used by tests and the
// benchmark.

#include <cstddef>
#include <span>

#include "distill/sparse.hpp"

namespace distill::kernels {

/// c[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);

/// c[m x n] += a^T * b with a[k x m], b[k x n]
void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);

/// c[m x n] += a * b^T with a[m x k], b[n x k]
void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);

/// out[s.rows x n] = s * dense[s.cols x n]
void spmm(const CsrMatrix& s, std::span<const double> dense, std::span<double> out, std::size_t n);

/// out[s.rows x n] += s * dense[s.cols x n]
void spmm_acc(const CsrMatrix& s, std::span<const double> dense, std::span<double> out, std::size_t n);

/// Row-wise max-shifted softmax.
void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols);

/// Row-wise max-shifted log-softmax.
void log_softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                      std::size_t cols);

/// Number of threads the parallel kernels will use.
int max_threads();

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void spmm(const CsrMatrix& s, std::span<const double> dense, std::span<double> out, std::size_t n);
void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols);
void log_softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                      std::size_t cols);

}  // namespace serial

}  // namespace distill::kernels
