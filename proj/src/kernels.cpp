#include "distill/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace distill::kernels {

namespace {

// Rows below this count run inline; thread start-up dominates otherwise.
constexpr std::size_t kParallelRowThreshold = 64;

using Index = std::ptrdiff_t;

inline void softmax_row(const double* in, double* out, std::size_t cols) {
  double mx = in[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
}

inline void log_softmax_row(const double* in, double* out, std::size_t cols) {
  double mx = in[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) sum += std::exp(in[j] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t j = 0; j < cols; ++j) out[j] = in[j] - lse;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

constexpr std::size_t kPanel = 4;

// c[i, :] += a[i, p] * b[p, :] for p = 0..k-1 in order, rows in [0, rows).
// Four rows and four p at a time; every element still sums left to right.
void panel_acc(const double* a, std::size_t lda, const double* b, std::size_t n, double* c, std::size_t rows,
               std::size_t k) {
  std::size_t i = 0;
  for (; i + 4 <= rows; i += 4) {
    double* __restrict c0 = c + i * n;
    double* __restrict c1 = c0 + n;
    double* __restrict c2 = c1 + n;
    double* __restrict c3 = c2 + n;
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    const double* a2 = a1 + lda;
    const double* a3 = a2 + lda;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double* __restrict b0 = b + p * n;
      const double* __restrict b1 = b0 + n;
      const double* __restrict b2 = b1 + n;
      const double* __restrict b3 = b2 + n;
      const double a00 = a0[p], a01 = a0[p + 1], a02 = a0[p + 2], a03 = a0[p + 3];
      const double a10 = a1[p], a11 = a1[p + 1], a12 = a1[p + 2], a13 = a1[p + 3];
      const double a20 = a2[p], a21 = a2[p + 1], a22 = a2[p + 2], a23 = a2[p + 3];
      const double a30 = a3[p], a31 = a3[p + 1], a32 = a3[p + 2], a33 = a3[p + 3];
      for (std::size_t j = 0; j < n; ++j) {
        const double x0 = b0[j], x1 = b1[j], x2 = b2[j], x3 = b3[j];
        c0[j] = c0[j] + a00 * x0 + a01 * x1 + a02 * x2 + a03 * x3;
        c1[j] = c1[j] + a10 * x0 + a11 * x1 + a12 * x2 + a13 * x3;
        c2[j] = c2[j] + a20 * x0 + a21 * x1 + a22 * x2 + a23 * x3;
        c3[j] = c3[j] + a30 * x0 + a31 * x1 + a32 * x2 + a33 * x3;
      }
    }
    for (; p < k; ++p) {
      const double* __restrict bp = b + p * n;
      const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      for (std::size_t j = 0; j < n; ++j) {
        const double x = bp[j];
        c0[j] += v0 * x;
        c1[j] += v1 * x;
        c2[j] += v2 * x;
        c3[j] += v3 * x;
      }
    }
  }
  for (; i < rows; ++i) {
    double* __restrict ci = c + i * n;
    const double* ai = a + i * lda;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double* __restrict b0 = b + p * n;
      const double* __restrict b1 = b0 + n;
      const double* __restrict b2 = b1 + n;
      const double* __restrict b3 = b2 + n;
      const double v0 = ai[p], v1 = ai[p + 1], v2 = ai[p + 2], v3 = ai[p + 3];
      for (std::size_t j = 0; j < n; ++j) ci[j] = ci[j] + v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
    }
    for (; p < k; ++p) {
      const double* __restrict bp = b + p * n;
      const double v = ai[p];
      for (std::size_t j = 0; j < n; ++j) ci[j] += v * bp[j];
    }
  }
}

std::vector<double> transposed(const double* x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

Index panel_count(std::size_t m) { return static_cast<Index>((m + kPanel - 1) / kPanel); }

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  std::fill(pc, pc + m * n, 0.0);
#pragma omp parallel for schedule(static) if (m >= kParallelRowThreshold)
  for (Index blk = 0; blk < panel_count(m); ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kPanel;
    panel_acc(pa + i0 * k, k, pb, n, pc + i0 * n, std::min(kPanel, m - i0), k);
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const std::vector<double> at = transposed(a.data(), k, m);
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m >= kParallelRowThreshold)
  for (Index blk = 0; blk < panel_count(m); ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kPanel;
    panel_acc(at.data() + i0 * k, k, pb, n, pc + i0 * n, std::min(kPanel, m - i0), k);
  }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const std::vector<double> bt = transposed(b.data(), n, k);
  const double* pa = a.data();
  double* pc = c.data();
#pragma omp parallel if (m >= kParallelRowThreshold)
  {
    // Each dot product is formed from zero, then added to c.
    std::vector<double> acc(kPanel * n);
#pragma omp for schedule(static)
    for (Index blk = 0; blk < panel_count(m); ++blk) {
      const std::size_t i0 = static_cast<std::size_t>(blk) * kPanel;
      const std::size_t rows = std::min(kPanel, m - i0);
      std::fill(acc.begin(), acc.end(), 0.0);
      panel_acc(pa + i0 * k, k, bt.data(), n, acc.data(), rows, k);
      double* ci = pc + i0 * n;
      for (std::size_t e = 0; e < rows * n; ++e) ci[e] += acc[e];
    }
  }
}

void spmm_acc(const CsrMatrix& s, std::span<const double> dense, std::span<double> out, std::size_t n) {
  const double* pd = dense.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (s.rows >= kParallelRowThreshold)
  for (Index r = 0; r < static_cast<Index>(s.rows); ++r) {
    double* orow = po + r * n;
    for (std::size_t p = s.row_offsets[r]; p < s.row_offsets[r + 1]; ++p) {
      const double v = s.values[p];
      const double* drow = pd + s.col_indices[p] * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += v * drow[j];
    }
  }
}

void spmm(const CsrMatrix& s, std::span<const double> dense, std::span<double> out, std::size_t n) {
  std::fill(out.begin(), out.begin() + static_cast<Index>(s.rows * n), 0.0);
  spmm_acc(s, dense, out, n);
}

void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols) {
  const double* pi = in.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (rows >= kParallelRowThreshold)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) softmax_row(pi + r * cols, po + r * cols, cols);
}

void log_softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                      std::size_t cols) {
  const double* pi = in.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (rows >= kParallelRowThreshold)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) log_softmax_row(pi + r * cols, po + r * cols, cols);
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

void spmm(const CsrMatrix& s, std::span<const double> dense, std::span<double> out, std::size_t n) {
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = s.row_offsets[r]; p < s.row_offsets[r + 1]; ++p)
        acc += s.values[p] * dense[s.col_indices[p] * n + j];
      out[r * n + j] = acc;
    }
  }
}

void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(in.data() + r * cols, out.data() + r * cols, cols);
}

void log_softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                      std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    log_softmax_row(in.data() + r * cols, out.data() + r * cols, cols);
}

}  // namespace serial

}  // namespace distill::kernels
