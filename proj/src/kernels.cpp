#include "xemb/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace xemb {
namespace kern {

namespace {
constexpr int64_t kParallelCutoff = 1 << 14;
constexpr int64_t kReduceChunk = 4096;

// One row of C = row(A) * B, accumulated in k order.
inline void matmul_row(const double* arow, const double* b, double* crow,
                       int64_t k, int64_t n) {
  std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
  for (int64_t kk = 0; kk < k; ++kk) {
    const double av = arow[kk];
    const double* brow = b + kk * n;
    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_row(const double* x, double* y, int64_t cols) {
  double mx = x[0];
  for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int64_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (int64_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layer_norm_row(const double* x, const double* gain,
                           const double* bias, double* y, double* mu,
                           double* rstd, int64_t cols, double eps) {
  double m = 0.0;
  for (int64_t j = 0; j < cols; ++j) m += x[j];
  m /= static_cast<double>(cols);
  double var = 0.0;
  for (int64_t j = 0; j < cols; ++j) {
    const double d = x[j] - m;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double r = 1.0 / std::sqrt(var + eps);
  *mu = m;
  *rstd = r;
  for (int64_t j = 0; j < cols; ++j) y[j] = (x[j] - m) * r * gain[j] + bias[j];
}

inline void attention_head_forward(const double* q, const double* k,
                                   const double* v, double* p, double* o,
                                   int64_t t, int64_t dh, double scale) {
  // p = softmax(q k^T * scale) row by row, o = p v.
  for (int64_t i = 0; i < t; ++i) {
    double* prow = p + i * t;
    const double* qrow = q + i * dh;
    for (int64_t j = 0; j < t; ++j) {
      const double* krow = k + j * dh;
      double s = 0.0;
      for (int64_t d = 0; d < dh; ++d) s += qrow[d] * krow[d];
      prow[j] = s * scale;
    }
    softmax_row(prow, prow, t);
    double* orow = o + i * dh;
    std::memset(orow, 0, sizeof(double) * static_cast<size_t>(dh));
    for (int64_t j = 0; j < t; ++j) {
      const double w = prow[j];
      const double* vrow = v + j * dh;
      for (int64_t d = 0; d < dh; ++d) orow[d] += w * vrow[d];
    }
  }
}

inline void attention_head_backward(const double* q, const double* k,
                                    const double* v, const double* p,
                                    const double* d_o, double* dq, double* dk,
                                    double* dv, int64_t t, int64_t dh,
                                    double scale, double* ds_row) {
  // dv = p^T d_o
  for (int64_t j = 0; j < t; ++j) {
    double* dvrow = dv + j * dh;
    for (int64_t i = 0; i < t; ++i) {
      const double w = p[i * t + j];
      const double* dorow = d_o + i * dh;
      for (int64_t d = 0; d < dh; ++d) dvrow[d] += w * dorow[d];
    }
  }
  // per row: dp = d_o v^T; ds = p * (dp - <p, dp>); dq += ds k * scale;
  // dk += ds^T q * scale (accumulated row by row).
  for (int64_t i = 0; i < t; ++i) {
    const double* dorow = d_o + i * dh;
    const double* prow = p + i * t;
    double dot = 0.0;
    for (int64_t j = 0; j < t; ++j) {
      const double* vrow = v + j * dh;
      double dp = 0.0;
      for (int64_t d = 0; d < dh; ++d) dp += dorow[d] * vrow[d];
      ds_row[j] = dp;
      dot += prow[j] * dp;
    }
    for (int64_t j = 0; j < t; ++j) ds_row[j] = prow[j] * (ds_row[j] - dot);
    double* dqrow = dq + i * dh;
    const double* qrow = q + i * dh;
    for (int64_t j = 0; j < t; ++j) {
      const double w = ds_row[j] * scale;
      const double* krow = k + j * dh;
      double* dkrow = dk + j * dh;
      for (int64_t d = 0; d < dh; ++d) {
        dqrow[d] += w * krow[d];
        dkrow[d] += w * qrow[d];
      }
    }
  }
}

}  // namespace

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelCutoff)
  for (int64_t i = 0; i < m; ++i) matmul_row(a + i * k, b, c + i * n, k, n);
}

void matmul_grad_a(const double* dc, const double* b, double* da, int64_t m,
                   int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelCutoff)
  for (int64_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
      darow[kk] += s;
    }
  }
}

void matmul_grad_b(const double* a, const double* dc, double* db, int64_t m,
                   int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelCutoff)
  for (int64_t kk = 0; kk < k; ++kk) {
    double* dbrow = db + kk * n;
    for (int64_t i = 0; i < m; ++i) {
      const double av = a[i * k + kk];
      const double* dcrow = dc + i * n;
      for (int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

void attention_forward(const double* q, const double* k, const double* v,
                       double* p, double* o, int64_t h, int64_t t, int64_t dh,
                       double scale) {
#pragma omp parallel for schedule(static) if (h > 1)
  for (int64_t hh = 0; hh < h; ++hh) {
    const int64_t off = hh * t * dh;
    attention_head_forward(q + off, k + off, v + off, p + hh * t * t, o + off,
                           t, dh, scale);
  }
}

void attention_backward(const double* q, const double* k, const double* v,
                        const double* p, const double* d_o, double* dq,
                        double* dk, double* dv, int64_t h, int64_t t,
                        int64_t dh, double scale) {
#pragma omp parallel
  {
    std::vector<double> ds_row(static_cast<size_t>(t));
#pragma omp for schedule(static)
    for (int64_t hh = 0; hh < h; ++hh) {
      const int64_t off = hh * t * dh;
      attention_head_backward(q + off, k + off, v + off, p + hh * t * t,
                              d_o + off, dq + off, dk + off, dv + off, t, dh,
                              scale, ds_row.data());
    }
  }
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelCutoff)
  for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void softmax_rows_backward(const double* y, const double* dy, double* dx,
                           int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelCutoff)
  for (int64_t i = 0; i < rows; ++i) {
    const double* yrow = y + i * cols;
    const double* dyrow = dy + i * cols;
    double* dxrow = dx + i * cols;
    double dot = 0.0;
    for (int64_t j = 0; j < cols; ++j) dot += yrow[j] * dyrow[j];
    for (int64_t j = 0; j < cols; ++j) dxrow[j] += yrow[j] * (dyrow[j] - dot);
  }
}

void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mu, double* rstd, int64_t rows,
                int64_t cols, double eps) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelCutoff)
  for (int64_t i = 0; i < rows; ++i)
    layer_norm_row(x + i * cols, gain, bias, y + i * cols, mu + i, rstd + i,
                   cols, eps);
}

void layer_norm_backward(const double* x, const double* gain, const double* mu,
                         const double* rstd, const double* dy, double* dx,
                         double* dgain, double* dbias, int64_t rows,
                         int64_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelCutoff)
  for (int64_t i = 0; i < rows; ++i) {
    const double* xrow = x + i * cols;
    const double* dyrow = dy + i * cols;
    double* dxrow = dx + i * cols;
    const double m = mu[i];
    const double r = rstd[i];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      const double xhat = (xrow[j] - m) * r;
      const double dxhat = dyrow[j] * gain[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const double inv_cols = 1.0 / static_cast<double>(cols);
    for (int64_t j = 0; j < cols; ++j) {
      const double xhat = (xrow[j] - m) * r;
      const double dxhat = dyrow[j] * gain[j];
      dxrow[j] += r * (dxhat - inv_cols * sum_dxhat -
                       xhat * inv_cols * sum_dxhat_xhat);
    }
  }
  // Gain/bias gradients reduce across rows; kept serial (cols is small).
  for (int64_t i = 0; i < rows; ++i) {
    const double* xrow = x + i * cols;
    const double* dyrow = dy + i * cols;
    const double m = mu[i];
    const double r = rstd[i];
    for (int64_t j = 0; j < cols; ++j) {
      dgain[j] += dyrow[j] * (xrow[j] - m) * r;
      dbias[j] += dyrow[j];
    }
  }
}

double reduce_sum(const double* x, int64_t n) {
  const int64_t chunks = (n + kReduceChunk - 1) / kReduceChunk;
  if (chunks <= 1) return serial::reduce_sum(x, n);
  std::vector<double> partial(static_cast<size_t>(chunks), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < chunks; ++c) {
    const int64_t lo = c * kReduceChunk;
    const int64_t hi = std::min(n, lo + kReduceChunk);
    double s = 0.0;
    for (int64_t i = lo; i < hi; ++i) s += x[i];
    partial[static_cast<size_t>(c)] = s;
  }
  double total = 0.0;
  for (double s : partial) total += s;
  return total;
}

bool all_finite(const double* x, int64_t n) {
  bool ok = true;
#pragma omp parallel for schedule(static) reduction(&& : ok) if (n > kParallelCutoff)
  for (int64_t i = 0; i < n; ++i) ok = ok && std::isfinite(x[i]);
  return ok;
}

namespace serial {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n) {
  for (int64_t i = 0; i < m; ++i) matmul_row(a + i * k, b, c + i * n, k, n);
}

void attention_forward(const double* q, const double* k, const double* v,
                       double* p, double* o, int64_t h, int64_t t, int64_t dh,
                       double scale) {
  for (int64_t hh = 0; hh < h; ++hh) {
    const int64_t off = hh * t * dh;
    attention_head_forward(q + off, k + off, v + off, p + hh * t * t, o + off,
                           t, dh, scale);
  }
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
  for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mu, double* rstd, int64_t rows,
                int64_t cols, double eps) {
  for (int64_t i = 0; i < rows; ++i)
    layer_norm_row(x + i * cols, gain, bias, y + i * cols, mu + i, rstd + i,
                   cols, eps);
}

double reduce_sum(const double* x, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

}  // namespace serial

}  // namespace kern
}  // namespace xemb
