#include "gdiff/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gdiff::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Work below this many fused multiply-adds is not worth a thread team.
constexpr long kGrain = 1 << 15;

bool use_parallel(long work) {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed) && work >= kGrain &&
         omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}
}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// Row bodies shared verbatim by ref:: and par::. The parallel versions only
// change which thread runs a given row.
// ---------------------------------------------------------------------------

namespace {

inline void matmul_nn_row(int i, int k, int n, const double* a, const double* b,
                          double* c, bool accumulate) {
  double* crow = c + static_cast<size_t>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  const double* arow = a + static_cast<size_t>(i) * k;
  for (int p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void matmul_nt_row(int i, int k, int n, const double* a, const double* b,
                          double* c, bool accumulate) {
  const double* arow = a + static_cast<size_t>(i) * k;
  double* crow = c + static_cast<size_t>(i) * n;
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<size_t>(j) * k;
    double acc = 0.0;
    for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
    crow[j] = accumulate ? crow[j] + acc : acc;
  }
}

// A is K x M; row i of C needs column i of A.
inline void matmul_tn_row_impl(int i, int m, int k, int n, const double* a,
                               const double* b, double* c, bool accumulate) {
  double* crow = c + static_cast<size_t>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double av = a[static_cast<size_t>(p) * m + i];
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_row(int cols, const double* x, double* y) {
  double mx = x[0];
  for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < cols; ++j) y[j] *= inv;
}

inline void softmax_backward_row(int cols, const double* y, const double* dy,
                                 double* dx) {
  double dot = 0.0;
  for (int j = 0; j < cols; ++j) dot += dy[j] * y[j];
  for (int j = 0; j < cols; ++j) dx[j] += (dy[j] - dot) * y[j];
}

inline void layernorm_row(int cols, const double* x, double eps, double* y,
                          double* rstd) {
  double mean = 0.0;
  for (int j = 0; j < cols; ++j) mean += x[j];
  mean /= cols;
  double var = 0.0;
  for (int j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= cols;
  const double r = 1.0 / std::sqrt(var + eps);
  for (int j = 0; j < cols; ++j) y[j] = (x[j] - mean) * r;
  *rstd = r;
}

inline void layernorm_backward_row(int cols, const double* y, double rstd,
                                   const double* dy, double* dx) {
  double mean_dy = 0.0, mean_dyy = 0.0;
  for (int j = 0; j < cols; ++j) {
    mean_dy += dy[j];
    mean_dyy += dy[j] * y[j];
  }
  mean_dy /= cols;
  mean_dyy /= cols;
  for (int j = 0; j < cols; ++j) {
    dx[j] += rstd * (dy[j] - mean_dy - y[j] * mean_dyy);
  }
}

// One (segment, head) cell of self-attention. Strides address the head's
// column block inside the (batch*seq) x width matrices.
inline void attention_cell(int b, int h, int seq, int width, int heads,
                           const double* q, const double* k, const double* v,
                           double* o, double* attn) {
  const int hd = width / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  const size_t row0 = static_cast<size_t>(b) * seq;
  const size_t col0 = static_cast<size_t>(h) * hd;
  double* a = attn + (static_cast<size_t>(b) * heads + h) * seq * seq;
  for (int i = 0; i < seq; ++i) {
    const double* qi = q + (row0 + i) * width + col0;
    double* arow = a + static_cast<size_t>(i) * seq;
    for (int j = 0; j < seq; ++j) {
      const double* kj = k + (row0 + j) * width + col0;
      double dot = 0.0;
      for (int p = 0; p < hd; ++p) dot += qi[p] * kj[p];
      arow[j] = dot * sc;
    }
    softmax_row(seq, arow, arow);
    double* oi = o + (row0 + i) * width + col0;
    std::fill(oi, oi + hd, 0.0);
    for (int j = 0; j < seq; ++j) {
      const double w = arow[j];
      const double* vj = v + (row0 + j) * width + col0;
      for (int p = 0; p < hd; ++p) oi[p] += w * vj[p];
    }
  }
}

inline void attention_backward_cell(int b, int h, int seq, int width, int heads,
                                    const double* q, const double* k, const double* v,
                                    const double* attn, const double* d_o, double* dq,
                                    double* dk, double* dv) {
  const int hd = width / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  const size_t row0 = static_cast<size_t>(b) * seq;
  const size_t col0 = static_cast<size_t>(h) * hd;
  const double* a = attn + (static_cast<size_t>(b) * heads + h) * seq * seq;
  // dV += A^T dO ; dA = dO V^T ; dS = (dA - rowdot(dA, A)) * A
  // dQ += dS K * sc ; dK += dS^T Q * sc
  std::vector<double> ds(static_cast<size_t>(seq));
  for (int i = 0; i < seq; ++i) {
    const double* arow = a + static_cast<size_t>(i) * seq;
    const double* doi = d_o + (row0 + i) * width + col0;
    double dot = 0.0;
    for (int j = 0; j < seq; ++j) {
      const double* vj = v + (row0 + j) * width + col0;
      double da = 0.0;
      for (int p = 0; p < hd; ++p) da += doi[p] * vj[p];
      ds[static_cast<size_t>(j)] = da;
      dot += da * arow[j];
    }
    for (int j = 0; j < seq; ++j) {
      ds[static_cast<size_t>(j)] = (ds[static_cast<size_t>(j)] - dot) * arow[j];
    }
    double* dqi = dq + (row0 + i) * width + col0;
    for (int j = 0; j < seq; ++j) {
      const double s = ds[static_cast<size_t>(j)] * sc;
      const double* kj = k + (row0 + j) * width + col0;
      const double* qi = q + (row0 + i) * width + col0;
      double* dkj = dk + (row0 + j) * width + col0;
      double* dvj = dv + (row0 + j) * width + col0;
      const double w = arow[j];
      for (int p = 0; p < hd; ++p) {
        dqi[p] += s * kj[p];
        dkj[p] += s * qi[p];
        dvj[p] += w * doi[p];
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference implementations.
// ---------------------------------------------------------------------------

namespace ref {

void matmul_nn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
  for (int i = 0; i < m; ++i) matmul_nn_row(i, k, n, a, b, c, accumulate);
}

void matmul_nt(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
  for (int i = 0; i < m; ++i) matmul_nt_row(i, k, n, a, b, c, accumulate);
}

void matmul_tn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
  for (int i = 0; i < m; ++i) matmul_tn_row_impl(i, m, k, n, a, b, c, accumulate);
}

void add(int n, const double* a, const double* b, double* out) {
  for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(int n, const double* a, const double* b, double* out) {
  for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(int n, const double* a, double s, double* out) {
  for (int i = 0; i < n; ++i) out[i] = a[i] * s;
}

void relu(int n, const double* x, double* out) {
  for (int i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(int n, const double* x, const double* dy, double* dx) {
  for (int i = 0; i < n; ++i) {
    if (x[i] > 0.0) dx[i] += dy[i];
  }
}

void axpy(int n, double s, const double* a, double* out) {
  for (int i = 0; i < n; ++i) out[i] += s * a[i];
}

void softmax_rows(int rows, int cols, const double* x, double* y) {
  for (int r = 0; r < rows; ++r) {
    softmax_row(cols, x + static_cast<size_t>(r) * cols, y + static_cast<size_t>(r) * cols);
  }
}

void softmax_rows_backward(int rows, int cols, const double* y, const double* dy,
                           double* dx) {
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    softmax_backward_row(cols, y + off, dy + off, dx + off);
  }
}

void layernorm_rows(int rows, int cols, const double* x, double eps, double* y,
                    double* rstd) {
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    layernorm_row(cols, x + off, eps, y + off, rstd + r);
  }
}

void layernorm_rows_backward(int rows, int cols, const double* y, const double* rstd,
                             const double* dy, double* dx) {
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    layernorm_backward_row(cols, y + off, rstd[r], dy + off, dx + off);
  }
}

void attention(int batch, int seq, int width, int heads, const double* q,
               const double* k, const double* v, double* o, double* attn) {
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) attention_cell(b, h, seq, width, heads, q, k, v, o, attn);
  }
}

void attention_backward(int batch, int seq, int width, int heads, const double* q,
                        const double* k, const double* v, const double* attn,
                        const double* d_o, double* dq, double* dk, double* dv) {
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      attention_backward_cell(b, h, seq, width, heads, q, k, v, attn, d_o, dq, dk, dv);
    }
  }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// OpenMP implementations: identical row bodies, rows spread across threads.
// ---------------------------------------------------------------------------

namespace par {

void matmul_nn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_nn_row(i, k, n, a, b, c, accumulate);
}

void matmul_nt(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_nt_row(i, k, n, a, b, c, accumulate);
}

void matmul_tn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_tn_row_impl(i, m, k, n, a, b, c, accumulate);
}

void add(int n, const double* a, const double* b, double* out) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(int n, const double* a, const double* b, double* out) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(int n, const double* a, double s, double* out) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = a[i] * s;
}

void relu(int n, const double* x, double* out) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(int n, const double* x, const double* dy, double* dx) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    if (x[i] > 0.0) dx[i] += dy[i];
  }
}

void axpy(int n, double s, const double* a, double* out) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] += s * a[i];
}

void softmax_rows(int rows, int cols, const double* x, double* y) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    softmax_row(cols, x + static_cast<size_t>(r) * cols, y + static_cast<size_t>(r) * cols);
  }
}

void softmax_rows_backward(int rows, int cols, const double* y, const double* dy,
                           double* dx) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    softmax_backward_row(cols, y + off, dy + off, dx + off);
  }
}

void layernorm_rows(int rows, int cols, const double* x, double eps, double* y,
                    double* rstd) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    layernorm_row(cols, x + off, eps, y + off, rstd + r);
  }
}

void layernorm_rows_backward(int rows, int cols, const double* y, const double* rstd,
                             const double* dy, double* dx) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    layernorm_backward_row(cols, y + off, rstd[r], dy + off, dx + off);
  }
}

void attention(int batch, int seq, int width, int heads, const double* q,
               const double* k, const double* v, double* o, double* attn) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) attention_cell(b, h, seq, width, heads, q, k, v, o, attn);
  }
}

void attention_backward(int batch, int seq, int width, int heads, const double* q,
                        const double* k, const double* v, const double* attn,
                        const double* d_o, double* dq, double* dk, double* dv) {
  // dq rows are private to (b), but dk/dv rows are shared across heads of the
  // same segment; partition on b only.
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      attention_backward_cell(b, h, seq, width, heads, q, k, v, attn, d_o, dq, dk, dv);
    }
  }
}

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatchers.
// ---------------------------------------------------------------------------

void matmul_nn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
  if (use_parallel(static_cast<long>(m) * k * n)) {
    par::matmul_nn(m, k, n, a, b, c, accumulate);
  } else {
    ref::matmul_nn(m, k, n, a, b, c, accumulate);
  }
}

void matmul_nt(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
  if (use_parallel(static_cast<long>(m) * k * n)) {
    par::matmul_nt(m, k, n, a, b, c, accumulate);
  } else {
    ref::matmul_nt(m, k, n, a, b, c, accumulate);
  }
}

void matmul_tn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate) {
  if (use_parallel(static_cast<long>(m) * k * n)) {
    par::matmul_tn(m, k, n, a, b, c, accumulate);
  } else {
    ref::matmul_tn(m, k, n, a, b, c, accumulate);
  }
}

void add(int n, const double* a, const double* b, double* out) {
  if (use_parallel(n)) par::add(n, a, b, out);
  else ref::add(n, a, b, out);
}

void mul(int n, const double* a, const double* b, double* out) {
  if (use_parallel(n)) par::mul(n, a, b, out);
  else ref::mul(n, a, b, out);
}

void scale(int n, const double* a, double s, double* out) {
  if (use_parallel(n)) par::scale(n, a, s, out);
  else ref::scale(n, a, s, out);
}

void relu(int n, const double* x, double* out) {
  if (use_parallel(n)) par::relu(n, x, out);
  else ref::relu(n, x, out);
}

void relu_backward(int n, const double* x, const double* dy, double* dx) {
  if (use_parallel(n)) par::relu_backward(n, x, dy, dx);
  else ref::relu_backward(n, x, dy, dx);
}

void axpy(int n, double s, const double* a, double* out) {
  if (use_parallel(n)) par::axpy(n, s, a, out);
  else ref::axpy(n, s, a, out);
}

void softmax_rows(int rows, int cols, const double* x, double* y) {
  if (use_parallel(static_cast<long>(rows) * cols)) par::softmax_rows(rows, cols, x, y);
  else ref::softmax_rows(rows, cols, x, y);
}

void softmax_rows_backward(int rows, int cols, const double* y, const double* dy,
                           double* dx) {
  if (use_parallel(static_cast<long>(rows) * cols)) {
    par::softmax_rows_backward(rows, cols, y, dy, dx);
  } else {
    ref::softmax_rows_backward(rows, cols, y, dy, dx);
  }
}

void layernorm_rows(int rows, int cols, const double* x, double eps, double* y,
                    double* rstd) {
  if (use_parallel(static_cast<long>(rows) * cols)) {
    par::layernorm_rows(rows, cols, x, eps, y, rstd);
  } else {
    ref::layernorm_rows(rows, cols, x, eps, y, rstd);
  }
}

void layernorm_rows_backward(int rows, int cols, const double* y, const double* rstd,
                             const double* dy, double* dx) {
  if (use_parallel(static_cast<long>(rows) * cols)) {
    par::layernorm_rows_backward(rows, cols, y, rstd, dy, dx);
  } else {
    ref::layernorm_rows_backward(rows, cols, y, rstd, dy, dx);
  }
}

void attention(int batch, int seq, int width, int heads, const double* q,
               const double* k, const double* v, double* o, double* attn) {
  const long work = static_cast<long>(batch) * heads * seq * seq * (width / heads);
  if (use_parallel(work)) par::attention(batch, seq, width, heads, q, k, v, o, attn);
  else ref::attention(batch, seq, width, heads, q, k, v, o, attn);
}

void attention_backward(int batch, int seq, int width, int heads, const double* q,
                        const double* k, const double* v, const double* attn,
                        const double* d_o, double* dq, double* dk, double* dv) {
  const long work = static_cast<long>(batch) * heads * seq * seq * (width / heads);
  if (use_parallel(work)) {
    par::attention_backward(batch, seq, width, heads, q, k, v, attn, d_o, dq, dk, dv);
  } else {
    ref::attention_backward(batch, seq, width, heads, q, k, v, attn, d_o, dq, dk, dv);
  }
}

}  // namespace gdiff::kernels
