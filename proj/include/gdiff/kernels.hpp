#pragma once

#include <cstdint>

namespace gdiff::kernels {

// Every kernel below has two implementations with identical element-wise
// arithmetic: a plain serial loop under ref:: (the reference used by tests)
// and an OpenMP row-partitioned loop under par::. Each output element is
// produced by exactly one thread with the same inner-loop order as the
// reference, so the two are bit-identical for any thread count.
//
// The unqualified functions dispatch on the process-wide switch below and a
// per-call work estimate, so tiny matrices never pay team-startup overhead.

void set_parallel(bool enabled);
bool parallel_enabled();
void set_threads(int n);  // 0 = leave runtime default
int max_threads();

namespace ref {
// C[M x N] = A[M x K] * B[K x N]   (+= when accumulate)
void matmul_nn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate);
// C[M x N] = A[M x K] * B[N x K]^T
void matmul_nt(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate);
// C[M x N] = A[K x M]^T * B[K x N]
void matmul_tn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate);

void add(int n, const double* a, const double* b, double* out);
void mul(int n, const double* a, const double* b, double* out);
void scale(int n, const double* a, double s, double* out);
void relu(int n, const double* x, double* out);
// dX += dY where x > 0
void relu_backward(int n, const double* x, const double* dy, double* dx);
// out += a * s
void axpy(int n, double s, const double* a, double* out);

void softmax_rows(int rows, int cols, const double* x, double* y);
// dX += (dY - rowdot(dY, Y)) * Y
void softmax_rows_backward(int rows, int cols, const double* y, const double* dy,
                           double* dx);

// y = (x - mean) * rstd per row; rstd[r] = 1/sqrt(var + eps) is saved.
void layernorm_rows(int rows, int cols, const double* x, double eps, double* y,
                    double* rstd);
// dX += rstd * (dY - mean(dY) - Y * mean(dY .* Y))
void layernorm_rows_backward(int rows, int cols, const double* y, const double* rstd,
                             const double* dy, double* dx);

// Multi-head self-attention over `batch` independent segments of `seq` rows.
// Q, K, V, O are (batch*seq) x width; width = heads * head_dim. attn is a
// caller-provided buffer of batch*heads*seq*seq holding the softmax weights
// (written by forward, read by backward).
void attention(int batch, int seq, int width, int heads, const double* q,
               const double* k, const double* v, double* o, double* attn);
void attention_backward(int batch, int seq, int width, int heads, const double* q,
                        const double* k, const double* v, const double* attn,
                        const double* d_o, double* dq, double* dk, double* dv);
}  // namespace ref

namespace par {
void matmul_nn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate);
void matmul_nt(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate);
void matmul_tn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate);

void add(int n, const double* a, const double* b, double* out);
void mul(int n, const double* a, const double* b, double* out);
void scale(int n, const double* a, double s, double* out);
void relu(int n, const double* x, double* out);
void relu_backward(int n, const double* x, const double* dy, double* dx);
void axpy(int n, double s, const double* a, double* out);

void softmax_rows(int rows, int cols, const double* x, double* y);
void softmax_rows_backward(int rows, int cols, const double* y, const double* dy,
                           double* dx);

void layernorm_rows(int rows, int cols, const double* x, double eps, double* y,
                    double* rstd);
void layernorm_rows_backward(int rows, int cols, const double* y, const double* rstd,
                             const double* dy, double* dx);

void attention(int batch, int seq, int width, int heads, const double* q,
               const double* k, const double* v, double* o, double* attn);
void attention_backward(int batch, int seq, int width, int heads, const double* q,
                        const double* k, const double* v, const double* attn,
                        const double* d_o, double* dq, double* dk, double* dv);
}  // namespace par

// Dispatching entry points used by the tape ops.
void matmul_nn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate = false);
void matmul_nt(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate = false);
void matmul_tn(int m, int k, int n, const double* a, const double* b, double* c,
               bool accumulate = false);
void add(int n, const double* a, const double* b, double* out);
void mul(int n, const double* a, const double* b, double* out);
void scale(int n, const double* a, double s, double* out);
void relu(int n, const double* x, double* out);
void relu_backward(int n, const double* x, const double* dy, double* dx);
void axpy(int n, double s, const double* a, double* out);
void softmax_rows(int rows, int cols, const double* x, double* y);
void softmax_rows_backward(int rows, int cols, const double* y, const double* dy,
                           double* dx);
void layernorm_rows(int rows, int cols, const double* x, double eps, double* y,
                    double* rstd);
void layernorm_rows_backward(int rows, int cols, const double* y, const double* rstd,
                             const double* dy, double* dx);
void attention(int batch, int seq, int width, int heads, const double* q,
               const double* k, const double* v, double* o, double* attn);
void attention_backward(int batch, int seq, int width, int heads, const double* q,
                        const double* k, const double* v, const double* attn,
                        const double* d_o, double* dq, double* dk, double* dv);

}  // namespace gdiff::kernels
