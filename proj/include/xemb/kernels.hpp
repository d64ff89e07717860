// Dense numeric kernels. xemb::kern holds the OpenMP-parallel versions used
// by the tensor ops; xemb::kern::serial holds plain reference loops kept for
// testing and benchmarking. Parallel loops are written so each output element
// is accumulated by exactly one thread in a fixed order, which makes results
// bitwise identical to the serial versions for any thread count. The one
// exception is reduce_sum, which uses fixed-size chunk partials: still
// deterministic and thread-count independent, but a different summation order
// than the naive serial loop.
#pragma once

#include <cstdint>
#include <vector>

namespace xemb {
namespace kern {

// C[m,n] = A[m,k] * B[k,n]
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n);
// dA[m,k] += dC[m,n] * B[k,n]^T
void matmul_grad_a(const double* dc, const double* b, double* da, int64_t m,
                   int64_t k, int64_t n);
// dB[k,n] += A[m,k]^T * dC[m,n]
void matmul_grad_b(const double* a, const double* dc, double* db, int64_t m,
                   int64_t k, int64_t n);

// Scaled dot-product attention over `h` independent heads of shape [t, dh].
// p (h*t*t) receives the softmax weights; o = p * v.
void attention_forward(const double* q, const double* k, const double* v,
                       double* p, double* o, int64_t h, int64_t t, int64_t dh,
                       double scale);
void attention_backward(const double* q, const double* k, const double* v,
                        const double* p, const double* d_o, double* dq,
                        double* dk, double* dv, int64_t h, int64_t t,
                        int64_t dh, double scale);

// Row-wise softmax over the last dimension; rows*cols layout.
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);
void softmax_rows_backward(const double* y, const double* dy, double* dx,
                           int64_t rows, int64_t cols);

// Row-wise layer normalization with learned gain/bias of length `cols`.
// mu/rstd (length rows) are stashed for the backward pass.
void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mu, double* rstd, int64_t rows,
                int64_t cols, double eps);
void layer_norm_backward(const double* x, const double* gain, const double* mu,
                         const double* rstd, const double* dy, double* dx,
                         double* dgain, double* dbias, int64_t rows,
                         int64_t cols);

// Deterministic full reduction: fixed-size chunk partials combined serially,
// so the result does not depend on the thread count.
double reduce_sum(const double* x, int64_t n);

bool all_finite(const double* x, int64_t n);

namespace serial {
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n);
void attention_forward(const double* q, const double* k, const double* v,
                       double* p, double* o, int64_t h, int64_t t, int64_t dh,
                       double scale);
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);
void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mu, double* rstd, int64_t rows,
                int64_t cols, double eps);
double reduce_sum(const double* x, int64_t n);
}  // namespace serial

}  // namespace kern
}  // namespace xemb
