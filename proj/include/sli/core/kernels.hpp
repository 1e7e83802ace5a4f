#pragma once

#include "sli/core/matrix.hpp"

namespace sli {

// Hot kernels. Each has an OpenMP-parallel version (the default used by the
// library) and a serial reference used in tests and benchmarks. Parallel
// variants assign whole output rows to threads, so every output element is
// computed with the same sequential accumulation order as the serial
// reference and the two are bitwise identical.
namespace kernels {

// C = A * B
void matmul(Mat& out, const Mat& a, const Mat& b);
void matmul_serial(Mat& out, const Mat& a, const Mat& b);

// C = A * B^T
void matmul_nt(Mat& out, const Mat& a, const Mat& b);
void matmul_nt_serial(Mat& out, const Mat& a, const Mat& b);

// C = A^T * B
void matmul_tn(Mat& out, const Mat& a, const Mat& b);
void matmul_tn_serial(Mat& out, const Mat& a, const Mat& b);

// C += A * B and C += A^T * B, used by backward passes.
void matmul_acc(Mat& out, const Mat& a, const Mat& b);
void matmul_tn_acc(Mat& out, const Mat& a, const Mat& b);
void matmul_nt_acc(Mat& out, const Mat& a, const Mat& b);

// Row-wise softmax in place; rows with fewer than `cols` active entries are
// handled by the caller via masking with -inf before the call.
void softmax_rows(Mat& m);

}  // namespace kernels
}  // namespace sli
