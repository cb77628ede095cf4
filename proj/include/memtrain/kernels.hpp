#pragma once

#include <cstdint>

namespace memtrain::kern {

// Dense float kernels for the digital path. The parallel versions split work
// over independent output elements only (each output is written by exactly
// one thread, with a fixed-order inner reduction), so they are bit-identical
// to the serial references in kern::ref regardless of thread count.

// C[M x N] = A[M x K] * B[K x N]; accumulate adds into C instead of overwriting.
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);

// C[M x N] = A^T * B with A[K x M], B[K x N].
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);

// C[M x N] = A * B^T with A[M x K], B[N x K].
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);

// 2x2/3x3 max pooling over one C x H x W sample; records flat argmax indices
// for the backward pass. Output OH = (H - k)/stride + 1 (floor), same for OW.
void maxpool_fwd(const float* src, int C, int H, int W, int k, int stride, float* dst,
                 int32_t* argmax);
void maxpool_bwd(const float* dgrad, int C, int OH, int OW, const int32_t* argmax, float* dsrc);

void avgpool_fwd(const float* src, int C, int H, int W, int k, int stride, float* dst);
void avgpool_bwd(const float* dgrad, int C, int H, int W, int k, int stride, float* dsrc);

// Receptive-field unrolling for one C x H x W sample, channel-major then
// kernel row then kernel column; dst is [positions x C*k*k]. col2im is the
// adjoint (accumulates into dsrc).
void im2col_into(const float* src, int C, int H, int W, int k, int stride, int pad, float* dst);
void col2im_into(const float* dcols, int C, int H, int W, int k, int stride, int pad, float* dsrc);

// Serial reference implementations (and independent conv oracle) used by the
// unit tests and by the kernel benchmark.
namespace ref {
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);

// Direct 6-loop convolution, weights laid out [C*k*k][out_ch] channel-major;
// the oracle the im2col+gemm path is checked against.
void conv2d_direct(const float* src, int C, int H, int W, const float* wmat, int out_ch, int k,
                   int stride, int pad, float* dst);
} // namespace ref

} // namespace memtrain::kern
