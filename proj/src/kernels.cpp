#include "memtrain/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace memtrain::kern {

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* ci = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::memset(ci, 0, sizeof(float) * n);
        const float* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const float aip = ai[p];
            if (aip == 0.0f) continue;
            const float* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* ci = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::memset(ci, 0, sizeof(float) * n);
        for (int p = 0; p < k; ++p) {
            const float aip = a[static_cast<size_t>(p) * m + i];
            if (aip == 0.0f) continue;
            const float* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* bj = b + static_cast<size_t>(j) * k;
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + acc : acc;
        }
    }
}

void maxpool_fwd(const float* src, int C, int H, int W, int k, int stride, float* dst,
                 int32_t* argmax) {
    const int OH = (H - k) / stride + 1;
    const int OW = (W - k) / stride + 1;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const float* sc = src + static_cast<size_t>(c) * H * W;
        float* dc = dst + static_cast<size_t>(c) * OH * OW;
        int32_t* am = argmax + static_cast<size_t>(c) * OH * OW;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                int32_t besti = 0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const int iy = oy * stride + ky;
                        const int ix = ox * stride + kx;
                        const float v = sc[iy * W + ix];
                        if (v > best) {
                            best = v;
                            besti = iy * W + ix;
                        }
                    }
                dc[oy * OW + ox] = best;
                am[oy * OW + ox] = static_cast<int32_t>(c) * H * W + besti;
            }
    }
}

void maxpool_bwd(const float* dgrad, int C, int OH, int OW, const int32_t* argmax, float* dsrc) {
    // dsrc must be pre-zeroed by the caller; argmax indices are disjoint per
    // channel so the channel-parallel loop is race-free.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const size_t base = static_cast<size_t>(c) * OH * OW;
        for (size_t i = 0; i < static_cast<size_t>(OH) * OW; ++i)
            dsrc[argmax[base + i]] += dgrad[base + i];
    }
}

void avgpool_fwd(const float* src, int C, int H, int W, int k, int stride, float* dst) {
    const int OH = (H - k) / stride + 1;
    const int OW = (W - k) / stride + 1;
    const float inv = 1.0f / static_cast<float>(k * k);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const float* sc = src + static_cast<size_t>(c) * H * W;
        float* dc = dst + static_cast<size_t>(c) * OH * OW;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                float acc = 0.0f;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        acc += sc[(oy * stride + ky) * W + ox * stride + kx];
                dc[oy * OW + ox] = acc * inv;
            }
    }
}

void avgpool_bwd(const float* dgrad, int C, int H, int W, int k, int stride, float* dsrc) {
    const int OH = (H - k) / stride + 1;
    const int OW = (W - k) / stride + 1;
    const float inv = 1.0f / static_cast<float>(k * k);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const float* gc = dgrad + static_cast<size_t>(c) * OH * OW;
        float* dc = dsrc + static_cast<size_t>(c) * H * W;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                const float g = gc[oy * OW + ox] * inv;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        dc[(oy * stride + ky) * W + ox * stride + kx] += g;
            }
    }
}

void im2col_into(const float* src, int C, int H, int W, int k, int stride, int pad, float* dst) {
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    const int fan = C * k * k;
#pragma omp parallel for schedule(static)
    for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
            float* row = dst + static_cast<size_t>(oy * OW + ox) * fan;
            for (int c = 0; c < C; ++c)
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        row[(c * k + ky) * k + kx] =
                            (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                ? src[(static_cast<size_t>(c) * H + iy) * W + ix]
                                : 0.0f;
                    }
                }
        }
    }
}

void col2im_into(const float* dcols, int C, int H, int W, int k, int stride, int pad, float* dsrc) {
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    const int fan = C * k * k;
    // Overlapping windows write to shared input cells; parallelize over
    // channels, which partition the destination.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                const float* row = dcols + static_cast<size_t>(oy * OW + ox) * fan;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        dsrc[(static_cast<size_t>(c) * H + iy) * W + ix] +=
                            row[(c * k + ky) * k + kx];
                    }
                }
            }
    }
}

namespace ref {

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        float* ci = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::memset(ci, 0, sizeof(float) * n);
        const float* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const float aip = ai[p];
            if (aip == 0.0f) continue;
            const float* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        float* ci = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::memset(ci, 0, sizeof(float) * n);
        for (int p = 0; p < k; ++p) {
            const float aip = a[static_cast<size_t>(p) * m + i];
            if (aip == 0.0f) continue;
            const float* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* bj = b + static_cast<size_t>(j) * k;
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + acc : acc;
        }
    }
}

void conv2d_direct(const float* src, int C, int H, int W, const float* wmat, int out_ch, int k,
                   int stride, int pad, float* dst) {
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    for (int oc = 0; oc < out_ch; ++oc)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                float acc = 0.0f;
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            const float w = wmat[static_cast<size_t>((c * k + ky) * k + kx) * out_ch + oc];
                            acc += w * src[(static_cast<size_t>(c) * H + iy) * W + ix];
                        }
                dst[(static_cast<size_t>(oc) * OH + oy) * OW + ox] = acc;
            }
}

} // namespace ref

} // namespace memtrain::kern
