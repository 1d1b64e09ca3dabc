#pragma once

// Data-parallel compute kernels. Every kernel has a portable scalar reference
// implementation (the templates below); the float entry points dispatch at
// runtime to AVX2+FMA variants when the CPU supports them. force_scalar()
// pins the reference path so the two can be equivalence-tested.

#include <cstdint>
#include <functional>

namespace canmap::kern {

bool avx2_available();
void force_scalar(bool on);
bool using_avx2();

// Worker threads used by parallel_for (1 = run everything on the caller).
// Work is split statically so results do not depend on scheduling.
void set_threads(int n);
int threads();
void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn);

enum class Pad { zero, reflect };

// ---------------------------------------------------------------------------
// GEMM, row-major. acc=false overwrites C, acc=true adds into it.
//   gemm_nn: C[MxN] (+)= A[MxK] * B[KxN]
//   gemm_nt: C[MxN] (+)= A[MxK] * B[NxK]^T
//   gemm_tn: C[MxN] (+)= A[KxM]^T * B[KxN]
// ---------------------------------------------------------------------------

template <class T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool acc) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            T s = acc ? C[i * ldc + j] : T(0);
            for (int k = 0; k < K; ++k) s += A[i * lda + k] * B[k * ldb + j];
            C[i * ldc + j] = s;
        }
    }
}

template <class T>
void gemm_nt(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool acc) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            T s = acc ? C[i * ldc + j] : T(0);
            for (int k = 0; k < K; ++k) s += A[i * lda + k] * B[j * ldb + k];
            C[i * ldc + j] = s;
        }
    }
}

template <class T>
void gemm_tn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool acc) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            T s = acc ? C[i * ldc + j] : T(0);
            for (int k = 0; k < K; ++k) s += A[k * lda + i] * B[k * ldb + j];
            C[i * ldc + j] = s;
        }
    }
}

template <>
void gemm_nn<float>(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                    float* C, int ldc, bool acc);
template <>
void gemm_nt<float>(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                    float* C, int ldc, bool acc);
template <>
void gemm_tn<float>(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                    float* C, int ldc, bool acc);

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
void add(const T* a, const T* b, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class T>
void mul(const T* a, const T* b, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

// y += alpha * x
template <class T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale(T alpha, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] *= alpha;
}

template <class T>
void relu_fwd(const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

// dx = (y > 0) ? dy : 0   (valid because relu output sign tracks input sign)
template <class T>
void relu_bwd(const T* y, const T* dy, T* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
}

template <class T>
void lrelu_fwd(const T* x, T* y, int64_t n, T slope) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
}

template <class T>
void lrelu_bwd(const T* y, const T* dy, T* dx, int64_t n, T slope) {
    for (int64_t i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : slope * dy[i];
}

template <> void add<float>(const float* a, const float* b, float* y, int64_t n);
template <> void mul<float>(const float* a, const float* b, float* y, int64_t n);
template <> void axpy<float>(float alpha, const float* x, float* y, int64_t n);
template <> void scale<float>(float alpha, float* y, int64_t n);
template <> void relu_fwd<float>(const float* x, float* y, int64_t n);
template <> void relu_bwd<float>(const float* y, const float* dy, float* dx, int64_t n);
template <> void lrelu_fwd<float>(const float* x, float* y, int64_t n, float slope);
template <> void lrelu_bwd<float>(const float* y, const float* dy, float* dx, int64_t n,
                                  float slope);

// ---------------------------------------------------------------------------
// Reductions (double accumulator regardless of T)
// ---------------------------------------------------------------------------

template <class T>
double sum(const T* x, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]);
    return s;
}

template <class T>
double sumsq(const T* x, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    return s;
}

template <class T>
double dot(const T* a, const T* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

template <> double sum<float>(const float* x, int64_t n);
template <> double sumsq<float>(const float* x, int64_t n);
template <> double dot<float>(const float* a, const float* b, int64_t n);

// population mean/variance of one channel plane
template <class T>
void mean_var(const T* x, int64_t n, T& mean, T& var) {
    double s = sum(x, n);
    double m = s / static_cast<double>(n);
    double sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(x[i]) - m;
        sq += d * d;
    }
    mean = static_cast<T>(m);
    var = static_cast<T>(sq / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Convolution lowering, pooling, resize (scalar; memory bound)
// ---------------------------------------------------------------------------

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// mirror an out-of-range coordinate back into [0, n) (edge not repeated)
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

// col is [(C*kh*kw) x (outH*outW)], row-major
template <class T>
void im2col(const T* img, int C, int H, int W, int kh, int kw, int stride, int pad, Pad mode,
            T* col) {
    const int outH = conv_out_dim(H, kh, stride, pad);
    const int outW = conv_out_dim(W, kw, stride, pad);
    const int64_t plane = static_cast<int64_t>(outH) * outW;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * plane;
                const T* src = img + static_cast<int64_t>(c) * H * W;
                for (int oy = 0; oy < outH; ++oy) {
                    int iy = oy * stride - pad + ki;
                    if (mode == Pad::reflect) iy = reflect_index(iy, H);
                    for (int ox = 0; ox < outW; ++ox) {
                        int ix = ox * stride - pad + kj;
                        if (mode == Pad::reflect) ix = reflect_index(ix, W);
                        T v = T(0);
                        if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                            v = src[static_cast<int64_t>(iy) * W + ix];
                        dst[static_cast<int64_t>(oy) * outW + ox] = v;
                    }
                }
            }
        }
    }
}

// scatter-add inverse of im2col; img must be pre-zeroed by the caller.
// Reflect-mode gradients add into the mirrored source pixel.
template <class T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, Pad mode,
            T* img) {
    const int outH = conv_out_dim(H, kh, stride, pad);
    const int outW = conv_out_dim(W, kw, stride, pad);
    const int64_t plane = static_cast<int64_t>(outH) * outW;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* src = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * plane;
                T* dst = img + static_cast<int64_t>(c) * H * W;
                for (int oy = 0; oy < outH; ++oy) {
                    int iy = oy * stride - pad + ki;
                    if (mode == Pad::reflect) iy = reflect_index(iy, H);
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < outW; ++ox) {
                        int ix = ox * stride - pad + kj;
                        if (mode == Pad::reflect) ix = reflect_index(ix, W);
                        if (ix < 0 || ix >= W) continue;
                        dst[static_cast<int64_t>(iy) * W + ix] +=
                            src[static_cast<int64_t>(oy) * outW + ox];
                    }
                }
            }
        }
    }
}

// 2x2 stride-2 max pooling; idx records the winning flat offset per output
// (first max wins ties, so backward routing is deterministic).
template <class T>
void maxpool2x2_fwd(const T* x, int C, int H, int W, T* y, int32_t* idx) {
    const int oh = H / 2, ow = W / 2;
    for (int c = 0; c < C; ++c) {
        const T* xc = x + static_cast<int64_t>(c) * H * W;
        T* yc = y + static_cast<int64_t>(c) * oh * ow;
        int32_t* ic = idx + static_cast<int64_t>(c) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                int base = (2 * oy) * W + 2 * ox;
                int best = base;
                T bv = xc[base];
                const int cand[3] = {base + 1, base + W, base + W + 1};
                for (int t = 0; t < 3; ++t) {
                    if (xc[cand[t]] > bv) {
                        bv = xc[cand[t]];
                        best = cand[t];
                    }
                }
                yc[oy * ow + ox] = bv;
                ic[oy * ow + ox] = best;
            }
        }
    }
}

template <class T>
void maxpool2x2_bwd(const T* dy, int C, int H, int W, const int32_t* idx, T* dx) {
    const int oh = H / 2, ow = W / 2;
    for (int64_t i = 0; i < static_cast<int64_t>(C) * H * W; ++i) dx[i] = T(0);
    for (int c = 0; c < C; ++c) {
        const T* dyc = dy + static_cast<int64_t>(c) * oh * ow;
        const int32_t* ic = idx + static_cast<int64_t>(c) * oh * ow;
        T* dxc = dx + static_cast<int64_t>(c) * H * W;
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) dxc[ic[i]] += dyc[i];
    }
}

// bilinear resize with half-pixel centers; exact identity when sizes match
template <class T>
void bilinear_resize(const T* in, int H, int W, T* out, int oh, int ow) {
    if (H == oh && W == ow) {
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) out[i] = in[i];
        return;
    }
    const double sy = static_cast<double>(H) / oh;
    const double sx = static_cast<double>(W) / ow;
    for (int y = 0; y < oh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(fy >= 0 ? fy : -1);
        if (fy < 0 && fy == y0) ++y0; // exact negative integer
        double wy = fy - y0;
        int y0c = y0 < 0 ? 0 : (y0 >= H ? H - 1 : y0);
        int y1c = y0 + 1 < 0 ? 0 : (y0 + 1 >= H ? H - 1 : y0 + 1);
        for (int x = 0; x < ow; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(fx >= 0 ? fx : -1);
            if (fx < 0 && fx == x0) ++x0;
            double wx = fx - x0;
            int x0c = x0 < 0 ? 0 : (x0 >= W ? W - 1 : x0);
            int x1c = x0 + 1 < 0 ? 0 : (x0 + 1 >= W ? W - 1 : x0 + 1);
            double v00 = in[static_cast<int64_t>(y0c) * W + x0c];
            double v01 = in[static_cast<int64_t>(y0c) * W + x1c];
            double v10 = in[static_cast<int64_t>(y1c) * W + x0c];
            double v11 = in[static_cast<int64_t>(y1c) * W + x1c];
            double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            out[static_cast<int64_t>(y) * ow + x] = static_cast<T>(v);
        }
    }
}

template <class T>
void transpose(const T* a, int rows, int cols, T* at) {
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) at[static_cast<int64_t>(j) * rows + i] = a[static_cast<int64_t>(i) * cols + j];
}

} // namespace canmap::kern
