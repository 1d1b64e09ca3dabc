// AVX2+FMA kernel variants. Compiled with per-function target attributes so
// the binary stays runnable on plain x86-64; dispatch happens in kernels.cpp.

#include <cstdint>
#include <immintrin.h>

namespace canmap::kern {

#define CM_AVX2 __attribute__((target("avx2,fma")))

namespace {

CM_AVX2 inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_hadd_ps(s, s);
    s = _mm_hadd_ps(s, s);
    return _mm_cvtss_f32(s);
}

} // namespace

// 6x16 register tile; remainder rows 1x16, remainder columns scalar.
CM_AVX2 void gemm_nn_avx2(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                          float* C, int ldc, bool acc) {
    int j = 0;
    for (; j + 16 <= N; j += 16) {
        int i = 0;
        for (; i + 6 <= M; i += 6) {
            __m256 c00, c01, c10, c11, c20, c21, c30, c31, c40, c41, c50, c51;
            if (acc) {
                c00 = _mm256_loadu_ps(C + (i + 0) * ldc + j);
                c01 = _mm256_loadu_ps(C + (i + 0) * ldc + j + 8);
                c10 = _mm256_loadu_ps(C + (i + 1) * ldc + j);
                c11 = _mm256_loadu_ps(C + (i + 1) * ldc + j + 8);
                c20 = _mm256_loadu_ps(C + (i + 2) * ldc + j);
                c21 = _mm256_loadu_ps(C + (i + 2) * ldc + j + 8);
                c30 = _mm256_loadu_ps(C + (i + 3) * ldc + j);
                c31 = _mm256_loadu_ps(C + (i + 3) * ldc + j + 8);
                c40 = _mm256_loadu_ps(C + (i + 4) * ldc + j);
                c41 = _mm256_loadu_ps(C + (i + 4) * ldc + j + 8);
                c50 = _mm256_loadu_ps(C + (i + 5) * ldc + j);
                c51 = _mm256_loadu_ps(C + (i + 5) * ldc + j + 8);
            } else {
                c00 = c01 = c10 = c11 = c20 = c21 = _mm256_setzero_ps();
                c30 = c31 = c40 = c41 = c50 = c51 = _mm256_setzero_ps();
            }
            for (int k = 0; k < K; ++k) {
                __m256 b0 = _mm256_loadu_ps(B + static_cast<int64_t>(k) * ldb + j);
                __m256 b1 = _mm256_loadu_ps(B + static_cast<int64_t>(k) * ldb + j + 8);
                __m256 a;
                a = _mm256_set1_ps(A[(i + 0) * lda + k]);
                c00 = _mm256_fmadd_ps(a, b0, c00);
                c01 = _mm256_fmadd_ps(a, b1, c01);
                a = _mm256_set1_ps(A[(i + 1) * lda + k]);
                c10 = _mm256_fmadd_ps(a, b0, c10);
                c11 = _mm256_fmadd_ps(a, b1, c11);
                a = _mm256_set1_ps(A[(i + 2) * lda + k]);
                c20 = _mm256_fmadd_ps(a, b0, c20);
                c21 = _mm256_fmadd_ps(a, b1, c21);
                a = _mm256_set1_ps(A[(i + 3) * lda + k]);
                c30 = _mm256_fmadd_ps(a, b0, c30);
                c31 = _mm256_fmadd_ps(a, b1, c31);
                a = _mm256_set1_ps(A[(i + 4) * lda + k]);
                c40 = _mm256_fmadd_ps(a, b0, c40);
                c41 = _mm256_fmadd_ps(a, b1, c41);
                a = _mm256_set1_ps(A[(i + 5) * lda + k]);
                c50 = _mm256_fmadd_ps(a, b0, c50);
                c51 = _mm256_fmadd_ps(a, b1, c51);
            }
            _mm256_storeu_ps(C + (i + 0) * ldc + j, c00);
            _mm256_storeu_ps(C + (i + 0) * ldc + j + 8, c01);
            _mm256_storeu_ps(C + (i + 1) * ldc + j, c10);
            _mm256_storeu_ps(C + (i + 1) * ldc + j + 8, c11);
            _mm256_storeu_ps(C + (i + 2) * ldc + j, c20);
            _mm256_storeu_ps(C + (i + 2) * ldc + j + 8, c21);
            _mm256_storeu_ps(C + (i + 3) * ldc + j, c30);
            _mm256_storeu_ps(C + (i + 3) * ldc + j + 8, c31);
            _mm256_storeu_ps(C + (i + 4) * ldc + j, c40);
            _mm256_storeu_ps(C + (i + 4) * ldc + j + 8, c41);
            _mm256_storeu_ps(C + (i + 5) * ldc + j, c50);
            _mm256_storeu_ps(C + (i + 5) * ldc + j + 8, c51);
        }
        for (; i < M; ++i) {
            __m256 c0, c1;
            if (acc) {
                c0 = _mm256_loadu_ps(C + i * ldc + j);
                c1 = _mm256_loadu_ps(C + i * ldc + j + 8);
            } else {
                c0 = c1 = _mm256_setzero_ps();
            }
            for (int k = 0; k < K; ++k) {
                __m256 a = _mm256_set1_ps(A[i * lda + k]);
                c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(B + static_cast<int64_t>(k) * ldb + j), c0);
                c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(B + static_cast<int64_t>(k) * ldb + j + 8), c1);
            }
            _mm256_storeu_ps(C + i * ldc + j, c0);
            _mm256_storeu_ps(C + i * ldc + j + 8, c1);
        }
    }
    for (; j < N; ++j) {
        for (int i = 0; i < M; ++i) {
            float s = acc ? C[i * ldc + j] : 0.f;
            for (int k = 0; k < K; ++k) s += A[i * lda + k] * B[static_cast<int64_t>(k) * ldb + j];
            C[i * ldc + j] = s;
        }
    }
}

// rows of A dotted with rows of B; 4x2 tile of dot accumulators
CM_AVX2 void gemm_nt_avx2(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                          float* C, int ldc, bool acc) {
    int i = 0;
    for (; i + 4 <= M; i += 4) {
        int j = 0;
        for (; j + 2 <= N; j += 2) {
            __m256 s00 = _mm256_setzero_ps(), s01 = _mm256_setzero_ps();
            __m256 s10 = _mm256_setzero_ps(), s11 = _mm256_setzero_ps();
            __m256 s20 = _mm256_setzero_ps(), s21 = _mm256_setzero_ps();
            __m256 s30 = _mm256_setzero_ps(), s31 = _mm256_setzero_ps();
            int k = 0;
            for (; k + 8 <= K; k += 8) {
                __m256 b0 = _mm256_loadu_ps(B + (j + 0) * static_cast<int64_t>(ldb) + k);
                __m256 b1 = _mm256_loadu_ps(B + (j + 1) * static_cast<int64_t>(ldb) + k);
                __m256 a0 = _mm256_loadu_ps(A + (i + 0) * static_cast<int64_t>(lda) + k);
                __m256 a1 = _mm256_loadu_ps(A + (i + 1) * static_cast<int64_t>(lda) + k);
                __m256 a2 = _mm256_loadu_ps(A + (i + 2) * static_cast<int64_t>(lda) + k);
                __m256 a3 = _mm256_loadu_ps(A + (i + 3) * static_cast<int64_t>(lda) + k);
                s00 = _mm256_fmadd_ps(a0, b0, s00);
                s01 = _mm256_fmadd_ps(a0, b1, s01);
                s10 = _mm256_fmadd_ps(a1, b0, s10);
                s11 = _mm256_fmadd_ps(a1, b1, s11);
                s20 = _mm256_fmadd_ps(a2, b0, s20);
                s21 = _mm256_fmadd_ps(a2, b1, s21);
                s30 = _mm256_fmadd_ps(a3, b0, s30);
                s31 = _mm256_fmadd_ps(a3, b1, s31);
            }
            float t[8];
            t[0] = hsum8(s00);
            t[1] = hsum8(s01);
            t[2] = hsum8(s10);
            t[3] = hsum8(s11);
            t[4] = hsum8(s20);
            t[5] = hsum8(s21);
            t[6] = hsum8(s30);
            t[7] = hsum8(s31);
            for (; k < K; ++k) {
                float b0 = B[(j + 0) * static_cast<int64_t>(ldb) + k];
                float b1 = B[(j + 1) * static_cast<int64_t>(ldb) + k];
                t[0] += A[(i + 0) * static_cast<int64_t>(lda) + k] * b0;
                t[1] += A[(i + 0) * static_cast<int64_t>(lda) + k] * b1;
                t[2] += A[(i + 1) * static_cast<int64_t>(lda) + k] * b0;
                t[3] += A[(i + 1) * static_cast<int64_t>(lda) + k] * b1;
                t[4] += A[(i + 2) * static_cast<int64_t>(lda) + k] * b0;
                t[5] += A[(i + 2) * static_cast<int64_t>(lda) + k] * b1;
                t[6] += A[(i + 3) * static_cast<int64_t>(lda) + k] * b0;
                t[7] += A[(i + 3) * static_cast<int64_t>(lda) + k] * b1;
            }
            for (int r = 0; r < 4; ++r)
                for (int cidx = 0; cidx < 2; ++cidx) {
                    float* dst = C + (i + r) * static_cast<int64_t>(ldc) + j + cidx;
                    *dst = (acc ? *dst : 0.f) + t[r * 2 + cidx];
                }
        }
        for (; j < N; ++j) {
            for (int r = 0; r < 4; ++r) {
                __m256 s = _mm256_setzero_ps();
                int k = 0;
                for (; k + 8 <= K; k += 8)
                    s = _mm256_fmadd_ps(_mm256_loadu_ps(A + (i + r) * static_cast<int64_t>(lda) + k),
                                        _mm256_loadu_ps(B + j * static_cast<int64_t>(ldb) + k), s);
                float v = hsum8(s);
                for (; k < K; ++k) v += A[(i + r) * static_cast<int64_t>(lda) + k] * B[j * static_cast<int64_t>(ldb) + k];
                float* dst = C + (i + r) * static_cast<int64_t>(ldc) + j;
                *dst = (acc ? *dst : 0.f) + v;
            }
        }
    }
    for (; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            __m256 s = _mm256_setzero_ps();
            int k = 0;
            for (; k + 8 <= K; k += 8)
                s = _mm256_fmadd_ps(_mm256_loadu_ps(A + i * static_cast<int64_t>(lda) + k),
                                    _mm256_loadu_ps(B + j * static_cast<int64_t>(ldb) + k), s);
            float v = hsum8(s);
            for (; k < K; ++k) v += A[i * static_cast<int64_t>(lda) + k] * B[j * static_cast<int64_t>(ldb) + k];
            float* dst = C + i * static_cast<int64_t>(ldc) + j;
            *dst = (acc ? *dst : 0.f) + v;
        }
    }
}

// like gemm_nn but A is addressed column-wise (A[k*lda + i])
CM_AVX2 void gemm_tn_avx2(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                          float* C, int ldc, bool acc) {
    int j = 0;
    for (; j + 16 <= N; j += 16) {
        int i = 0;
        for (; i + 4 <= M; i += 4) {
            __m256 c00, c01, c10, c11, c20, c21, c30, c31;
            if (acc) {
                c00 = _mm256_loadu_ps(C + (i + 0) * ldc + j);
                c01 = _mm256_loadu_ps(C + (i + 0) * ldc + j + 8);
                c10 = _mm256_loadu_ps(C + (i + 1) * ldc + j);
                c11 = _mm256_loadu_ps(C + (i + 1) * ldc + j + 8);
                c20 = _mm256_loadu_ps(C + (i + 2) * ldc + j);
                c21 = _mm256_loadu_ps(C + (i + 2) * ldc + j + 8);
                c30 = _mm256_loadu_ps(C + (i + 3) * ldc + j);
                c31 = _mm256_loadu_ps(C + (i + 3) * ldc + j + 8);
            } else {
                c00 = c01 = c10 = c11 = _mm256_setzero_ps();
                c20 = c21 = c30 = c31 = _mm256_setzero_ps();
            }
            for (int k = 0; k < K; ++k) {
                const float* arow = A + static_cast<int64_t>(k) * lda + i;
                __m256 b0 = _mm256_loadu_ps(B + static_cast<int64_t>(k) * ldb + j);
                __m256 b1 = _mm256_loadu_ps(B + static_cast<int64_t>(k) * ldb + j + 8);
                __m256 a;
                a = _mm256_set1_ps(arow[0]);
                c00 = _mm256_fmadd_ps(a, b0, c00);
                c01 = _mm256_fmadd_ps(a, b1, c01);
                a = _mm256_set1_ps(arow[1]);
                c10 = _mm256_fmadd_ps(a, b0, c10);
                c11 = _mm256_fmadd_ps(a, b1, c11);
                a = _mm256_set1_ps(arow[2]);
                c20 = _mm256_fmadd_ps(a, b0, c20);
                c21 = _mm256_fmadd_ps(a, b1, c21);
                a = _mm256_set1_ps(arow[3]);
                c30 = _mm256_fmadd_ps(a, b0, c30);
                c31 = _mm256_fmadd_ps(a, b1, c31);
            }
            _mm256_storeu_ps(C + (i + 0) * ldc + j, c00);
            _mm256_storeu_ps(C + (i + 0) * ldc + j + 8, c01);
            _mm256_storeu_ps(C + (i + 1) * ldc + j, c10);
            _mm256_storeu_ps(C + (i + 1) * ldc + j + 8, c11);
            _mm256_storeu_ps(C + (i + 2) * ldc + j, c20);
            _mm256_storeu_ps(C + (i + 2) * ldc + j + 8, c21);
            _mm256_storeu_ps(C + (i + 3) * ldc + j, c30);
            _mm256_storeu_ps(C + (i + 3) * ldc + j + 8, c31);
        }
        for (; i < M; ++i) {
            __m256 c0, c1;
            if (acc) {
                c0 = _mm256_loadu_ps(C + i * ldc + j);
                c1 = _mm256_loadu_ps(C + i * ldc + j + 8);
            } else {
                c0 = c1 = _mm256_setzero_ps();
            }
            for (int k = 0; k < K; ++k) {
                __m256 a = _mm256_set1_ps(A[static_cast<int64_t>(k) * lda + i]);
                c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(B + static_cast<int64_t>(k) * ldb + j), c0);
                c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(B + static_cast<int64_t>(k) * ldb + j + 8), c1);
            }
            _mm256_storeu_ps(C + i * ldc + j, c0);
            _mm256_storeu_ps(C + i * ldc + j + 8, c1);
        }
    }
    for (; j < N; ++j) {
        for (int i = 0; i < M; ++i) {
            float s = acc ? C[i * ldc + j] : 0.f;
            for (int k = 0; k < K; ++k)
                s += A[static_cast<int64_t>(k) * lda + i] * B[static_cast<int64_t>(k) * ldb + j];
            C[i * ldc + j] = s;
        }
    }
}

CM_AVX2 void add_avx2(const float* a, const float* b, float* y, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

CM_AVX2 void mul_avx2(const float* a, const float* b, float* y, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

CM_AVX2 void axpy_avx2(float alpha, const float* x, float* y, int64_t n) {
    __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

CM_AVX2 void scale_avx2(float alpha, float* y, int64_t n) {
    __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(va, _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] *= alpha;
}

CM_AVX2 void relu_fwd_avx2(const float* x, float* y, int64_t n) {
    __m256 z = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(z, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = x[i] > 0.f ? x[i] : 0.f;
}

CM_AVX2 void relu_bwd_avx2(const float* y, const float* dy, float* dx, int64_t n) {
    __m256 z = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(y + i), z, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_and_ps(mask, _mm256_loadu_ps(dy + i)));
    }
    for (; i < n; ++i) dx[i] = y[i] > 0.f ? dy[i] : 0.f;
}

CM_AVX2 void lrelu_fwd_avx2(const float* x, float* y, int64_t n, float slope) {
    __m256 z = _mm256_setzero_ps();
    __m256 vs = _mm256_set1_ps(slope);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        __m256 mask = _mm256_cmp_ps(v, z, _CMP_GT_OQ);
        _mm256_storeu_ps(y + i, _mm256_blendv_ps(_mm256_mul_ps(vs, v), v, mask));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.f ? x[i] : slope * x[i];
}

CM_AVX2 void lrelu_bwd_avx2(const float* y, const float* dy, float* dx, int64_t n, float slope) {
    __m256 z = _mm256_setzero_ps();
    __m256 vs = _mm256_set1_ps(slope);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 g = _mm256_loadu_ps(dy + i);
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(y + i), z, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_blendv_ps(_mm256_mul_ps(vs, g), g, mask));
    }
    for (; i < n; ++i) dx[i] = y[i] > 0.f ? dy[i] : slope * dy[i];
}

// reductions widen to double lanes so the accumulator matches the reference
CM_AVX2 double sum_avx2(const float* x, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_cvtps_pd(_mm_loadu_ps(x + i)));
    double t[4];
    _mm256_storeu_pd(t, acc);
    double s = t[0] + t[1] + t[2] + t[3];
    for (; i < n; ++i) s += x[i];
    return s;
}

CM_AVX2 double sumsq_avx2(const float* x, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
        acc = _mm256_fmadd_pd(v, v, acc);
    }
    double t[4];
    _mm256_storeu_pd(t, acc);
    double s = t[0] + t[1] + t[2] + t[3];
    for (; i < n; ++i) s += static_cast<double>(x[i]) * x[i];
    return s;
}

CM_AVX2 double dot_avx2(const float* a, const float* b, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_cvtps_pd(_mm_loadu_ps(a + i));
        __m256d vb = _mm256_cvtps_pd(_mm_loadu_ps(b + i));
        acc = _mm256_fmadd_pd(va, vb, acc);
    }
    double t[4];
    _mm256_storeu_pd(t, acc);
    double s = t[0] + t[1] + t[2] + t[3];
    for (; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

#undef CM_AVX2

} // namespace canmap::kern
