#include "canmap/kernels.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace canmap::kern {

// AVX2 entry points (kernels_avx2.cpp)
void gemm_nn_avx2(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                  float* C, int ldc, bool acc);
void gemm_nt_avx2(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                  float* C, int ldc, bool acc);
void gemm_tn_avx2(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                  float* C, int ldc, bool acc);
void add_avx2(const float* a, const float* b, float* y, int64_t n);
void mul_avx2(const float* a, const float* b, float* y, int64_t n);
void axpy_avx2(float alpha, const float* x, float* y, int64_t n);
void scale_avx2(float alpha, float* y, int64_t n);
void relu_fwd_avx2(const float* x, float* y, int64_t n);
void relu_bwd_avx2(const float* y, const float* dy, float* dx, int64_t n);
void lrelu_fwd_avx2(const float* x, float* y, int64_t n, float slope);
void lrelu_bwd_avx2(const float* y, const float* dy, float* dx, int64_t n, float slope);
double sum_avx2(const float* x, int64_t n);
double sumsq_avx2(const float* x, int64_t n);
double dot_avx2(const float* a, const float* b, int64_t n);

namespace {

std::atomic<bool> g_force_scalar{false};
std::atomic<int> g_threads{1};

bool detect_avx2() {
#if defined(__GNUC__) || defined(__clang__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

// Minimal persistent pool. Jobs are (begin,end) ranges computed by a static
// split, so the output of a parallel_for never depends on scheduling.
class Pool {
public:
    ~Pool() { stop(); }

    void run(int nworkers, const std::function<void(int)>& job) {
        ensure(nworkers);
        {
            std::unique_lock<std::mutex> lk(m_);
            job_ = &job;
            njobs_ = nworkers;
            done_ = 0;
            ++epoch_;
        }
        cv_.notify_all();
        job(0); // caller takes slot 0
        std::unique_lock<std::mutex> lk(m_);
        done_cv_.wait(lk, [&] { return done_ == njobs_ - 1; });
        job_ = nullptr;
    }

private:
    void ensure(int nworkers) {
        std::unique_lock<std::mutex> lk(m_);
        while (static_cast<int>(workers_.size()) < nworkers - 1) {
            int slot = static_cast<int>(workers_.size()) + 1;
            workers_.emplace_back([this, slot] { worker_loop(slot); });
        }
    }

    void worker_loop(int slot) {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* job = nullptr;
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_.wait(lk, [&] { return quit_ || (epoch_ != seen && job_ && slot < njobs_); });
                if (quit_) return;
                seen = epoch_;
                job = job_;
                if (slot >= njobs_) continue;
            }
            (*job)(slot);
            {
                std::unique_lock<std::mutex> lk(m_);
                ++done_;
            }
            done_cv_.notify_one();
        }
    }

    void stop() {
        {
            std::unique_lock<std::mutex> lk(m_);
            quit_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    std::mutex m_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> workers_;
    const std::function<void(int)>* job_ = nullptr;
    uint64_t epoch_ = 0;
    int njobs_ = 0;
    int done_ = 0;
    bool quit_ = false;
};

Pool& pool() {
    static Pool p;
    return p;
}

} // namespace

bool avx2_available() {
    static const bool ok = detect_avx2();
    return ok;
}

void force_scalar(bool on) { g_force_scalar.store(on, std::memory_order_relaxed); }

bool using_avx2() {
    return avx2_available() && !g_force_scalar.load(std::memory_order_relaxed);
}

void set_threads(int n) { g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }
int threads() { return g_threads.load(std::memory_order_relaxed); }

void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int nt = threads();
    if (grain < 1) grain = 1;
    int64_t max_chunks = (n + grain - 1) / grain;
    if (max_chunks < nt) nt = static_cast<int>(max_chunks);
    if (nt <= 1) {
        fn(0, n);
        return;
    }
    const int64_t chunk = (n + nt - 1) / nt;
    std::function<void(int)> job = [&](int slot) {
        int64_t b = slot * chunk;
        int64_t e = b + chunk < n ? b + chunk : n;
        if (b < e) fn(b, e);
    };
    pool().run(nt, job);
}

// ---------------------------------------------------------------------------
// Scalar reference bodies for the float entry points. These mirror the
// primary templates; kept separate so dispatch can fall back explicitly.
// ---------------------------------------------------------------------------

namespace {

void gemm_nn_ref(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C,
                 int ldc, bool acc) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            float s = acc ? C[i * ldc + j] : 0.f;
            for (int k = 0; k < K; ++k) s += A[i * lda + k] * B[k * ldb + j];
            C[i * ldc + j] = s;
        }
}

void gemm_nt_ref(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C,
                 int ldc, bool acc) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            float s = acc ? C[i * ldc + j] : 0.f;
            for (int k = 0; k < K; ++k) s += A[i * lda + k] * B[j * ldb + k];
            C[i * ldc + j] = s;
        }
}

void gemm_tn_ref(int M, int N, int K, const float* A, int lda, const float* B, int ldb, float* C,
                 int ldc, bool acc) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            float s = acc ? C[i * ldc + j] : 0.f;
            for (int k = 0; k < K; ++k) s += A[k * lda + i] * B[k * ldb + j];
            C[i * ldc + j] = s;
        }
}

} // namespace

template <>
void gemm_nn<float>(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                    float* C, int ldc, bool acc) {
    const bool simd = using_avx2();
    // split over rows of C; each range writes a disjoint block
    parallel_for(M, 16, [&](int64_t b, int64_t e) {
        int m = static_cast<int>(e - b);
        if (simd)
            gemm_nn_avx2(m, N, K, A + b * lda, lda, B, ldb, C + b * ldc, ldc, acc);
        else
            gemm_nn_ref(m, N, K, A + b * lda, lda, B, ldb, C + b * ldc, ldc, acc);
    });
}

template <>
void gemm_nt<float>(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                    float* C, int ldc, bool acc) {
    const bool simd = using_avx2();
    parallel_for(M, 16, [&](int64_t b, int64_t e) {
        int m = static_cast<int>(e - b);
        if (simd)
            gemm_nt_avx2(m, N, K, A + b * lda, lda, B, ldb, C + b * ldc, ldc, acc);
        else
            gemm_nt_ref(m, N, K, A + b * lda, lda, B, ldb, C + b * ldc, ldc, acc);
    });
}

template <>
void gemm_tn<float>(int M, int N, int K, const float* A, int lda, const float* B, int ldb,
                    float* C, int ldc, bool acc) {
    if (using_avx2())
        gemm_tn_avx2(M, N, K, A, lda, B, ldb, C, ldc, acc);
    else
        gemm_tn_ref(M, N, K, A, lda, B, ldb, C, ldc, acc);
}

#define CANMAP_DISPATCH1(name, ...)        \
    if (using_avx2())                      \
        name##_avx2(__VA_ARGS__);          \
    else                                   \
        name##_ref(__VA_ARGS__)

namespace {
void add_ref(const float* a, const float* b, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
void mul_ref(const float* a, const float* b, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy_ref(float alpha, const float* x, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void scale_ref(float alpha, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] *= alpha;
}
void relu_fwd_ref(const float* x, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.f ? x[i] : 0.f;
}
void relu_bwd_ref(const float* y, const float* dy, float* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dx[i] = y[i] > 0.f ? dy[i] : 0.f;
}
void lrelu_fwd_ref(const float* x, float* y, int64_t n, float slope) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.f ? x[i] : slope * x[i];
}
void lrelu_bwd_ref(const float* y, const float* dy, float* dx, int64_t n, float slope) {
    for (int64_t i = 0; i < n; ++i) dx[i] = y[i] > 0.f ? dy[i] : slope * dy[i];
}
double sum_ref(const float* x, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += x[i];
    return s;
}
double sumsq_ref(const float* x, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * x[i];
    return s;
}
double dot_ref(const float* a, const float* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}
} // namespace

template <> void add<float>(const float* a, const float* b, float* y, int64_t n) {
    CANMAP_DISPATCH1(add, a, b, y, n);
}
template <> void mul<float>(const float* a, const float* b, float* y, int64_t n) {
    CANMAP_DISPATCH1(mul, a, b, y, n);
}
template <> void axpy<float>(float alpha, const float* x, float* y, int64_t n) {
    CANMAP_DISPATCH1(axpy, alpha, x, y, n);
}
template <> void scale<float>(float alpha, float* y, int64_t n) {
    CANMAP_DISPATCH1(scale, alpha, y, n);
}
template <> void relu_fwd<float>(const float* x, float* y, int64_t n) {
    CANMAP_DISPATCH1(relu_fwd, x, y, n);
}
template <> void relu_bwd<float>(const float* y, const float* dy, float* dx, int64_t n) {
    CANMAP_DISPATCH1(relu_bwd, y, dy, dx, n);
}
template <> void lrelu_fwd<float>(const float* x, float* y, int64_t n, float slope) {
    CANMAP_DISPATCH1(lrelu_fwd, x, y, n, slope);
}
template <> void lrelu_bwd<float>(const float* y, const float* dy, float* dx, int64_t n,
                                  float slope) {
    CANMAP_DISPATCH1(lrelu_bwd, y, dy, dx, n, slope);
}
template <> double sum<float>(const float* x, int64_t n) {
    return using_avx2() ? sum_avx2(x, n) : sum_ref(x, n);
}
template <> double sumsq<float>(const float* x, int64_t n) {
    return using_avx2() ? sumsq_avx2(x, n) : sumsq_ref(x, n);
}
template <> double dot<float>(const float* a, const float* b, int64_t n) {
    return using_avx2() ? dot_avx2(a, b, n) : dot_ref(a, b, n);
}

#undef CANMAP_DISPATCH1

} // namespace canmap::kern
