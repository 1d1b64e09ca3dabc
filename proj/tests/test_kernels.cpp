#include <doctest.h>

#include <cmath>
#include <vector>

#include "canmap/kernels.hpp"
#include "canmap/rng.hpp"

using namespace canmap;

namespace {

std::vector<float> random_vec(Rng& rng, int64_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

// run fn twice, once forced scalar, once dispatched; returns both outputs
template <class F>
std::pair<std::vector<float>, std::vector<float>> both_paths(int64_t out_n, F fn) {
    std::vector<float> scalar(out_n), simd(out_n);
    kern::force_scalar(true);
    fn(scalar.data());
    kern::force_scalar(false);
    fn(simd.data());
    return {scalar, simd};
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({std::abs(double(a[i])), std::abs(double(b[i])), 1.0});
        CHECK(std::abs(double(a[i]) - double(b[i])) / denom <= tol);
    }
}

} // namespace

TEST_CASE("gemm variants: scalar and simd paths agree on random shapes") {
    if (!kern::avx2_available()) return; // nothing to compare on this host
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        int M = 1 + static_cast<int>(rng.index(40));
        int N = 1 + static_cast<int>(rng.index(70));
        int K = 1 + static_cast<int>(rng.index(50));
        auto A = random_vec(rng, int64_t(M) * K);
        auto B_nn = random_vec(rng, int64_t(K) * N);
        auto B_nt = random_vec(rng, int64_t(N) * K);
        auto A_tn = random_vec(rng, int64_t(K) * M);
        auto C0 = random_vec(rng, int64_t(M) * N);
        bool acc = trial % 2 == 0;

        auto [s_nn, v_nn] = both_paths(int64_t(M) * N, [&](float* C) {
            std::copy(C0.begin(), C0.end(), C);
            kern::gemm_nn(M, N, K, A.data(), K, B_nn.data(), N, C, N, acc);
        });
        check_close(s_nn, v_nn, 2e-6);

        auto [s_nt, v_nt] = both_paths(int64_t(M) * N, [&](float* C) {
            std::copy(C0.begin(), C0.end(), C);
            kern::gemm_nt(M, N, K, A.data(), K, B_nt.data(), K, C, N, acc);
        });
        check_close(s_nt, v_nt, 2e-6);

        auto [s_tn, v_tn] = both_paths(int64_t(M) * N, [&](float* C) {
            std::copy(C0.begin(), C0.end(), C);
            kern::gemm_tn(M, N, K, A_tn.data(), M, B_nn.data(), N, C, N, acc);
        });
        check_close(s_tn, v_tn, 2e-6);
    }
    kern::force_scalar(false);
}

TEST_CASE("gemm_nn matches hand-computed 2x2 product") {
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    float A[4] = {1, 2, 3, 4};
    float B[4] = {5, 6, 7, 8};
    float C[4];
    kern::gemm_nn(2, 2, 2, A, 2, B, 2, C, 2, false);
    CHECK(C[0] == doctest::Approx(19));
    CHECK(C[1] == doctest::Approx(22));
    CHECK(C[2] == doctest::Approx(43));
    CHECK(C[3] == doctest::Approx(50));
}

TEST_CASE("elementwise kernels: exact equivalence across paths") {
    if (!kern::avx2_available()) return;
    Rng rng(7);
    for (int64_t n : {1, 7, 8, 9, 31, 256, 1000}) {
        auto a = random_vec(rng, n);
        auto b = random_vec(rng, n);
        float alpha = static_cast<float>(rng.uniform(-2, 2));

        auto [s1, v1] = both_paths(n, [&](float* y) { kern::add(a.data(), b.data(), y, n); });
        CHECK(s1 == v1);
        auto [s2, v2] = both_paths(n, [&](float* y) { kern::mul(a.data(), b.data(), y, n); });
        CHECK(s2 == v2);
        // axpy fuses the multiply-add on the simd path, so allow an ulp
        auto [s3, v3] = both_paths(n, [&](float* y) {
            std::copy(b.begin(), b.end(), y);
            kern::axpy(alpha, a.data(), y, n);
        });
        check_close(s3, v3, 1e-6);
        auto [s4, v4] = both_paths(n, [&](float* y) {
            std::copy(a.begin(), a.end(), y);
            kern::scale(alpha, y, n);
        });
        CHECK(s4 == v4);
        auto [s5, v5] = both_paths(n, [&](float* y) { kern::relu_fwd(a.data(), y, n); });
        CHECK(s5 == v5);
        auto [s6, v6] = both_paths(n, [&](float* y) { kern::lrelu_fwd(a.data(), y, n, 0.2f); });
        CHECK(s6 == v6);
        auto [s7, v7] =
            both_paths(n, [&](float* y) { kern::relu_bwd(a.data(), b.data(), y, n); });
        CHECK(s7 == v7);
        auto [s8, v8] =
            both_paths(n, [&](float* y) { kern::lrelu_bwd(a.data(), b.data(), y, n, 0.2f); });
        CHECK(s8 == v8);
    }
    kern::force_scalar(false);
}

TEST_CASE("reduction kernels agree across paths") {
    if (!kern::avx2_available()) return;
    Rng rng(11);
    for (int64_t n : {1, 5, 16, 100, 4097}) {
        auto a = random_vec(rng, n);
        auto b = random_vec(rng, n);
        kern::force_scalar(true);
        double s1 = kern::sum(a.data(), n), q1 = kern::sumsq(a.data(), n),
               d1 = kern::dot(a.data(), b.data(), n);
        kern::force_scalar(false);
        double s2 = kern::sum(a.data(), n), q2 = kern::sumsq(a.data(), n),
               d2 = kern::dot(a.data(), b.data(), n);
        CHECK(std::abs(s1 - s2) <= 1e-9 * std::max(1.0, std::abs(s1)));
        CHECK(std::abs(q1 - q2) <= 1e-9 * std::max(1.0, q1));
        CHECK(std::abs(d1 - d2) <= 1e-9 * std::max(1.0, std::abs(d1)));
    }
}

TEST_CASE("gemm is deterministic with multiple threads") {
    Rng rng(3);
    int M = 37, N = 53, K = 29;
    auto A = random_vec(rng, int64_t(M) * K);
    auto B = random_vec(rng, int64_t(K) * N);
    std::vector<float> C1(int64_t(M) * N), C2(C1.size());
    kern::gemm_nn(M, N, K, A.data(), K, B.data(), N, C1.data(), N, false);
    kern::set_threads(2);
    kern::gemm_nn(M, N, K, A.data(), K, B.data(), N, C2.data(), N, false);
    kern::set_threads(1);
    CHECK(C1 == C2);
}

TEST_CASE("im2col/col2im round trip accumulates kernel coverage counts") {
    // conv with all-ones image: col2im(im2col(x)) counts how many windows
    // cover each pixel; interior pixels of a 3x3/s1/p1 conv are covered 9x.
    int C = 1, H = 5, W = 5, k = 3;
    std::vector<float> img(H * W, 1.0f);
    int oh = kern::conv_out_dim(H, k, 1, 1), ow = kern::conv_out_dim(W, k, 1, 1);
    std::vector<float> col(size_t(C) * k * k * oh * ow);
    kern::im2col(img.data(), C, H, W, k, k, 1, 1, kern::Pad::zero, col.data());
    std::vector<float> back(H * W, 0.0f);
    kern::col2im(col.data(), C, H, W, k, k, 1, 1, kern::Pad::zero, back.data());
    CHECK(back[2 * W + 2] == doctest::Approx(9));
    CHECK(back[0] == doctest::Approx(4)); // corner
}

TEST_CASE("reflect padding mirrors interior pixels") {
    int H = 4, W = 4, k = 3;
    std::vector<float> img(H * W);
    for (int i = 0; i < H * W; ++i) img[i] = static_cast<float>(i);
    int oh = kern::conv_out_dim(H, k, 1, 1), ow = kern::conv_out_dim(W, k, 1, 1);
    std::vector<float> col(size_t(k) * k * oh * ow);
    kern::im2col(img.data(), 1, H, W, k, k, 1, 1, kern::Pad::reflect, col.data());
    // window at output (0,0), kernel tap (0,0) looks at (-1,-1) -> mirrored (1,1)
    CHECK(col[0] == img[1 * W + 1]);
}

TEST_CASE("bilinear resize: identity at same size, constant preserved") {
    Rng rng(5);
    auto img = random_vec(rng, 16 * 16);
    std::vector<float> out(16 * 16);
    kern::bilinear_resize(img.data(), 16, 16, out.data(), 16, 16);
    CHECK(out == img);

    std::vector<float> c(10 * 10, 0.7f), up(32 * 32);
    kern::bilinear_resize(c.data(), 10, 10, up.data(), 32, 32);
    for (float v : up) CHECK(v == doctest::Approx(0.7f));
}

TEST_CASE("maxpool 2x2 picks maxima and routes gradients to them") {
    // 4x4 plane, distinct values
    std::vector<float> x = {1, 2, 5, 4,  //
                            3, 0, 1, 2,  //
                            9, 8, 7, 6,  //
                            0, 1, 2, 3};
    std::vector<float> y(4);
    std::vector<int32_t> idx(4);
    kern::maxpool2x2_fwd(x.data(), 1, 4, 4, y.data(), idx.data());
    CHECK(y[0] == 3);
    CHECK(y[1] == 5);
    CHECK(y[2] == 9);
    CHECK(y[3] == 7);
    std::vector<float> dy = {1, 1, 1, 1}, dx(16);
    kern::maxpool2x2_bwd(dy.data(), 1, 4, 4, idx.data(), dx.data());
    CHECK(dx[1 * 4 + 0] == 1); // 3
    CHECK(dx[0 * 4 + 2] == 1); // 5
    CHECK(dx[2 * 4 + 0] == 1); // 9
    CHECK(dx[2 * 4 + 2] == 1); // 7
}
