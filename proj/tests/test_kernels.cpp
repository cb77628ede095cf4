#include <doctest.h>

#include <vector>

#include "memtrain/kernels.hpp"
#include "memtrain/rng.hpp"

using namespace memtrain;

namespace {
std::vector<float> random_vec(size_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng = root_key(seed).rng();
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}
} // namespace

TEST_SUITE("kernels") {

TEST_CASE("parallel gemm variants are bit-identical to the serial references") {
    const int m = 37, k = 53, n = 29;
    auto a = random_vec(static_cast<size_t>(m) * k, 1);
    auto b = random_vec(static_cast<size_t>(k) * n, 2);
    auto bt = random_vec(static_cast<size_t>(n) * k, 3);
    auto at = random_vec(static_cast<size_t>(k) * m, 4);

    std::vector<float> c1(static_cast<size_t>(m) * n), c2(c1);
    kern::gemm_nn(a.data(), b.data(), c1.data(), m, k, n, false);
    kern::ref::gemm_nn(a.data(), b.data(), c2.data(), m, k, n, false);
    CHECK(c1 == c2);

    kern::gemm_tn(at.data(), b.data(), c1.data(), m, k, n, false);
    kern::ref::gemm_tn(at.data(), b.data(), c2.data(), m, k, n, false);
    CHECK(c1 == c2);

    kern::gemm_nt(a.data(), bt.data(), c1.data(), m, k, n, false);
    kern::ref::gemm_nt(a.data(), bt.data(), c1.data(), m, k, n, false);
    kern::ref::gemm_nt(a.data(), bt.data(), c2.data(), m, k, n, false);
    CHECK(c1 == c2);
}

TEST_CASE("gemm against a tiny hand example") {
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    std::vector<float> a{1, 2, 3, 4}, b{5, 6, 7, 8}, c(4);
    kern::gemm_nn(a.data(), b.data(), c.data(), 2, 2, 2, false);
    CHECK(c == std::vector<float>{19, 22, 43, 50});

    // accumulate adds on top
    kern::gemm_nn(a.data(), b.data(), c.data(), 2, 2, 2, true);
    CHECK(c == std::vector<float>{38, 44, 86, 100});
}

TEST_CASE("transposed gemms agree with explicit transposition") {
    const int m = 11, k = 17, n = 13;
    auto at = random_vec(static_cast<size_t>(k) * m, 5);
    auto b = random_vec(static_cast<size_t>(k) * n, 6);
    // build a = at^T
    std::vector<float> a(static_cast<size_t>(m) * k);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p)
            a[static_cast<size_t>(i) * k + p] = at[static_cast<size_t>(p) * m + i];

    std::vector<float> c1(static_cast<size_t>(m) * n), c2(c1);
    kern::gemm_tn(at.data(), b.data(), c1.data(), m, k, n, false);
    kern::gemm_nn(a.data(), b.data(), c2.data(), m, k, n, false);
    for (size_t i = 0; i < c1.size(); ++i)
        CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-5));
}

TEST_CASE("im2col/col2im adjoint identity") {
    // <im2col(x), y> == <x, col2im(y)> for random x, y
    const int C = 3, H = 7, W = 6, k = 3, stride = 2, pad = 1;
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    const int rows = OH * OW, fan = C * k * k;

    auto x = random_vec(static_cast<size_t>(C) * H * W, 7);
    auto y = random_vec(static_cast<size_t>(rows) * fan, 8);
    std::vector<float> cols(static_cast<size_t>(rows) * fan);
    kern::im2col_into(x.data(), C, H, W, k, stride, pad, cols.data());
    std::vector<float> back(x.size(), 0.0f);
    kern::col2im_into(y.data(), C, H, W, k, stride, pad, back.data());

    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < cols.size(); ++i) lhs += static_cast<double>(cols[i]) * y[i];
    for (size_t i = 0; i < x.size(); ++i) rhs += static_cast<double>(x[i]) * back[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("maxpool forward/backward") {
    const int C = 2, H = 4, W = 4;
    std::vector<float> x(static_cast<size_t>(C) * H * W);
    for (size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i % 7);
    std::vector<float> out(static_cast<size_t>(C) * 2 * 2);
    std::vector<int32_t> argmax(out.size());
    kern::maxpool_fwd(x.data(), C, H, W, 2, 2, out.data(), argmax.data());
    for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == x[static_cast<size_t>(argmax[i])]);

    std::vector<float> g(out.size(), 1.0f), dx(x.size(), 0.0f);
    kern::maxpool_bwd(g.data(), C, 2, 2, argmax.data(), dx.data());
    float total = 0.0f;
    for (float v : dx) total += v;
    CHECK(total == doctest::Approx(static_cast<float>(out.size())));
}

} // TEST_SUITE
