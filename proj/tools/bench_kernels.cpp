// Benchmark comparing the OpenMP kernels against the serial references:
// dense gemm and batched bit-serial VMM.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "memtrain/crossbar.hpp"
#include "memtrain/kernels.hpp"

using namespace memtrain;

namespace {

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

template <typename F>
double time_ms(F&& fn, int reps) {
    fn(); // warm up
    const double t0 = now_ms();
    for (int i = 0; i < reps; ++i) fn();
    return (now_ms() - t0) / reps;
}

void bench_gemm() {
    const int m = 512, k = 288, n = 256;
    std::vector<float> a(static_cast<size_t>(m) * k), b(static_cast<size_t>(k) * n),
        c(static_cast<size_t>(m) * n);
    Rng rng(42);
    for (auto& v : a) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));

    const double serial =
        time_ms([&] { kern::ref::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false); }, 5);
    const double par =
        time_ms([&] { kern::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false); }, 5);
    const double gflop = 2.0 * m * k * n / 1e9;
    std::printf("gemm %dx%dx%d      serial %8.2f ms (%5.2f GFLOP/s)   omp %8.2f ms (%5.2f GFLOP/s)   speedup %.2fx\n",
                m, k, n, serial, gflop / serial * 1e3, par, gflop / par * 1e3, serial / par);
}

void bench_vmm() {
    TileConfig tc;
    tc.rows = 64;
    tc.cols = 64;
    tc.sigma_adc_ua = 0.549;
    DeviceConfig dc;
    Tile tile(tc);
    Rng rng(7);
    for (auto& g : tile.g_us) g = rng.uniform(10.0, 70.0);

    const int batch = 1024;
    std::vector<uint16_t> inputs(static_cast<size_t>(batch) * tc.rows);
    for (auto& v : inputs) v = static_cast<uint16_t>(rng.below(256));
    StreamKey key = root_key(1);

    const double serial = time_ms(
        [&] {
            tile_vmm_batch(tile, dc, inputs.data(), batch, VmmMode::Noisy, key.sub(1), key.sub(2),
                           false);
        },
        3);
    const double par = time_ms(
        [&] {
            tile_vmm_batch(tile, dc, inputs.data(), batch, VmmMode::Noisy, key.sub(1), key.sub(2),
                           true);
        },
        3);
    const double mops = static_cast<double>(batch) * tc.rows * tc.cols * tc.dac_bits / 2.0 / 1e6;
    std::printf("vmm  %d x (%dx%d)  serial %8.2f ms (%5.0f Mcell/s)   omp %8.2f ms (%5.0f Mcell/s)   speedup %.2fx\n",
                batch, tc.rows, tc.cols, serial, mops / serial * 1e3, par, mops / par * 1e3,
                serial / par);
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: disabled\n");
#endif
    bench_gemm();
    bench_vmm();
    return 0;
}
