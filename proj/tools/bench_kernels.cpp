// Compares the OpenMP kernels against their serial reference implementations:
// verifies bitwise agreement, then reports throughput for a few shapes.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <random>

#include <omp.h>

#include "sli/core/kernels.hpp"

using namespace sli;
using clk = std::chrono::steady_clock;

namespace {

Mat random_mat(int rows, int cols, std::mt19937_64& rng) {
    Mat m(rows, cols);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

template <typename F>
double time_ms(F&& f, int reps) {
    f();  // warm up
    const auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) f();
    const auto t1 = clk::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void bench_shape(int m, int k, int n, std::mt19937_64& rng) {
    const Mat a = random_mat(m, k, rng);
    const Mat b = random_mat(k, n, rng);
    Mat out_par(m, n), out_ser(m, n);

    kernels::matmul(out_par, a, b);
    kernels::matmul_serial(out_ser, a, b);
    const bool ok = bitwise_equal(out_par, out_ser);

    const int reps = std::max(1, 200000000 / (m * k * n));
    const double t_ser = time_ms([&] { kernels::matmul_serial(out_ser, a, b); }, reps);
    const double t_par = time_ms([&] { kernels::matmul(out_par, a, b); }, reps);
    const double gflop = 2.0 * m * k * n / 1e9;
    std::printf("%4dx%-4dx%-4d  serial %8.3f ms (%6.2f GFLOP/s)  omp %8.3f ms (%6.2f GFLOP/s)  speedup %5.2fx  bitwise %s\n",
                m, k, n, t_ser, gflop / (t_ser / 1e3), t_par, gflop / (t_par / 1e3),
                t_ser / t_par, ok ? "OK" : "MISMATCH");
}

}  // namespace

int main() {
    std::mt19937_64 rng(42);
    std::printf("threads: %d\n", omp_get_max_threads());
    bench_shape(64, 64, 64, rng);
    bench_shape(128, 128, 128, rng);
    bench_shape(256, 256, 256, rng);
    bench_shape(512, 64, 512, rng);
    bench_shape(32, 512, 512, rng);
    return 0;
}
