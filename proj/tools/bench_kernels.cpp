// Serial vs OpenMP kernel timings; verifies outputs match bit-for-bit while
// measuring the speedup on this machine.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "chorus/kernels.hpp"
#include "chorus/rng.hpp"

namespace {

using chorus::kernels::max_threads;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<float> random_vec(size_t n, uint64_t tag) {
    std::vector<float> v(n);
    chorus::rng::RngState rs(42, chorus::rng::kData, tag);
    for (auto& x : v) x = static_cast<float>(rs.next_uniform(-1.0, 1.0));
    return v;
}

template <class F>
double best_of(int reps, F&& f) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = Clock::now();
        f();
        best = std::min(best, ms_since(t0));
    }
    return best;
}

bool bytes_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

int main() {
    std::printf("threads: %d\n", max_threads());
    std::printf("%-24s %12s %12s %9s %6s\n", "kernel", "serial(ms)", "openmp(ms)", "speedup", "equal");

    {
        const int64_t M = 384, K = 384, N = 384;
        const auto a = random_vec(static_cast<size_t>(M * K), 1);
        const auto b = random_vec(static_cast<size_t>(K * N), 2);
        std::vector<float> cs(static_cast<size_t>(M * N)), cp(cs.size());
        const double ts = best_of(3, [&] { chorus::kernels::serial::matmul(a.data(), b.data(), cs.data(), M, K, N); });
        const double tp = best_of(3, [&] { chorus::kernels::par::matmul(a.data(), b.data(), cp.data(), M, K, N); });
        std::printf("%-24s %12.3f %12.3f %8.2fx %6s\n", "matmul 384^3", ts, tp, ts / tp,
                    bytes_equal(cs, cp) ? "yes" : "NO");
    }
    {
        const int64_t B = 128, Ci = 3, Ti = 128, Co = 32, kw = 5, stride = 2;
        const auto x = random_vec(static_cast<size_t>(B * Ci * Ti), 3);
        const auto w = random_vec(static_cast<size_t>(Co * Ci * kw), 4);
        const auto bias = random_vec(static_cast<size_t>(Co), 5);
        const int64_t To = chorus::kernels::serial::conv_out_len(Ti, kw, stride);
        std::vector<float> ys(static_cast<size_t>(B * Co * To)), yp(ys.size());
        const double ts = best_of(5, [&] {
            chorus::kernels::serial::conv1d_fwd(x.data(), w.data(), bias.data(), ys.data(), B, Ci, Ti, Co, kw, stride);
        });
        const double tp = best_of(5, [&] {
            chorus::kernels::par::conv1d_fwd(x.data(), w.data(), bias.data(), yp.data(), B, Ci, Ti, Co, kw, stride);
        });
        std::printf("%-24s %12.3f %12.3f %8.2fx %6s\n", "conv1d fwd B=128", ts, tp, ts / tp,
                    bytes_equal(ys, yp) ? "yes" : "NO");
    }
    {
        const int64_t m = 1200, n = 1200, d = 18;
        std::vector<double> X(static_cast<size_t>(m * d)), Y(static_cast<size_t>(n * d));
        chorus::rng::RngState rs(7, chorus::rng::kData);
        for (auto& v : X) v = rs.next_uniform(-1.0, 1.0);
        for (auto& v : Y) v = rs.next_uniform(-1.0, 1.0);
        double rs_out = 0, rp_out = 0;
        const double ts = best_of(3, [&] { rs_out = chorus::kernels::serial::gauss_kernel_mean(X.data(), m, Y.data(), n, d, 1.3); });
        const double tp = best_of(3, [&] { rp_out = chorus::kernels::par::gauss_kernel_mean(X.data(), m, Y.data(), n, d, 1.3); });
        std::printf("%-24s %12.3f %12.3f %8.2fx %6s\n", "gauss_kernel_mean 1200", ts, tp, ts / tp,
                    rs_out == rp_out ? "yes" : "NO");
    }
    {
        const auto v = random_vec(1 << 22, 6);
        double ss = 0, sp = 0;
        const double ts = best_of(5, [&] { ss = chorus::kernels::serial::reduce_sum(v.data(), static_cast<int64_t>(v.size())); });
        const double tp = best_of(5, [&] { sp = chorus::kernels::par::reduce_sum(v.data(), static_cast<int64_t>(v.size())); });
        std::printf("%-24s %12.3f %12.3f %8.2fx %6s\n", "reduce_sum 4M", ts, tp, ts / tp,
                    ss == sp ? "yes" : "NO");
    }
    return 0;
}
