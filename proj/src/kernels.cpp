#include "chorus/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace chorus::kernels {

namespace {

int env_thread_cap() {
    const char* env = std::getenv("CHORUS_THREADS");
    if (!env) return 0;
    const int v = std::atoi(env);
    return v > 0 ? v : 0;
}

int detect_threads() {
#ifdef _OPENMP
    int n = omp_get_max_threads();
#else
    int n = 1;
#endif
    const int cap = env_thread_cap();
    if (cap > 0 && cap < n) n = cap;
    return n < 1 ? 1 : n;
}

std::atomic<int> g_max_threads{0};  // 0 = not yet resolved

}  // namespace

int max_threads() {
    int n = g_max_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = detect_threads();
        g_max_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

// n < 1 resets to auto-detection (OpenMP count capped by CHORUS_THREADS).
void set_max_threads(int n) { g_max_threads.store(n < 1 ? 0 : n, std::memory_order_relaxed); }

bool parallel_enabled() {
#ifdef _OPENMP
    // Inside an active parallel region we stay serial; nesting is not used.
    if (omp_in_parallel()) return false;
    return max_threads() > 1;
#else
    return false;
#endif
}

namespace {

inline double kernel_row_sum(const double* xi, const double* Y, int64_t n, int64_t d, double inv2s2) {
    double acc = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        const double* yj = Y + j * d;
        double sq = 0.0;
        for (int64_t k = 0; k < d; ++k) {
            const double diff = xi[k] - yj[k];
            sq += diff * diff;
        }
        acc += std::exp(-sq * inv2s2);
    }
    return acc;
}

}  // namespace

namespace serial {

double gauss_kernel_mean(const double* X, int64_t m, const double* Y, int64_t n,
                         int64_t d, double sigma) {
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> rows(static_cast<size_t>(m), 0.0);
    for (int64_t i = 0; i < m; ++i) rows[static_cast<size_t>(i)] = kernel_row_sum(X + i * d, Y, n, d, inv2s2);
    double total = 0.0;
    for (double r : rows) total += r;
    return total / (static_cast<double>(m) * static_cast<double>(n));
}

}  // namespace serial

namespace par {

double gauss_kernel_mean(const double* X, int64_t m, const double* Y, int64_t n,
                         int64_t d, double sigma) {
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> rows(static_cast<size_t>(m), 0.0);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int64_t i = 0; i < m; ++i) rows[static_cast<size_t>(i)] = kernel_row_sum(X + i * d, Y, n, d, inv2s2);
    double total = 0.0;
    for (double r : rows) total += r;
    return total / (static_cast<double>(m) * static_cast<double>(n));
}

}  // namespace par

}  // namespace chorus::kernels
