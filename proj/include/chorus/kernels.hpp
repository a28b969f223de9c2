#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace chorus::kernels {

// Worker cap: min(OpenMP max threads, CHORUS_THREADS if set). Cached on first use.
int max_threads();
void set_max_threads(int n);  // overrides the cap (tests, benchmarks)
bool parallel_enabled();

// Fixed reduction block size. Partials are always formed per block and combined
// in block order, so sums are independent of the thread count.
inline constexpr int64_t kReduceBlock = 1024;

// ---------------------------------------------------------------------------
// Serial reference kernels. The parallel versions below must produce
// bit-identical results; tests compare the two directly.
// ---------------------------------------------------------------------------
namespace serial {

// c[M,N] = a[M,K] * b[K,N]
template <class T>
void matmul(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const T* ar = a + i * K;
        T* cr = c + i * N;
        for (int64_t j = 0; j < N; ++j) cr[j] = T(0);
        for (int64_t k = 0; k < K; ++k) {
            const T av = ar[k];
            const T* br = b + k * N;
            for (int64_t j = 0; j < N; ++j) cr[j] += av * br[j];
        }
    }
}

// c[M,N] = a[M,K] * b[N,K]^T
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = T(0);
            const T* ar = a + i * K;
            const T* br = b + j * K;
            for (int64_t k = 0; k < K; ++k) acc += ar[k] * br[k];
            c[i * N + j] = acc;
        }
    }
}

// c[M,N] = a[K,M]^T * b[K,N]
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = T(0);
            for (int64_t k = 0; k < K; ++k) acc += a[k * M + i] * b[k * N + j];
            c[i * N + j] = acc;
        }
    }
}

inline int64_t conv_out_len(int64_t t, int64_t kw, int64_t stride) { return (t - kw) / stride + 1; }

// y[B,Co,To] = conv1d(x[B,Ci,Ti], w[Co,Ci,kw]) + bias[Co]; valid padding.
template <class T>
void conv1d_fwd(const T* x, const T* w, const T* bias, T* y,
                int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    const int64_t To = conv_out_len(Ti, kw, stride);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Co; ++co) {
            const T* wc = w + co * Ci * kw;
            T* yr = y + (b * Co + co) * To;
            for (int64_t t = 0; t < To; ++t) {
                T acc = bias ? bias[co] : T(0);
                const int64_t t0 = t * stride;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const T* xr = x + (b * Ci + ci) * Ti + t0;
                    const T* wk = wc + ci * kw;
                    for (int64_t k = 0; k < kw; ++k) acc += xr[k] * wk[k];
                }
                yr[t] = acc;
            }
        }
    }
}

// gx[B,Ci,Ti] += conv1d backward w.r.t. input. gx must be zeroed by the caller.
template <class T>
void conv1d_bwd_input(const T* gy, const T* w, T* gx,
                      int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    const int64_t To = conv_out_len(Ti, kw, stride);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            T* gxr = gx + (b * Ci + ci) * Ti;
            for (int64_t co = 0; co < Co; ++co) {
                const T* gyr = gy + (b * Co + co) * To;
                const T* wk = w + (co * Ci + ci) * kw;
                for (int64_t t = 0; t < To; ++t) {
                    const int64_t t0 = t * stride;
                    const T g = gyr[t];
                    for (int64_t k = 0; k < kw; ++k) gxr[t0 + k] += g * wk[k];
                }
            }
        }
    }
}

// gw[Co,Ci,kw] and gb[Co] accumulate; buffers zeroed by the caller.
template <class T>
void conv1d_bwd_params(const T* x, const T* gy, T* gw, T* gb,
                       int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    const int64_t To = conv_out_len(Ti, kw, stride);
    for (int64_t co = 0; co < Co; ++co) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            for (int64_t k = 0; k < kw; ++k) {
                T acc = T(0);
                for (int64_t b = 0; b < B; ++b) {
                    const T* xr = x + (b * Ci + ci) * Ti;
                    const T* gyr = gy + (b * Co + co) * To;
                    for (int64_t t = 0; t < To; ++t) acc += gyr[t] * xr[t * stride + k];
                }
                gw[(co * Ci + ci) * kw + k] += acc;
            }
        }
        if (gb) {
            T gbias = T(0);
            for (int64_t b = 0; b < B; ++b) {
                const T* gyr = gy + (b * Co + co) * To;
                for (int64_t t = 0; t < To; ++t) gbias += gyr[t];
            }
            gb[co] += gbias;
        }
    }
}

// Blocked sum; double accumulator per block, blocks combined in order.
template <class T>
double reduce_sum(const T* x, int64_t n) {
    const int64_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<double> partial(static_cast<size_t>(nblocks), 0.0);
    for (int64_t blk = 0; blk < nblocks; ++blk) {
        const int64_t lo = blk * kReduceBlock;
        const int64_t hi = std::min(n, lo + kReduceBlock);
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) acc += static_cast<double>(x[i]);
        partial[static_cast<size_t>(blk)] = acc;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

// Mean of the Gaussian kernel matrix k(x_i, y_j) = exp(-||x_i - y_j||^2 / (2 sigma^2)).
// Row partials in double, combined in row order.
double gauss_kernel_mean(const double* X, int64_t m, const double* Y, int64_t n,
                         int64_t d, double sigma);

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels: same per-element arithmetic and combine order as serial, so
// results are bit-identical for any thread count. Parallel loops own disjoint
// output slices; cross-slice sums always combine in index order.
// ---------------------------------------------------------------------------
namespace par {

template <class T>
void matmul(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int64_t i = 0; i < M; ++i) {
        const T* ar = a + i * K;
        T* cr = c + i * N;
        for (int64_t j = 0; j < N; ++j) cr[j] = T(0);
        for (int64_t k = 0; k < K; ++k) {
            const T av = ar[k];
            const T* br = b + k * N;
            for (int64_t j = 0; j < N; ++j) cr[j] += av * br[j];
        }
    }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = T(0);
            const T* ar = a + i * K;
            const T* br = b + j * K;
            for (int64_t k = 0; k < K; ++k) acc += ar[k] * br[k];
            c[i * N + j] = acc;
        }
    }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = T(0);
            for (int64_t k = 0; k < K; ++k) acc += a[k * M + i] * b[k * N + j];
            c[i * N + j] = acc;
        }
    }
}

template <class T>
void conv1d_fwd(const T* x, const T* w, const T* bias, T* y,
                int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    const int64_t To = serial::conv_out_len(Ti, kw, stride);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int64_t bc = 0; bc < B * Co; ++bc) {
        const int64_t b = bc / Co;
        const int64_t co = bc % Co;
        const T* wc = w + co * Ci * kw;
        T* yr = y + (b * Co + co) * To;
        for (int64_t t = 0; t < To; ++t) {
            T acc = bias ? bias[co] : T(0);
            const int64_t t0 = t * stride;
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const T* xr = x + (b * Ci + ci) * Ti + t0;
                const T* wk = wc + ci * kw;
                for (int64_t k = 0; k < kw; ++k) acc += xr[k] * wk[k];
            }
            yr[t] = acc;
        }
    }
}

template <class T>
void conv1d_bwd_input(const T* gy, const T* w, T* gx,
                      int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    const int64_t To = serial::conv_out_len(Ti, kw, stride);
    // Each (b, ci) slice of gx is owned by exactly one iteration.
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int64_t bc = 0; bc < B * Ci; ++bc) {
        const int64_t b = bc / Ci;
        const int64_t ci = bc % Ci;
        T* gxr = gx + (b * Ci + ci) * Ti;
        for (int64_t co = 0; co < Co; ++co) {
            const T* gyr = gy + (b * Co + co) * To;
            const T* wk = w + (co * Ci + ci) * kw;
            for (int64_t t = 0; t < To; ++t) {
                const int64_t t0 = t * stride;
                const T g = gyr[t];
                for (int64_t k = 0; k < kw; ++k) gxr[t0 + k] += g * wk[k];
            }
        }
    }
}

template <class T>
void conv1d_bwd_params(const T* x, const T* gy, T* gw, T* gb,
                       int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    const int64_t To = serial::conv_out_len(Ti, kw, stride);
    // Each co owns its gw/gb slice; batch sums run in index order inside.
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int64_t co = 0; co < Co; ++co) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            for (int64_t k = 0; k < kw; ++k) {
                T acc = T(0);
                for (int64_t b = 0; b < B; ++b) {
                    const T* xr = x + (b * Ci + ci) * Ti;
                    const T* gyr = gy + (b * Co + co) * To;
                    for (int64_t t = 0; t < To; ++t) acc += gyr[t] * xr[t * stride + k];
                }
                gw[(co * Ci + ci) * kw + k] += acc;
            }
        }
        if (gb) {
            T gbias = T(0);
            for (int64_t b = 0; b < B; ++b) {
                const T* gyr = gy + (b * Co + co) * To;
                for (int64_t t = 0; t < To; ++t) gbias += gyr[t];
            }
            gb[co] += gbias;
        }
    }
}

template <class T>
double reduce_sum(const T* x, int64_t n) {
    const int64_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<double> partial(static_cast<size_t>(nblocks), 0.0);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int64_t blk = 0; blk < nblocks; ++blk) {
        const int64_t lo = blk * kReduceBlock;
        const int64_t hi = std::min(n, lo + kReduceBlock);
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) acc += static_cast<double>(x[i]);
        partial[static_cast<size_t>(blk)] = acc;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double gauss_kernel_mean(const double* X, int64_t m, const double* Y, int64_t n,
                         int64_t d, double sigma);

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatchers used by the rest of the library.
// ---------------------------------------------------------------------------
template <class T>
void matmul(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    if (parallel_enabled()) par::matmul(a, b, c, M, K, N);
    else serial::matmul(a, b, c, M, K, N);
}
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    if (parallel_enabled()) par::matmul_nt(a, b, c, M, K, N);
    else serial::matmul_nt(a, b, c, M, K, N);
}
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    if (parallel_enabled()) par::matmul_tn(a, b, c, M, K, N);
    else serial::matmul_tn(a, b, c, M, K, N);
}
template <class T>
void conv1d_fwd(const T* x, const T* w, const T* bias, T* y,
                int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    if (parallel_enabled()) par::conv1d_fwd(x, w, bias, y, B, Ci, Ti, Co, kw, stride);
    else serial::conv1d_fwd(x, w, bias, y, B, Ci, Ti, Co, kw, stride);
}
template <class T>
void conv1d_bwd_input(const T* gy, const T* w, T* gx,
                      int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    if (parallel_enabled()) par::conv1d_bwd_input(gy, w, gx, B, Ci, Ti, Co, kw, stride);
    else serial::conv1d_bwd_input(gy, w, gx, B, Ci, Ti, Co, kw, stride);
}
template <class T>
void conv1d_bwd_params(const T* x, const T* gy, T* gw, T* gb,
                       int64_t B, int64_t Ci, int64_t Ti, int64_t Co, int64_t kw, int64_t stride) {
    if (parallel_enabled()) par::conv1d_bwd_params(x, gy, gw, gb, B, Ci, Ti, Co, kw, stride);
    else serial::conv1d_bwd_params(x, gy, gw, gb, B, Ci, Ti, Co, kw, stride);
}
template <class T>
double reduce_sum(const T* x, int64_t n) {
    return parallel_enabled() ? par::reduce_sum(x, n) : serial::reduce_sum(x, n);
}
inline double gauss_kernel_mean(const double* X, int64_t m, const double* Y, int64_t n,
                                int64_t d, double sigma) {
    return parallel_enabled() ? par::gauss_kernel_mean(X, m, Y, n, d, sigma)
                              : serial::gauss_kernel_mean(X, m, Y, n, d, sigma);
}

}  // namespace chorus::kernels
