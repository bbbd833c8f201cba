#pragma once

#include <atomic>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace remo::kernels {

// Global thread budget for the compute kernels. 1 = fully serial.
// Parallel paths partition output rows, so every element is accumulated in
// the same order as the serial reference and results are bit-identical.
inline std::atomic<int>& thread_count() {
    static std::atomic<int> n{1};
    return n;
}
inline void set_threads(int n) { thread_count().store(n < 1 ? 1 : n); }
inline int threads() { return thread_count().load(); }

inline bool parallel_worth(size_t flops) { return threads() > 1 && flops > (1u << 16); }

// y = a(M,K) * b(K,N)
template <class T>
void matmul_serial(const T* a, const T* b, T* y, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        T* yr = y + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) yr[n] = T(0);
        const T* ar = a + static_cast<size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const T amk = ar[k];
            const T* br = b + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) yr[n] += amk * br[n];
        }
    }
}

template <class T>
void matmul(const T* a, const T* b, T* y, int M, int K, int N) {
#ifdef _OPENMP
    if (parallel_worth(static_cast<size_t>(M) * K * N)) {
#pragma omp parallel for schedule(static) num_threads(threads())
        for (int m = 0; m < M; ++m)
            matmul_serial(a + static_cast<size_t>(m) * K, b, y + static_cast<size_t>(m) * N, 1, K, N);
        return;
    }
#endif
    matmul_serial(a, b, y, M, K, N);
}

// y = a(M,K) * b(N,K)^T
template <class T>
void matmul_nt_serial(const T* a, const T* b, T* y, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const T* ar = a + static_cast<size_t>(m) * K;
        T* yr = y + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            const T* br = b + static_cast<size_t>(n) * K;
            T acc = T(0);
            for (int k = 0; k < K; ++k) acc += ar[k] * br[k];
            yr[n] = acc;
        }
    }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* y, int M, int K, int N) {
#ifdef _OPENMP
    if (parallel_worth(static_cast<size_t>(M) * K * N)) {
#pragma omp parallel for schedule(static) num_threads(threads())
        for (int m = 0; m < M; ++m)
            matmul_nt_serial(a + static_cast<size_t>(m) * K, b, y + static_cast<size_t>(m) * N, 1, K, N);
        return;
    }
#endif
    matmul_nt_serial(a, b, y, M, K, N);
}

// y = a(K,M)^T * b(K,N)
template <class T>
void matmul_tn_serial(const T* a, const T* b, T* y, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        T* yr = y + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) yr[n] = T(0);
        for (int k = 0; k < K; ++k) {
            const T akm = a[static_cast<size_t>(k) * M + m];
            const T* br = b + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) yr[n] += akm * br[n];
        }
    }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* y, int M, int K, int N) {
#ifdef _OPENMP
    if (parallel_worth(static_cast<size_t>(M) * K * N)) {
#pragma omp parallel for schedule(static) num_threads(threads())
        for (int m = 0; m < M; ++m) {
            T* yr = y + static_cast<size_t>(m) * N;
            for (int n = 0; n < N; ++n) yr[n] = T(0);
            for (int k = 0; k < K; ++k) {
                const T akm = a[static_cast<size_t>(k) * M + m];
                const T* br = b + static_cast<size_t>(k) * N;
                for (int n = 0; n < N; ++n) yr[n] += akm * br[n];
            }
        }
        return;
    }
#endif
    matmul_tn_serial(a, b, y, M, K, N);
}

// Frame mixing: x is B groups of Nin rows with C columns, y gets B groups of
// Nout rows. y[b,m,:] = sum_n w[m,n] * x[b,n,:]. This is the temporal FC /
// DCT workhorse of the motion predictor.
template <class T>
void mix_rows_serial(const T* w, const T* x, T* y, int B, int Nout, int Nin, int C) {
    for (int b = 0; b < B; ++b) {
        const T* xb = x + static_cast<size_t>(b) * Nin * C;
        T* yb = y + static_cast<size_t>(b) * Nout * C;
        for (int m = 0; m < Nout; ++m) {
            T* yr = yb + static_cast<size_t>(m) * C;
            for (int c = 0; c < C; ++c) yr[c] = T(0);
            const T* wr = w + static_cast<size_t>(m) * Nin;
            for (int n = 0; n < Nin; ++n) {
                const T wmn = wr[n];
                const T* xr = xb + static_cast<size_t>(n) * C;
                for (int c = 0; c < C; ++c) yr[c] += wmn * xr[c];
            }
        }
    }
}

template <class T>
void mix_rows(const T* w, const T* x, T* y, int B, int Nout, int Nin, int C) {
#ifdef _OPENMP
    if (parallel_worth(static_cast<size_t>(B) * Nout * Nin * C)) {
#pragma omp parallel for schedule(static) num_threads(threads())
        for (int b = 0; b < B; ++b)
            mix_rows_serial(w, x + static_cast<size_t>(b) * Nin * C,
                            y + static_cast<size_t>(b) * Nout * C, 1, Nout, Nin, C);
        return;
    }
#endif
    mix_rows_serial(w, x, y, B, Nout, Nin, C);
}

// dW[m,n] = sum_b dot(dy[b,m,:], x[b,n,:]); reduction order fixed per (m,n).
template <class T>
void mix_rows_accum_w_serial(const T* dy, const T* x, T* dw, int B, int Nout, int Nin, int C) {
    for (int m = 0; m < Nout; ++m) {
        T* dwr = dw + static_cast<size_t>(m) * Nin;
        for (int n = 0; n < Nin; ++n) {
            T acc = T(0);
            for (int b = 0; b < B; ++b) {
                const T* dyr = dy + (static_cast<size_t>(b) * Nout + m) * C;
                const T* xr = x + (static_cast<size_t>(b) * Nin + n) * C;
                for (int c = 0; c < C; ++c) acc += dyr[c] * xr[c];
            }
            dwr[n] += acc;
        }
    }
}

template <class T>
void mix_rows_accum_w(const T* dy, const T* x, T* dw, int B, int Nout, int Nin, int C) {
#ifdef _OPENMP
    if (parallel_worth(static_cast<size_t>(B) * Nout * Nin * C)) {
#pragma omp parallel for schedule(static) num_threads(threads())
        for (int m = 0; m < Nout; ++m) {
            T* dwr = dw + static_cast<size_t>(m) * Nin;
            for (int n = 0; n < Nin; ++n) {
                T acc = T(0);
                for (int b = 0; b < B; ++b) {
                    const T* dyr = dy + (static_cast<size_t>(b) * Nout + m) * C;
                    const T* xr = x + (static_cast<size_t>(b) * Nin + n) * C;
                    for (int c = 0; c < C; ++c) acc += dyr[c] * xr[c];
                }
                dwr[n] += acc;
            }
        }
        return;
    }
#endif
    mix_rows_accum_w_serial(dy, x, dw, B, Nout, Nin, C);
}

}  // namespace remo::kernels
