#pragma once

#include <cstdint>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#endif

namespace hr3d {

// Treat denormal floats as zero in the calling thread.  Gradients shrinking
// along deep backward chains otherwise drop into the hardware's denormal
// microcode and stall whole training steps; nothing the network computes is
// meaningful at the 1e-38 scale.
inline void flush_denormals_in_this_thread() {
#if defined(__x86_64__) || defined(__i386__)
    _mm_setcsr(_mm_getcsr() | 0x8040);  // FTZ | DAZ
#endif
}

// Fixed-order arithmetic primitives for the hot loops.  Reductions use
// eight interleaved partial sums folded in a fixed sequence, so results
// are reproducible bit-for-bit run to run while still vectorising without
// relaxed floating-point flags.

template <typename T>
inline void axpy(T* __restrict y, T a, const T* __restrict x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot_blocked(const T* __restrict a, const T* __restrict b, std::int64_t n) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    const std::int64_t n8 = n & ~std::int64_t(7);
    for (std::int64_t i = 0; i < n8; i += 8) {
        for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    }
    T tail = T(0);
    for (std::int64_t i = n8; i < n; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename T>
inline T sum_blocked(const T* a, std::int64_t n) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    const std::int64_t n8 = n & ~std::int64_t(7);
    for (std::int64_t i = 0; i < n8; i += 8) {
        for (int j = 0; j < 8; ++j) acc[j] += a[i + j];
    }
    T tail = T(0);
    for (std::int64_t i = n8; i < n; ++i) tail += a[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// R simultaneous dot products against one shared right-hand side.  Per row
// the lane assignment and fold order match dot_blocked exactly, so each
// result is bit-identical to a lone dot_blocked call; the independent rows
// just keep the multiply-add pipeline full.
template <int R, typename T>
inline void dot_blocked_rows(const T* const* rows, const T* __restrict b, std::int64_t n,
                             T* __restrict out) {
    T acc[R][8] = {};
    const std::int64_t n8 = n & ~std::int64_t(7);
    for (std::int64_t i = 0; i < n8; i += 8) {
        for (int r = 0; r < R; ++r) {
            const T* __restrict a = rows[r];
            for (int j = 0; j < 8; ++j) acc[r][j] += a[i + j] * b[i + j];
        }
    }
    for (int r = 0; r < R; ++r) {
        const T* __restrict a = rows[r];
        T tail = T(0);
        for (std::int64_t i = n8; i < n; ++i) tail += a[i] * b[i];
        out[r] = ((acc[r][0] + acc[r][1]) + (acc[r][2] + acc[r][3])) +
                 ((acc[r][4] + acc[r][5]) + (acc[r][6] + acc[r][7])) + tail;
    }
}

#if defined(__GNUC__) || defined(__clang__)
// Register-resident float path: one vector accumulator per row so the eight
// multiply-add chains stay independent.  Lane assignment and fold order are
// the same as the generic template.
namespace detail {
using V8f = float __attribute__((vector_size(32)));
inline V8f load8f(const float* p) {
    V8f v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
}
}  // namespace detail

template <int R>
inline void dot_blocked_rows(const float* const* rows, const float* __restrict b, std::int64_t n,
                             float* __restrict out) {
    detail::V8f acc[R] = {};
    const std::int64_t n8 = n & ~std::int64_t(7);
    for (std::int64_t i = 0; i < n8; i += 8) {
        const detail::V8f bv = detail::load8f(b + i);
        for (int r = 0; r < R; ++r) acc[r] += detail::load8f(rows[r] + i) * bv;
    }
    for (int r = 0; r < R; ++r) {
        const float* a = rows[r];
        float tail = 0.0f;
        for (std::int64_t i = n8; i < n; ++i) tail += a[i] * b[i];
        float lane[8];
        __builtin_memcpy(lane, &acc[r], sizeof(lane));
        out[r] = ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                 ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
    }
}
#endif

// Sum of squares with the same fixed blocking and fold order as dot_blocked.
template <typename T>
inline T sumsq_blocked(const T* a, std::int64_t n) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    const std::int64_t n8 = n & ~std::int64_t(7);
    for (std::int64_t i = 0; i < n8; i += 8) {
        for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * a[i + j];
    }
    T tail = T(0);
    for (std::int64_t i = n8; i < n; ++i) tail += a[i] * a[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

}  // namespace hr3d
