#pragma once

#include <cstddef>
#include <string_view>

namespace advlora::kernels {

enum class Backend { scalar, avx2, neon };

// Returns the backend selected at startup (best available for this CPU).
Backend active_backend();

// Forces a backend; returns false (and leaves the active one untouched)
// if the requested backend is not available on this machine.
bool set_backend(Backend b);

bool backend_available(Backend b);
std::string_view backend_name(Backend b);

// All kernels compute bit-identical results on every backend: reductions
// use a fixed 4-lane partial-sum layout (lane j accumulates elements
// i == j mod 4) reduced as (s0 + s1) + (s2 + s3), then the tail is folded
// in sequentially. No FMA contraction anywhere.

// y[i] += x[i]
void add(double* y, const double* x, std::size_t n);
// y[i] += a * x[i]
void axpy(double* y, double a, const double* x, std::size_t n);
// x[i] *= a
void scal(double* x, double a, std::size_t n);
// out[i] = a[i] * b[i]
void mul(double* out, const double* a, const double* b, std::size_t n);
// x[i] = min(max(x[i], lo), hi)
void clamp(double* x, double lo, double hi, std::size_t n);
// out[i] = sign(g[i]) with sign(0) = 0
void sign(double* out, const double* g, std::size_t n);

double dot(const double* x, const double* y, std::size_t n);
double sum_sq(const double* x, std::size_t n);

// C (m x n) = A (m x k) * B (k x n), row-major, C overwritten.
void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n);
// C (m x n) = A (m x k) * B^T, B given as (n x k) row-major.
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n);
// C (m x n) = A^T * B with A (k x m), B (k x n) row-major.
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n);

namespace detail {
struct Ops {
    void (*add)(double*, const double*, std::size_t);
    void (*axpy)(double*, double, const double*, std::size_t);
    void (*scal)(double*, double, std::size_t);
    void (*mul)(double*, const double*, const double*, std::size_t);
    void (*clamp)(double*, double, double, std::size_t);
    void (*sign)(double*, const double*, std::size_t);
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum_sq)(const double*, std::size_t);
};
const Ops& scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif
} // namespace detail

} // namespace advlora::kernels
