#include "advlora/kernels.hpp"

#include <algorithm>
#include <atomic>

namespace advlora::kernels {

namespace detail {

namespace {

void add_scalar(double* y, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void axpy_scalar(double* y, double a, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scal_scalar(double* x, double a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void mul_scalar(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void clamp_scalar(double* x, double lo, double hi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::min(std::max(x[i], lo), hi);
}

void sign_scalar(double* out, const double* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
}

// 4-lane partial sums; lane j sees elements i == j mod 4. Matches the
// SIMD layouts so every backend reduces in the same order.
double dot_scalar(const double* x, const double* y, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += x[i] * y[i];
        s1 += x[i + 1] * y[i + 1];
        s2 += x[i + 2] * y[i + 2];
        s3 += x[i + 3] * y[i + 3];
    }
    double total = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) total += x[i] * y[i];
    return total;
}

double sum_sq_scalar(const double* x, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += x[i] * x[i];
        s1 += x[i + 1] * x[i + 1];
        s2 += x[i + 2] * x[i + 2];
        s3 += x[i + 3] * x[i + 3];
    }
    double total = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) total += x[i] * x[i];
    return total;
}

} // namespace

const Ops& scalar_ops() {
    static const Ops ops = {add_scalar, axpy_scalar, scal_scalar, mul_scalar,
                            clamp_scalar, sign_scalar, dot_scalar, sum_sq_scalar};
    return ops;
}

} // namespace detail

namespace {

detail::Ops g_ops = detail::scalar_ops();
std::atomic<Backend> g_backend{Backend::scalar};

Backend detect_backend() {
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2")) return Backend::avx2;
#elif defined(__aarch64__)
    return Backend::neon;
#endif
    return Backend::scalar;
}

struct Init {
    Init() { set_backend(detect_backend()); }
};
Init g_init;

} // namespace

bool backend_available(Backend b) {
    switch (b) {
    case Backend::scalar:
        return true;
    case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
        return __builtin_cpu_supports("avx2");
#else
        return false;
#endif
    case Backend::neon:
#if defined(__aarch64__)
        return true;
#else
        return false;
#endif
    }
    return false;
}

bool set_backend(Backend b) {
    if (!backend_available(b)) return false;
    switch (b) {
    case Backend::scalar:
        g_ops = detail::scalar_ops();
        break;
    case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
        g_ops = detail::avx2_ops();
#endif
        break;
    case Backend::neon:
#if defined(__aarch64__)
        g_ops = detail::neon_ops();
#endif
        break;
    }
    g_backend.store(b, std::memory_order_relaxed);
    return true;
}

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }

std::string_view backend_name(Backend b) {
    switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
    }
    return "unknown";
}

void add(double* y, const double* x, std::size_t n) { g_ops.add(y, x, n); }
void axpy(double* y, double a, const double* x, std::size_t n) { g_ops.axpy(y, a, x, n); }
void scal(double* x, double a, std::size_t n) { g_ops.scal(x, a, n); }
void mul(double* out, const double* a, const double* b, std::size_t n) { g_ops.mul(out, a, b, n); }
void clamp(double* x, double lo, double hi, std::size_t n) { g_ops.clamp(x, lo, hi, n); }
void sign(double* out, const double* g, std::size_t n) { g_ops.sign(out, g, n); }
double dot(const double* x, const double* y, std::size_t n) { return g_ops.dot(x, y, n); }
double sum_sq(const double* x, std::size_t n) { return g_ops.sum_sq(x, n); }

// The matrix products are built from the dispatched row kernels: the i-k-j
// loop accumulates along k in the same order on every backend.
void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p)
            g_ops.axpy(crow, arow[p], b + p * n, n);
    }
}

void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j)
            crow[j] = g_ops.dot(arow, b + j * k, k);
    }
}

void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i)
            g_ops.axpy(c + i * n, arow[i], brow, n);
    }
}

} // namespace advlora::kernels
