#if defined(__x86_64__) || defined(_M_X64)

#include "advlora/kernels.hpp"

#include <immintrin.h>

namespace advlora::kernels::detail {

namespace {

void add_avx2(double* y, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, vx));
    }
    for (; i < n; ++i) y[i] += x[i];
}

void axpy_avx2(double* y, double a, const double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, vx)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scal_avx2(double* x, double a, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
    for (; i < n; ++i) x[i] *= a;
}

void mul_avx2(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i,
                         _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void clamp_avx2(double* x, double lo, double hi, std::size_t n) {
    const __m256d vlo = _mm256_set1_pd(lo);
    const __m256d vhi = _mm256_set1_pd(hi);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(x + i);
        v = _mm256_min_pd(_mm256_max_pd(v, vlo), vhi);
        _mm256_storeu_pd(x + i, v);
    }
    for (; i < n; ++i) x[i] = x[i] < lo ? lo : (x[i] > hi ? hi : x[i]);
}

void sign_avx2(double* out, const double* g, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d neg = _mm256_set1_pd(-1.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(g + i);
        __m256d pos = _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_GT_OQ), one);
        __m256d negv = _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_LT_OQ), neg);
        _mm256_storeu_pd(out + i, _mm256_or_pd(pos, negv));
    }
    for (; i < n; ++i)
        out[i] = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
}

// Lane j of acc holds the partial sum of elements i == j mod 4; reduce as
// (s0 + s1) + (s2 + s3) to match the scalar reference bit for bit.
double reduce4(__m256d acc) {
    alignas(32) double s[4];
    _mm256_store_pd(s, acc);
    return (s[0] + s[1]) + (s[2] + s[3]);
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_loadu_pd(x + i);
        __m256d vy = _mm256_loadu_pd(y + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(vx, vy));
    }
    double total = reduce4(acc);
    for (; i < n; ++i) total += x[i] * y[i];
    return total;
}

double sum_sq_avx2(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_loadu_pd(x + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(vx, vx));
    }
    double total = reduce4(acc);
    for (; i < n; ++i) total += x[i] * x[i];
    return total;
}

} // namespace

const Ops& avx2_ops() {
    static const Ops ops = {add_avx2, axpy_avx2, scal_avx2, mul_avx2,
                            clamp_avx2, sign_avx2, dot_avx2, sum_sq_avx2};
    return ops;
}

} // namespace advlora::kernels::detail

#endif
