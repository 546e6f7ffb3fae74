#if defined(__aarch64__)

#include "advlora/kernels.hpp"

#include <arm_neon.h>

namespace advlora::kernels::detail {

namespace {

void add_neon(double* y, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += x[i];
}

void axpy_neon(double* y, double a, const double* x, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t vy = vld1q_f64(y + i);
        float64x2_t vx = vld1q_f64(x + i);
        vst1q_f64(y + i, vaddq_f64(vy, vmulq_f64(va, vx)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scal_neon(double* x, double a, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), va));
    for (; i < n; ++i) x[i] *= a;
}

void mul_neon(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void clamp_neon(double* x, double lo, double hi, std::size_t n) {
    const float64x2_t vlo = vdupq_n_f64(lo);
    const float64x2_t vhi = vdupq_n_f64(hi);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vld1q_f64(x + i);
        v = vminq_f64(vmaxq_f64(v, vlo), vhi);
        vst1q_f64(x + i, v);
    }
    for (; i < n; ++i) x[i] = x[i] < lo ? lo : (x[i] > hi ? hi : x[i]);
}

void sign_neon(double* out, const double* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
}

// Two vector accumulators emulate the 4-lane layout: acc01 holds lanes
// {0,1}, acc23 lanes {2,3}; reduced as (s0 + s1) + (s2 + s3).
double dot_neon(const double* x, const double* y, std::size_t n) {
    float64x2_t acc01 = vdupq_n_f64(0.0);
    float64x2_t acc23 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc01 = vaddq_f64(acc01, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
        acc23 = vaddq_f64(acc23, vmulq_f64(vld1q_f64(x + i + 2), vld1q_f64(y + i + 2)));
    }
    double total = (vgetq_lane_f64(acc01, 0) + vgetq_lane_f64(acc01, 1)) +
                   (vgetq_lane_f64(acc23, 0) + vgetq_lane_f64(acc23, 1));
    for (; i < n; ++i) total += x[i] * y[i];
    return total;
}

double sum_sq_neon(const double* x, std::size_t n) {
    float64x2_t acc01 = vdupq_n_f64(0.0);
    float64x2_t acc23 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float64x2_t v0 = vld1q_f64(x + i);
        float64x2_t v1 = vld1q_f64(x + i + 2);
        acc01 = vaddq_f64(acc01, vmulq_f64(v0, v0));
        acc23 = vaddq_f64(acc23, vmulq_f64(v1, v1));
    }
    double total = (vgetq_lane_f64(acc01, 0) + vgetq_lane_f64(acc01, 1)) +
                   (vgetq_lane_f64(acc23, 0) + vgetq_lane_f64(acc23, 1));
    for (; i < n; ++i) total += x[i] * x[i];
    return total;
}

} // namespace

const Ops& neon_ops() {
    static const Ops ops = {add_neon, axpy_neon, scal_neon, mul_neon,
                            clamp_neon, sign_neon, dot_neon, sum_sq_neon};
    return ops;
}

} // namespace advlora::kernels::detail

#endif
