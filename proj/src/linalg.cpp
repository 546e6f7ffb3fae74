#include "advlora/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "advlora/errors.hpp"
#include "advlora/kernels.hpp"

namespace advlora {

double PerturbationSet::diameter() const {
    if (norm_kind == NormKind::l2) return 2.0 * radius;
    return 2.0 * radius * std::sqrt(static_cast<double>(dimension));
}

double PerturbationSet::norm(std::span<const double> v) const {
    if (norm_kind == NormKind::l2)
        return std::sqrt(kernels::sum_sq(v.data(), v.size()));
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

bool PerturbationSet::contains(std::span<const double> v, double tol) const {
    return norm(v) <= radius + tol;
}

void project(const PerturbationSet& set, std::vector<double>& v) {
    if (v.size() != set.dimension)
        throw ContractError("project: vector dimension " + std::to_string(v.size()) +
                            " does not match set dimension " +
                            std::to_string(set.dimension));
    if (set.norm_kind == NormKind::linf) {
        kernels::clamp(v.data(), -set.radius, set.radius, v.size());
        return;
    }
    const double n = std::sqrt(kernels::sum_sq(v.data(), v.size()));
    if (n > set.radius && n > 0.0)
        kernels::scal(v.data(), set.radius / n, v.size());
}

std::vector<double> projected(const PerturbationSet& set, std::vector<double> v) {
    project(set, v);
    return v;
}

double lr_at(const LrSchedule& schedule, std::size_t step) {
    if (schedule.kind == ScheduleKind::constant) return schedule.base_rate;
    if (step >= schedule.total_steps) return schedule.floor;
    const double progress =
        static_cast<double>(step) / static_cast<double>(schedule.total_steps);
    return schedule.floor + (schedule.base_rate - schedule.floor) * 0.5 *
                                (1.0 + std::cos(std::numbers::pi * progress));
}

std::pair<Matrix, Matrix> init_lora_pair(std::size_t d, std::size_t k,
                                         std::size_t r, double sigma,
                                         std::uint64_t seed) {
    if (r > std::min(d, k))
        throw ContractError("init_lora_pair: rank " + std::to_string(r) +
                            " exceeds min(d, k) = " + std::to_string(std::min(d, k)));
    Matrix a = Matrix::gaussian(r, k, sigma, seed);
    Matrix b(d, r, 0.0);
    return {std::move(a), std::move(b)};
}

} // namespace advlora
