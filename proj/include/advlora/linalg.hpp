#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "advlora/matrix.hpp"

namespace advlora {

enum class NormKind { linf, l2 };

// The admissible perturbation set: an l-inf box of half-width `radius`
// or an l2 ball of that radius.
struct PerturbationSet {
    NormKind norm_kind = NormKind::linf;
    double radius = 0.0;
    std::size_t dimension = 0;

    // l2 diameter of the set: 2r for the ball, 2r*sqrt(dim) for the box.
    double diameter() const;
    bool contains(std::span<const double> v, double tol = 1e-12) const;
    double norm(std::span<const double> v) const;
};

// Euclidean projection onto the set, in place.
void project(const PerturbationSet& set, std::vector<double>& v);
std::vector<double> projected(const PerturbationSet& set, std::vector<double> v);

enum class ScheduleKind { constant, cosine };

struct LrSchedule {
    ScheduleKind kind = ScheduleKind::constant;
    double base_rate = 0.0;
    std::size_t total_steps = 1;
    double floor = 0.0;
};

// Rate at `step`; steps past total_steps clamp to the floor.
double lr_at(const LrSchedule& schedule, std::size_t step);

// A ~ N(0, sigma^2) iid, B = 0 exactly; pure function of (shape, seed).
std::pair<Matrix, Matrix> init_lora_pair(std::size_t d, std::size_t k,
                                         std::size_t r, double sigma,
                                         std::uint64_t seed);

} // namespace advlora
