#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "advlora/linalg.hpp"
#include "advlora/model.hpp"

namespace advlora {

enum class AttackKind { fgsm, pgd };

// Direction of one ascent step; auto_rule picks signed for linf sets and
// normalized for l2 sets.
enum class StepRule { auto_rule, signed_grad, normalized_grad, plain_grad };

struct AttackConfig {
    AttackKind kind = AttackKind::pgd;
    PerturbationSet set;
    double step_size = 0.0;
    std::size_t steps = 1;
    bool random_start = false;
    bool per_sample = true;
    StepRule rule = StepRule::auto_rule;
    std::uint64_t seed = 0;
};

// x + eps * sign(grad_x loss), per sample; linf sets only.
Matrix fgsm(const AdapterModel& model, const Batch& batch, const AttackConfig& cfg);

// k projected ascent steps from zero (or a seeded random start); returns
// perturbed inputs. per_sample=false keeps a single shared perturbation.
Matrix pgd(const AdapterModel& model, const Batch& batch, const AttackConfig& cfg);

Matrix run_attack(const AdapterModel& model, const Batch& batch,
                  const AttackConfig& cfg);

// Training-time ascent rate policy: adaptive coef/||delta|| before
// switch_iter, fixed afterwards; or a plain constant.
struct InnerPolicy {
    enum class Kind { adaptive, constant };
    Kind kind = Kind::adaptive;
    double coef = 0.05;
    std::size_t switch_iter = 300;
    double fixed_rate = 0.05;
    double norm_floor = 1e-8;
    double const_rate = 0.05;
};

double inner_rate(const InnerPolicy& policy, double delta_l2, std::size_t outer_iter);

// One Alg.-style ascent step on the shared perturbation: plain batch-mean
// gradient scaled by the policy rate, then projection. Returns the new
// perturbation and the rate used.
std::pair<std::vector<double>, double> inner_ascent_step(
    const AdapterModel& model, const Batch& batch, const std::vector<double>& delta,
    std::size_t outer_iter, const InnerPolicy& policy, const PerturbationSet& set,
    const PassOptions& opts);

} // namespace advlora
