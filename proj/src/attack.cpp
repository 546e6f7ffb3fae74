#include "advlora/attack.hpp"

#include <cmath>

#include "advlora/errors.hpp"
#include "advlora/kernels.hpp"
#include "advlora/rng.hpp"

namespace advlora {

namespace {

StepRule resolve_rule(const AttackConfig& cfg) {
    if (cfg.rule != StepRule::auto_rule) return cfg.rule;
    return cfg.set.norm_kind == NormKind::linf ? StepRule::signed_grad
                                               : StepRule::normalized_grad;
}

// step = alpha * direction(g), written over g
void ascent_direction(std::vector<double>& g, StepRule rule) {
    switch (rule) {
    case StepRule::signed_grad:
        kernels::sign(g.data(), g.data(), g.size());
        break;
    case StepRule::normalized_grad: {
        const double n = l2_norm(g);
        if (n > 0.0) kernels::scal(g.data(), 1.0 / n, g.size());
        break;
    }
    case StepRule::plain_grad:
    case StepRule::auto_rule:
        break;
    }
}

std::vector<double> random_start_point(const PerturbationSet& set,
                                       std::uint64_t seed, std::uint64_t sample_id) {
    const std::uint64_t s = substream(seed, Stream::attack_start, sample_id);
    std::vector<double> d(set.dimension, 0.0);
    if (set.norm_kind == NormKind::linf) {
        for (std::size_t j = 0; j < d.size(); ++j)
            d[j] = set.radius * (2.0 * uniform01(s, j) - 1.0);
    } else {
        for (std::size_t j = 0; j < d.size(); ++j) d[j] = gaussian(s, j);
        const double n = l2_norm(d);
        const double u = uniform01(s, 2 * d.size() + 1);
        const double r = set.radius *
                         std::pow(u, 1.0 / static_cast<double>(d.size()));
        if (n > 0.0) kernels::scal(d.data(), r / n, d.size());
    }
    return d;
}

// Shared across fgsm / pgd: gradient of the batch-mean loss w.r.t. inputs.
Matrix input_gradients(const AdapterModel& model, const Batch& batch) {
    PassOptions opts;  // evaluation attacks run with dropout off
    return backward(model, batch, nullptr, opts).input_grads;
}

} // namespace

Matrix fgsm(const AdapterModel& model, const Batch& batch, const AttackConfig& cfg) {
    if (cfg.kind != AttackKind::fgsm)
        throw ConfigError("fgsm called with non-fgsm config");
    if (cfg.set.norm_kind != NormKind::linf)
        throw ConfigError("fgsm requires an linf perturbation set");
    if (cfg.steps != 1) throw ConfigError("fgsm implies steps == 1");

    Matrix grads = input_gradients(model, batch);
    Matrix adv = batch.inputs;
    std::vector<double> s(adv.cols());
    for (std::size_t i = 0; i < adv.rows(); ++i) {
        kernels::sign(s.data(), grads.row(i), s.size());
        kernels::axpy(adv.row(i), cfg.set.radius, s.data(), s.size());
    }
    return adv;
}

Matrix pgd(const AdapterModel& model, const Batch& batch, const AttackConfig& cfg) {
    if (cfg.kind != AttackKind::pgd)
        throw ConfigError("pgd called with non-pgd config");
    if (cfg.set.dimension != batch.inputs.cols())
        throw ContractError("pgd: set dimension does not match inputs");
    const StepRule rule = resolve_rule(cfg);
    const std::size_t m = batch.size();
    const std::size_t n = batch.inputs.cols();

    if (cfg.per_sample) {
        Matrix delta(m, n, 0.0);
        if (cfg.random_start) {
            for (std::size_t i = 0; i < m; ++i) {
                const std::uint64_t sid =
                    batch.sample_ids.empty() ? i : batch.sample_ids[i];
                auto d0 = random_start_point(cfg.set, cfg.seed, sid);
                std::copy(d0.begin(), d0.end(), delta.row(i));
            }
        }
        std::vector<double> row(n);
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            Batch perturbed = batch;
            for (std::size_t i = 0; i < m; ++i)
                kernels::add(perturbed.inputs.row(i), delta.row(i), n);
            Matrix grads = input_gradients(model, perturbed);
            for (std::size_t i = 0; i < m; ++i) {
                row.assign(grads.row(i), grads.row(i) + n);
                ascent_direction(row, rule);
                kernels::axpy(delta.row(i), cfg.step_size, row.data(), n);
                std::vector<double> drow(delta.row(i), delta.row(i) + n);
                project(cfg.set, drow);
                std::copy(drow.begin(), drow.end(), delta.row(i));
            }
        }
        Matrix adv = batch.inputs;
        for (std::size_t i = 0; i < m; ++i) kernels::add(adv.row(i), delta.row(i), n);
        return adv;
    }

    std::vector<double> delta(n, 0.0);
    if (cfg.random_start) delta = random_start_point(cfg.set, cfg.seed, 0);
    project(cfg.set, delta);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        PassOptions opts;
        BackwardResult res = backward(model, batch, &delta, opts);
        // grad_delta is already the batch-mean perturbation gradient
        std::vector<double> g = res.bundle.grad_delta;
        ascent_direction(g, rule);
        kernels::axpy(delta.data(), cfg.step_size, g.data(), n);
        project(cfg.set, delta);
    }
    Matrix adv = batch.inputs;
    for (std::size_t i = 0; i < m; ++i) kernels::add(adv.row(i), delta.data(), n);
    return adv;
}

Matrix run_attack(const AdapterModel& model, const Batch& batch,
                  const AttackConfig& cfg) {
    return cfg.kind == AttackKind::fgsm ? fgsm(model, batch, cfg)
                                        : pgd(model, batch, cfg);
}

double inner_rate(const InnerPolicy& policy, double delta_l2, std::size_t outer_iter) {
    if (policy.kind == InnerPolicy::Kind::constant) return policy.const_rate;
    if (outer_iter >= policy.switch_iter) return policy.fixed_rate;
    return policy.coef / std::max(delta_l2, policy.norm_floor);
}

std::pair<std::vector<double>, double> inner_ascent_step(
    const AdapterModel& model, const Batch& batch, const std::vector<double>& delta,
    std::size_t outer_iter, const InnerPolicy& policy, const PerturbationSet& set,
    const PassOptions& opts) {
    BackwardResult res = backward(model, batch, &delta, opts);
    std::vector<double> g = res.bundle.grad_delta;

    const double eta = inner_rate(policy, l2_norm(delta), outer_iter);
    std::vector<double> next = delta;
    kernels::axpy(next.data(), eta, g.data(), next.size());
    project(set, next);
    return {std::move(next), eta};
}

} // namespace advlora
