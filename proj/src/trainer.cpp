#include "advlora/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include "advlora/errors.hpp"
#include "advlora/kernels.hpp"
#include "advlora/numio.hpp"
#include "advlora/rng.hpp"

namespace advlora {

namespace {

std::vector<AdapterUnit*> enabled_units(AdapterModel& model) {
    std::vector<AdapterUnit*> units;
    for (LoRALinear& layer : model.layers) {
        if (layer.q.enabled) units.push_back(&layer.q);
        if (layer.v && layer.v->enabled) units.push_back(&layer.v.value());
    }
    return units;
}

std::vector<std::string> norm_labels(const AdapterModel& model) {
    std::vector<std::string> labels;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const LoRALinear& layer = model.layers[l];
        const bool qv = layer.v.has_value();
        if (layer.q.enabled) {
            const std::string tag = std::to_string(l) + (qv ? "q" : "");
            labels.push_back("a" + tag);
            labels.push_back("b" + tag);
        }
        if (layer.v && layer.v->enabled) {
            labels.push_back("a" + std::to_string(l) + "v");
            labels.push_back("b" + std::to_string(l) + "v");
        }
    }
    return labels;
}

void clip_frobenius(Matrix& m, double bound) {
    if (bound <= 0.0) return;
    const double n = frobenius_norm(m);
    if (n > bound) m *= bound / n;
}

Batch gather_batch(const Dataset& data, const std::vector<std::size_t>& order,
                   std::size_t start, std::size_t count) {
    Batch batch;
    batch.inputs = Matrix(count, data.dim());
    batch.labels.reserve(count);
    batch.sample_ids.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t row = order[start + i];
        std::copy_n(data.features.row(row), data.dim(), batch.inputs.row(i));
        batch.labels.push_back(data.labels[row]);
        batch.sample_ids.push_back(row);
    }
    return batch;
}

} // namespace

std::string TrainHistory::csv_header() const {
    std::string h = "t,loss,delta_l2,eta_delta,eta_w";
    for (const std::string& label : norm_labels) h += "," + label;
    return h + "\n";
}

std::string TrainHistory::csv_row(const TrainRecord& r) const {
    std::ostringstream os;
    os << r.iteration << ',' << format_double(r.loss) << ','
       << format_double(r.delta_l2) << ',' << format_double(r.eta_delta) << ','
       << format_double(r.eta_w);
    for (double v : r.adapter_norms) os << ',' << format_double(v);
    os << "\n";
    return os.str();
}

TrainHistory train(AdapterModel& model, const Dataset& data, const TrainConfig& cfg,
                   const HistorySink& sink) {
    if (data.size() == 0) throw ConfigError("train: dataset is empty");
    if (cfg.batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (cfg.adversarial && cfg.tau == 0)
        throw ConfigError("train: adversarial mode needs tau >= 1");
    auto units = enabled_units(model);
    if (units.empty()) throw ConfigError("train: model has no enabled adapters");

    PerturbationSet set = cfg.set;
    set.dimension = model.input_dim;

    TrainHistory history;
    history.norm_labels = norm_labels(model);

    std::vector<double> delta(model.input_dim, 0.0);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const auto t0 = std::chrono::steady_clock::now();
    std::size_t t = 0;
    for (std::size_t epoch = 0; t < cfg.total_iterations; ++epoch) {
        CounterRng shuffle_rng(substream(cfg.seed, Stream::shuffle, epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        for (std::size_t start = 0; start < order.size() && t < cfg.total_iterations;
             start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            Batch batch = gather_batch(data, order, start, count);
            ++t;

            PassOptions opts{true, cfg.seed, t};
            double eta_delta_used = 0.0;
            if (cfg.adversarial) {
                if (cfg.delta_mode == DeltaMode::reset_per_batch)
                    std::fill(delta.begin(), delta.end(), 0.0);
                for (std::size_t j = 0; j < cfg.tau; ++j) {
                    auto [next, eta] =
                        inner_ascent_step(model, batch, delta, t, cfg.inner_policy,
                                          set, opts);
                    delta = std::move(next);
                    eta_delta_used = eta;
                }
            }

            BackwardResult res = backward(model, batch, &delta, opts);
            if (!std::isfinite(res.bundle.loss)) {
                history.aborted = true;
                history.abort_reason = "non-finite loss at iteration " +
                                       std::to_string(t);
                return history;
            }

            // lines 8-9: both updates from one backward pass at (W_{t-1}, delta_t)
            const double eta_w = lr_at(cfg.eta_w, t - 1);
            for (const UnitGrads& g : res.bundle.units) {
                LoRALinear& layer = model.layers[g.layer];
                AdapterUnit& unit = g.unit == 0 ? layer.q : *layer.v;
                unit.a.add_scaled(g.grad_a, -eta_w);
                unit.b.add_scaled(g.grad_b, -eta_w);
            }
            for (AdapterUnit* unit : units) {
                clip_frobenius(unit->a, cfg.clip_ca);
                clip_frobenius(unit->b, cfg.clip_cb);
            }

            TrainRecord rec;
            rec.iteration = t;
            rec.loss = res.bundle.loss;
            rec.delta_l2 = l2_norm(delta);
            rec.eta_delta = eta_delta_used;
            rec.eta_w = eta_w;
            for (AdapterUnit* unit : units) {
                rec.adapter_norms.push_back(frobenius_norm(unit->a));
                rec.adapter_norms.push_back(frobenius_norm(unit->b));
            }
            rec.wall_clock_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
            history.records.push_back(rec);
            if (sink) sink(history, history.records.back());
        }
    }
    return history;
}

namespace {

struct CellResult {
    double clean_sum = 0.0;
    double robust_sum = 0.0;
};

ReportRow run_cell(const FewShotSpec& spec, const Dataset& pool, const Dataset& test,
                   const FewShotCell& cell, std::size_t cell_index) {
    CellResult acc;
    for (std::uint64_t replicate : spec.seeds) {
        const std::uint64_t run_seed =
            splitmix64(splitmix64(spec.base_seed + cell_index) ^ splitmix64(replicate));

        Dataset support = sample_few_shot(pool, cell.shots, run_seed);

        ModelConfig mc = spec.model;
        mc.rank = cell.rank;
        mc.adapter_seed = run_seed;
        AdapterModel model = make_model(mc);
        apply_placement(model, cell.placement);

        TrainConfig tc = spec.train;
        tc.seed = run_seed;
        tc.adversarial = cell.tau > 0;
        tc.tau = cell.tau > 0 ? cell.tau : 1;
        if (tc.total_iterations == 0)
            tc.total_iterations = 500 * cell.shots;
        tc.eta_w.total_steps = tc.total_iterations;

        TrainHistory hist = train(model, support, tc);
        if (hist.aborted)
            throw NumericalError("cell " + std::to_string(cell_index) + ": " +
                                 hist.abort_reason);

        Metrics m = evaluate(model, test,
                             spec.attack_enabled ? &spec.eval_attack : nullptr);
        acc.clean_sum += m.clean_acc;
        acc.robust_sum += m.robust_acc;
    }
    const double k = static_cast<double>(spec.seeds.size());
    return make_report_row(spec.experiment, cell.shots, cell.tau, cell.rank,
                           cell.placement_name, acc.clean_sum / k,
                           acc.robust_sum / k, spec.seeds.size());
}

} // namespace

std::vector<ReportRow> run_few_shot(const FewShotSpec& spec, const Dataset& pool,
                                    const Dataset& test) {
    if (spec.cells.empty()) throw ConfigError("run_few_shot: no cells");
    if (spec.seeds.empty()) throw ConfigError("run_few_shot: no seeds");

    std::vector<ReportRow> rows(spec.cells.size());
    const std::size_t jobs = std::max<std::size_t>(1, spec.jobs);
    if (jobs == 1) {
        for (std::size_t c = 0; c < spec.cells.size(); ++c)
            rows[c] = run_cell(spec, pool, test, spec.cells[c], c);
        return rows;
    }

    std::vector<std::thread> workers;
    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(spec.cells.size());
    for (std::size_t w = 0; w < std::min(jobs, spec.cells.size()); ++w) {
        workers.emplace_back([&] {
            for (;;) {
                const std::size_t c = next.fetch_add(1);
                if (c >= spec.cells.size()) return;
                try {
                    rows[c] = run_cell(spec, pool, test, spec.cells[c], c);
                } catch (const std::exception& e) {
                    errors[c] = e.what();
                }
            }
        });
    }
    for (auto& th : workers) th.join();
    for (const std::string& e : errors)
        if (!e.empty()) throw NumericalError("sweep cell failed: " + e);
    return rows;
}

} // namespace advlora
