#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "advlora/attack.hpp"
#include "advlora/data.hpp"
#include "advlora/eval.hpp"
#include "advlora/linalg.hpp"
#include "advlora/model.hpp"

namespace advlora {

enum class DeltaMode { persistent, reset_per_batch };

struct TrainConfig {
    LrSchedule eta_w{ScheduleKind::cosine, 2e-4, 1, 0.0};
    std::size_t tau = 2;
    std::size_t total_iterations = 0;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    DeltaMode delta_mode = DeltaMode::persistent;
    InnerPolicy inner_policy;
    PerturbationSet set{NormKind::linf, 1.0 / 255.0, 0};
    double clip_ca = 0.0;  // 0 disables clipping
    double clip_cb = 0.0;
    bool adversarial = true;
};

struct TrainRecord {
    std::size_t iteration = 0;
    double loss = 0.0;
    double delta_l2 = 0.0;
    double eta_delta = 0.0;
    double eta_w = 0.0;
    std::vector<double> adapter_norms;  // interleaved ||A||_F, ||B||_F per unit
    double wall_clock_s = 0.0;          // diagnostics only; not serialized
};

struct TrainHistory {
    std::vector<std::string> norm_labels;  // "a0", "b0", ...
    std::vector<TrainRecord> records;
    bool aborted = false;
    std::string abort_reason;

    std::string csv_header() const;
    std::string csv_row(const TrainRecord& r) const;
};

using HistorySink = std::function<void(const TrainHistory&, const TrainRecord&)>;

// Runs the minimax loop: per minibatch, tau ascent steps on the shared
// perturbation, then one simultaneous descent step on every enabled
// adapter pair. adversarial=false skips the ascent entirely.
TrainHistory train(AdapterModel& model, const Dataset& data, const TrainConfig& cfg,
                   const HistorySink& sink = nullptr);

struct FewShotCell {
    std::size_t shots = 1;
    std::size_t tau = 2;  // 0 selects the non-adversarial baseline
    std::size_t rank = 2;
    std::string placement_name = "all";
    AdapterPlacement placement;
};

struct FewShotSpec {
    std::string experiment;
    std::vector<FewShotCell> cells;
    std::vector<std::uint64_t> seeds;
    std::uint64_t base_seed = 0;
    ModelConfig model;
    TrainConfig train;
    AttackConfig eval_attack;
    bool attack_enabled = true;
    std::size_t jobs = 1;
};

// Trains and evaluates each cell across its replicate seeds; one report
// row per cell, accuracies averaged over seeds.
std::vector<ReportRow> run_few_shot(const FewShotSpec& spec, const Dataset& pool,
                                    const Dataset& test);

} // namespace advlora
