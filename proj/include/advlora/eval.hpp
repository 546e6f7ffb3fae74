#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advlora/attack.hpp"
#include "advlora/data.hpp"
#include "advlora/model.hpp"

namespace advlora {

struct Metrics {
    double clean_acc = 0.0;   // fraction in [0, 1]
    double robust_acc = 0.0;  // fraction in [0, 1]
    double harmonic_mean = 0.0;
    std::string attack_descriptor = "none";
    std::size_t n_eval = 0;
    std::vector<std::uint64_t> seed_list;
};

// 2cr/(c+r); inputs must share a scale (both fractions or both percents).
double harmonic_mean(double clean, double robust);

// Clean accuracy on the raw test split and robust accuracy under the
// attack (per-sample, forced); attack == nullptr reports robust == clean.
Metrics evaluate(const AdapterModel& model, const Dataset& ds,
                 const AttackConfig* attack);

std::string describe_attack(const AttackConfig& cfg);

// One result-table row; accuracies stored as two-decimal percents.
struct ReportRow {
    std::string experiment;
    std::size_t shots = 0;
    std::size_t tau = 0;
    std::size_t rank = 0;
    std::string placement = "all";
    double clean = 0.0;
    double robust = 0.0;
    double hm = 0.0;
    std::size_t seed_count = 0;
};

ReportRow make_report_row(const std::string& experiment, std::size_t shots,
                          std::size_t tau, std::size_t rank,
                          const std::string& placement, double clean_frac,
                          double robust_frac, std::size_t seed_count);

enum class ReportFormat { json, csv };

void emit_report(const std::vector<ReportRow>& rows, const std::string& path,
                 ReportFormat format);
std::vector<ReportRow> read_report(const std::string& path, ReportFormat format);

// Simple polyline chart; one series per label, drawn over labeled axes.
struct CurveSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

void write_curves_svg(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<CurveSeries>& series);

} // namespace advlora
