#include "advlora/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "advlora/errors.hpp"
#include "advlora/numio.hpp"

namespace advlora {

double harmonic_mean(double clean, double robust) {
    const bool c_pct = clean > 1.0;
    const bool r_pct = robust > 1.0;
    if ((c_pct && !r_pct && robust > 0.0) || (r_pct && !c_pct && clean > 0.0))
        throw ContractError("harmonic_mean: mixed percent/fraction scales");
    if (clean + robust <= 0.0) return 0.0;
    return 2.0 * clean * robust / (clean + robust);
}

namespace {

double accuracy(const Matrix& probs, const std::vector<std::size_t>& labels) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double* row = probs.row(i);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < probs.cols(); ++j)
            if (row[j] > row[arg]) arg = j;
        if (arg == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

} // namespace

std::string describe_attack(const AttackConfig& cfg) {
    std::ostringstream os;
    os << (cfg.kind == AttackKind::fgsm ? "fgsm" : "pgd");
    os << "(eps=" << format_double(cfg.set.radius)
       << ",alpha=" << format_double(cfg.step_size) << ",steps=" << cfg.steps
       << "," << (cfg.set.norm_kind == NormKind::linf ? "linf" : "l2")
       << (cfg.random_start ? ",random_start" : "") << ",per_sample)";
    return os.str();
}

Metrics evaluate(const AdapterModel& model, const Dataset& ds,
                 const AttackConfig* attack) {
    Batch batch;
    batch.inputs = ds.features;
    batch.labels = ds.labels;
    batch.sample_ids.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) batch.sample_ids[i] = i;

    PassOptions opts;
    Metrics m;
    m.n_eval = ds.size();
    m.clean_acc = accuracy(forward(model, batch.inputs, nullptr, opts).probs,
                           batch.labels);

    if (attack == nullptr) {
        m.robust_acc = m.clean_acc;
        m.attack_descriptor = "none";
    } else {
        AttackConfig cfg = *attack;
        cfg.per_sample = true;  // evaluation protocol is always per-sample
        cfg.set.dimension = ds.dim();
        const Matrix adv = run_attack(model, batch, cfg);
        m.robust_acc =
            accuracy(forward(model, adv, nullptr, opts).probs, batch.labels);
        m.attack_descriptor = describe_attack(cfg);
    }
    m.harmonic_mean = harmonic_mean(m.clean_acc, m.robust_acc);
    return m;
}

ReportRow make_report_row(const std::string& experiment, std::size_t shots,
                          std::size_t tau, std::size_t rank,
                          const std::string& placement, double clean_frac,
                          double robust_frac, std::size_t seed_count) {
    ReportRow row;
    row.experiment = experiment;
    row.shots = shots;
    row.tau = tau;
    row.rank = rank;
    row.placement = placement;
    row.clean = round2(100.0 * clean_frac);
    row.robust = round2(100.0 * robust_frac);
    row.hm = round2(harmonic_mean(row.clean, row.robust));
    row.seed_count = seed_count;
    return row;
}

namespace {

void check_row(const ReportRow& row) {
    // rounding to two decimals can move HM past the arithmetic mean by < 0.011
    if (row.hm > (row.clean + row.robust) / 2.0 + 0.011)
        throw ContractError("report row has HM above the arithmetic mean");
}

} // namespace

void emit_report(const std::vector<ReportRow>& rows, const std::string& path,
                 ReportFormat format) {
    if (rows.empty()) throw ContractError("emit_report: no rows");
    for (const ReportRow& row : rows) check_row(row);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write report: " + path);

    if (format == ReportFormat::csv) {
        out << "experiment,shots,tau,rank,placement,clean,robust,hm,seed_count\n";
        for (const ReportRow& r : rows)
            out << r.experiment << ',' << r.shots << ',' << r.tau << ',' << r.rank
                << ',' << r.placement << ',' << format_percent(r.clean) << ','
                << format_percent(r.robust) << ',' << format_percent(r.hm) << ','
                << r.seed_count << "\n";
    } else {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const ReportRow& r : rows) {
            nlohmann::ordered_json j;
            j["experiment"] = r.experiment;
            j["shots"] = r.shots;
            j["tau"] = r.tau;
            j["rank"] = r.rank;
            j["placement"] = r.placement;
            j["clean"] = format_percent(r.clean);
            j["robust"] = format_percent(r.robust);
            j["hm"] = format_percent(r.hm);
            j["seed_count"] = r.seed_count;
            arr.push_back(std::move(j));
        }
        out << arr.dump(2) << "\n";
    }
    if (!out) throw IoError("report write failed: " + path);
}

std::vector<ReportRow> read_report(const std::string& path, ReportFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open report: " + path);
    std::vector<ReportRow> rows;

    if (format == ReportFormat::csv) {
        std::string line;
        if (!std::getline(in, line)) throw ParseError("report missing header");
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(ss, field, ',')) fields.push_back(field);
            if (fields.size() != 9)
                throw ParseError("report line " + std::to_string(line_no) +
                                 ": expected 9 columns");
            ReportRow r;
            r.experiment = fields[0];
            r.shots = std::stoull(fields[1]);
            r.tau = std::stoull(fields[2]);
            r.rank = std::stoull(fields[3]);
            r.placement = fields[4];
            r.clean = std::stod(fields[5]);
            r.robust = std::stod(fields[6]);
            r.hm = std::stod(fields[7]);
            r.seed_count = std::stoull(fields[8]);
            rows.push_back(std::move(r));
        }
    } else {
        nlohmann::json arr = nlohmann::json::parse(in, nullptr, true);
        for (const auto& j : arr) {
            ReportRow r;
            r.experiment = j.at("experiment").get<std::string>();
            r.shots = j.at("shots").get<std::size_t>();
            r.tau = j.at("tau").get<std::size_t>();
            r.rank = j.at("rank").get<std::size_t>();
            r.placement = j.at("placement").get<std::string>();
            r.clean = std::stod(j.at("clean").get<std::string>());
            r.robust = std::stod(j.at("robust").get<std::string>());
            r.hm = std::stod(j.at("hm").get<std::string>());
            r.seed_count = j.at("seed_count").get<std::size_t>();
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

} // namespace advlora
