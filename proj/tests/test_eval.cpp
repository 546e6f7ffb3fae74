#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "advlora/errors.hpp"
#include "advlora/eval.hpp"
#include "advlora/rng.hpp"

using namespace advlora;

namespace {

AdapterModel blob_model(std::size_t dim, std::size_t classes, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.input_dim = dim;
    cfg.layer_dims = {dim, 16};
    cfg.num_classes = classes;
    cfg.rank = 2;
    cfg.dropout_p = 0.0;
    cfg.temperature = 0.1;
    cfg.backbone_seed = seed;
    cfg.adapter_seed = seed + 1;
    return make_model(cfg);
}

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("harmonic mean: paper table fixtures") {
    CHECK(harmonic_mean(81.25, 34.76) == doctest::Approx(48.69).epsilon(0.0002));
    CHECK(harmonic_mean(78.71, 30.74) == doctest::Approx(44.21).epsilon(0.0002));
    CHECK(harmonic_mean(80.65, 30.62) == doctest::Approx(44.39).epsilon(0.0002));
    CHECK(harmonic_mean(80.95, 34.73) == doctest::Approx(48.61).epsilon(0.0002));
    CHECK(harmonic_mean(80.95, 34.65) == doctest::Approx(48.53).epsilon(0.0002));
    CHECK(harmonic_mean(81.21, 29.32) == doctest::Approx(43.08).epsilon(0.0002));
    CHECK(harmonic_mean(80.09, 33.02) == doctest::Approx(46.76).epsilon(0.0002));
    CHECK(harmonic_mean(81.37, 30.72) == doctest::Approx(44.60).epsilon(0.0002));
    CHECK(harmonic_mean(79.80, 32.70) == doctest::Approx(46.39).epsilon(0.0002));
    CHECK(harmonic_mean(80.45, 30.98) == doctest::Approx(44.73).epsilon(0.0002));
}

TEST_CASE("harmonic mean: identities and scale guard") {
    CHECK(harmonic_mean(0.42, 0.42) == doctest::Approx(0.42).epsilon(1e-12));
    CHECK(harmonic_mean(73.0, 73.0) == doctest::Approx(73.0).epsilon(1e-12));
    CHECK(harmonic_mean(0.9, 0.0) == 0.0);
    CHECK(harmonic_mean(0.0, 0.0) == 0.0);
    CHECK(harmonic_mean(50.0, 0.0) == 0.0);  // a zero is scale-agnostic
    CHECK_THROWS_AS(harmonic_mean(81.25, 0.34), ContractError);
    CHECK_THROWS_AS(harmonic_mean(0.81, 34.0), ContractError);
}

TEST_CASE("evaluate: no attack mirrors clean accuracy") {
    auto blobs = make_blobs(4, 8, 30, 0.25, 70);
    AdapterModel model = blob_model(8, 4, 71);
    Metrics m = evaluate(model, blobs.test, nullptr);
    CHECK(m.robust_acc == m.clean_acc);
    CHECK(m.attack_descriptor == "none");
    CHECK(m.n_eval == blobs.test.size());
}

TEST_CASE("evaluate: zero-budget attack cannot change accuracy") {
    auto blobs = make_blobs(4, 8, 30, 0.25, 72);
    AdapterModel model = blob_model(8, 4, 73);
    AttackConfig attack;
    attack.kind = AttackKind::pgd;
    attack.set = {NormKind::linf, 0.0, 8};
    attack.step_size = 0.01;
    attack.steps = 5;
    Metrics m = evaluate(model, blobs.test, &attack);
    CHECK(m.robust_acc == m.clean_acc);
}

TEST_CASE("evaluate is deterministic") {
    auto blobs = make_blobs(3, 6, 20, 0.3, 74);
    AdapterModel model = blob_model(6, 3, 75);
    AttackConfig attack;
    attack.kind = AttackKind::pgd;
    attack.set = {NormKind::linf, 0.05, 6};
    attack.step_size = 0.02;
    attack.steps = 10;
    Metrics m1 = evaluate(model, blobs.test, &attack);
    Metrics m2 = evaluate(model, blobs.test, &attack);
    CHECK(m1.clean_acc == m2.clean_acc);
    CHECK(m1.robust_acc == m2.robust_acc);
}

TEST_CASE("untrained model sits at the monte-carlo chance level") {
    // Fresh adapters (B = 0) on symmetric blobs: accuracy is whatever the
    // frozen random backbone yields. An independent brute-force pass over
    // many resampled datasets pins that chance level.
    const std::size_t K = 10, dim = 16;
    AdapterModel model = blob_model(dim, K, 301);

    auto classify = [&](const double* x) {
        // plain triple-loop reimplementation of the forward pass
        std::vector<double> h(x, x + dim);
        for (const LoRALinear& layer : model.layers) {
            const Matrix& w = layer.q.w0;  // B = 0: adapters contribute nothing
            std::vector<double> next(w.rows(), 0.0);
            for (std::size_t i = 0; i < w.rows(); ++i)
                for (std::size_t j = 0; j < w.cols(); ++j)
                    next[i] += h[j] * w(i, j);
            if (layer.act == Activation::tanh_act)
                for (double& v : next) v = std::tanh(v);
            h = std::move(next);
        }
        double norm = 0.0;
        for (double v : h) norm += v * v;
        norm = std::sqrt(norm);
        std::size_t best = 0;
        double best_cos = -2.0;
        for (std::size_t k = 0; k < K; ++k) {
            double c = 0.0;
            for (std::size_t j = 0; j < h.size(); ++j)
                c += h[j] / norm * model.class_embeddings(k, j);
            if (c > best_cos) {
                best_cos = c;
                best = k;
            }
        }
        return best;
    };

    double oracle_sum = 0.0, oracle_sq = 0.0;
    const int oracle_trials = 40;
    for (int trial = 0; trial < oracle_trials; ++trial) {
        auto blobs = make_blobs(K, dim, 20, 0.4, 9000 + trial);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < blobs.test.size(); ++i)
            if (classify(blobs.test.features.row(i)) == blobs.test.labels[i]) ++hits;
        const double acc = static_cast<double>(hits) / blobs.test.size();
        oracle_sum += acc;
        oracle_sq += acc * acc;
    }
    const double oracle_mean = oracle_sum / oracle_trials;
    const double oracle_var = oracle_sq / oracle_trials - oracle_mean * oracle_mean;

    double eval_sum = 0.0, eval_sq = 0.0;
    const int eval_trials = 5;
    for (int trial = 0; trial < eval_trials; ++trial) {
        auto blobs = make_blobs(K, dim, 20, 0.4, 500 + trial);
        Metrics m = evaluate(model, blobs.test, nullptr);
        eval_sum += m.clean_acc;
        eval_sq += m.clean_acc * m.clean_acc;
    }
    const double mean = eval_sum / eval_trials;
    const double var = eval_sq / eval_trials - mean * mean;
    // the dataset draw dominates both uncertainties; pool them
    const double stderr_est =
        std::sqrt(std::max(var, oracle_var) / static_cast<double>(eval_trials) +
                  oracle_var / static_cast<double>(oracle_trials));
    CHECK(std::abs(mean - oracle_mean) <= 3.0 * stderr_est);
}

TEST_CASE("report rows: emit, re-read, byte-stable") {
    std::vector<ReportRow> rows;
    rows.push_back(make_report_row("demo", 4, 2, 2, "all", 0.8125, 0.3476, 3));
    rows.push_back(make_report_row("demo", 4, 10, 2, "all", 0.7871, 0.3074, 3));

    CHECK(rows[0].clean == 81.25);
    CHECK(rows[0].hm == doctest::Approx(48.69).epsilon(1e-9));

    for (ReportFormat fmt : {ReportFormat::csv, ReportFormat::json}) {
        const std::string path = temp_file(fmt == ReportFormat::csv
                                               ? "advlora_report.csv"
                                               : "advlora_report.json");
        emit_report(rows, path, fmt);
        auto back = read_report(path, fmt);
        REQUIRE(back.size() == 2);
        CHECK(back[0].experiment == "demo");
        CHECK(back[0].shots == 4);
        CHECK(back[0].tau == 2);
        CHECK(back[0].clean == rows[0].clean);
        CHECK(back[0].robust == rows[0].robust);
        CHECK(back[0].hm == rows[0].hm);
        CHECK(back[1].seed_count == 3);

        const std::string again = temp_file("advlora_report2");
        emit_report(back, again, fmt);
        CHECK(slurp(path) == slurp(again));
        std::remove(again.c_str());

        if (fmt == ReportFormat::csv) {
            const std::string text = slurp(path);
            CHECK(text.rfind("experiment,shots,tau,rank,placement,clean,robust,hm,"
                             "seed_count\n", 0) == 0);
            CHECK(std::count(text.begin(), text.end(), '\n') == 3);
        }
        std::remove(path.c_str());
    }

    CHECK_THROWS_AS(emit_report({}, temp_file("advlora_empty.csv"), ReportFormat::csv),
                    ContractError);
    CHECK_THROWS_AS(
        emit_report(rows, "/nonexistent_dir_zz/report.csv", ReportFormat::csv),
        IoError);
}

TEST_CASE("svg curves render with axes and polylines") {
    const std::string path = temp_file("advlora_plot.svg");
    write_curves_svg(path, "accuracy vs shots", "shots", "accuracy (%)",
                     {{"clean", {{1, 80}, {4, 85}, {16, 90}}},
                      {"robust", {{1, 20}, {4, 35}, {16, 40}}}});
    const std::string text = slurp(path);
    CHECK(text.find("<svg") != std::string::npos);
    CHECK(text.find("polyline") != std::string::npos);
    CHECK(text.find("accuracy vs shots") != std::string::npos);
    CHECK(text.find("shots") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '<') > 10);
    std::remove(path.c_str());
}
