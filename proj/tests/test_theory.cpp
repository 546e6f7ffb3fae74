#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "advlora/errors.hpp"
#include "advlora/rng.hpp"
#include "advlora/theory.hpp"

using namespace advlora;

namespace {

Matrix random_w(const GameConfig& cfg, std::uint64_t seed, double scale = 1.0) {
    return Matrix::gaussian(cfg.d, cfg.k, scale, seed);
}

double vec_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

} // namespace

TEST_CASE("game is strongly concave in delta and kappa >= 1") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    CHECK(game.kappa >= 1.0);
    CHECK(game.ell >= gc.mu);

    Matrix w = random_w(gc, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> d1(gc.n), d2(gc.n);
        for (std::size_t i = 0; i < gc.n; ++i) {
            d1[i] = 0.4 * gaussian(100 + trial, i);
            d2[i] = 0.4 * gaussian(200 + trial, i);
        }
        std::vector<double> mid(gc.n);
        double dist_sq = 0.0;
        for (std::size_t i = 0; i < gc.n; ++i) {
            mid[i] = 0.5 * (d1[i] + d2[i]);
            dist_sq += (d1[i] - d2[i]) * (d1[i] - d2[i]);
        }
        const double lhs = game_f(game, w, mid);
        const double rhs = 0.5 * (game_f(game, w, d1) + game_f(game, w, d2)) +
                           gc.mu / 8.0 * dist_sq;
        CHECK(lhs >= rhs - 1e-10);
    }
}

TEST_CASE("delta_star: no coupling means no perturbation") {
    GameConfig gc;
    gc.coupling_scale = 0.0;
    QuadraticGame game = make_game(gc);
    for (int t = 0; t < 10; ++t) {
        const auto ds = delta_star(game, random_w(gc, 300 + t));
        for (double v : ds) CHECK(v == 0.0);
    }
}

TEST_CASE("delta_star: interior stationarity and boundary optimality") {
    GameConfig gc;
    gc.coupling_scale = 0.05;  // small coupling keeps the maximizer interior
    gc.radius = 2.0;
    QuadraticGame game = make_game(gc);
    Matrix w = random_w(gc, 7);
    auto ds = delta_star(game, w);
    CHECK(l2_norm(ds) < gc.radius);
    auto g = game_grad_delta(game, w, ds);
    CHECK(l2_norm(g) <= 1e-12);

    GameConfig hard = gc;
    hard.coupling_scale = 2.0;  // forces the maximizer onto the sphere
    hard.radius = 0.1;
    QuadraticGame hg = make_game(hard);
    Matrix hw = random_w(hard, 8, 2.0);
    auto hds = delta_star(hg, hw);
    CHECK(l2_norm(hds) == doctest::Approx(hard.radius).epsilon(1e-12));
    // variational inequality: the gradient points outward at the optimum
    auto hgrad = game_grad_delta(hg, hw, hds);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> feas(hard.n);
        for (std::size_t i = 0; i < hard.n; ++i) feas[i] = gaussian(900 + t, i);
        project(hg.set, feas);
        double inner = 0.0;
        for (std::size_t i = 0; i < hard.n; ++i)
            inner += hgrad[i] * (feas[i] - hds[i]);
        CHECK(inner <= 1e-9);
    }
}

TEST_CASE("delta_star maximizes f over sampled feasible points") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    for (int trial = 0; trial < 5; ++trial) {
        Matrix w = random_w(gc, 40 + trial);
        const auto ds = delta_star(game, w);
        const double best = game_f(game, w, ds);
        for (int t = 0; t < 200; ++t) {
            std::vector<double> feas(gc.n);
            for (std::size_t i = 0; i < gc.n; ++i)
                feas[i] = gaussian(5000 + 200 * trial + t, i);
            project(game.set, feas);
            CHECK(best >= game_f(game, w, feas) - 1e-9);
        }
    }
}

TEST_CASE("linf delta_star is the per-coordinate clamp") {
    GameConfig gc;
    gc.norm = NormKind::linf;
    gc.radius = 0.05;
    gc.coupling_scale = 0.5;
    QuadraticGame game = make_game(gc);
    Matrix w = random_w(gc, 11);
    const auto ds = delta_star(game, w);
    for (double v : ds) CHECK(std::abs(v) <= gc.radius + 1e-15);
    const double best = game_f(game, w, ds);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> feas(gc.n);
        for (std::size_t i = 0; i < gc.n; ++i) feas[i] = gaussian(7000 + t, i);
        project(game.set, feas);
        CHECK(best >= game_f(game, w, feas) - 1e-9);
    }
}

TEST_CASE("danskin gradient matches finite differences of phi") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix w = random_w(gc, 600 + trial);
        const PhiResult pr = phi_and_grad(game, w);
        Matrix fd(gc.d, gc.k);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double h = 1e-6 * std::max(1.0, std::abs(w.data()[i]));
            Matrix wp = w, wm = w;
            wp.data()[i] += h;
            wm.data()[i] -= h;
            fd.data()[i] =
                (phi_and_grad(game, wp).phi - phi_and_grad(game, wm).phi) / (2.0 * h);
        }
        fd -= pr.grad;
        CHECK(frobenius_norm(fd) / std::max(1e-12, frobenius_norm(pr.grad)) <= 1e-5);
    }
}

TEST_CASE("no coupling: phi is g and its gradient is grad g") {
    GameConfig gc;
    gc.coupling_scale = 0.0;
    QuadraticGame game = make_game(gc);
    Matrix w = random_w(gc, 12);
    const PhiResult pr = phi_and_grad(game, w);

    // direct evaluation of g and its gradient
    double g = 0.0;
    Matrix grad(gc.d, gc.k);
    for (std::size_t i = 0; i < w.size(); ++i) {
        g += game.g_lin.data()[i] * w.data()[i] +
             0.5 * gc.lambda * w.data()[i] * w.data()[i] +
             gc.nonconvex_amp * std::cos(w.data()[i]);
        grad.data()[i] = game.g_lin.data()[i] + gc.lambda * w.data()[i] -
                         gc.nonconvex_amp * std::sin(w.data()[i]);
    }
    CHECK(std::abs(pr.phi - g) <= 1e-12 * std::max(1.0, std::abs(g)));
    grad -= pr.grad;
    CHECK(frobenius_norm(grad) <= 1e-12);
}

TEST_CASE("delta_star is kappa-Lipschitz over 1000 pairs") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        Matrix w1 = random_w(gc, 2000 + trial);
        Matrix w2 = trial % 2 == 0 ? random_w(gc, 3000 + trial)
                                   : w1;
        if (trial % 2 == 1) {
            Matrix step = random_w(gc, 4000 + trial, 1e-4);
            w2 += step;
        }
        Matrix diff = w1;
        diff -= w2;
        const double dn = frobenius_norm(diff);
        if (dn == 0.0) continue;
        worst = std::max(worst,
                         vec_dist(delta_star(game, w1), delta_star(game, w2)) / dn);
    }
    CHECK(worst <= game.kappa * (1.0 + 1e-6));
}

TEST_CASE("inner ascent contracts gamma at eta = 1/ell every step") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    ContractionReport rep = contraction_check(game, 1000, 0.0, 2e-3, 5);
    CHECK(rep.pass);
    CHECK(rep.max_ratio <= (1.0 - 1.0 / game.kappa) + 1e-9);
    CHECK(rep.max_ratio > 0.0);  // the check actually measured something
}

TEST_CASE("oversized inner rate breaks the contraction") {
    // interior maximizer, so projection cannot mask the oscillation
    GameConfig gc;
    gc.coupling_scale = 0.05;
    gc.radius = 2.0;
    QuadraticGame game = make_game(gc);
    REQUIRE(10.0 / game.ell > 2.0 / gc.mu);  // genuinely divergent ascent map
    ContractionReport rep = contraction_check(game, 200, 10.0 / game.ell, 2e-3, 5);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("smoothness probes stay under the proposition bounds") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    SmoothnessReport rep = smoothness_probe(game, 1000, 2.0, 17);
    CHECK(rep.pass);
    CHECK(rep.max_ratio_w <= rep.bound_w);
    CHECK(rep.max_ratio_a <= rep.bound_a);
    CHECK(rep.max_ratio_w > 0.0);
    CHECK(rep.max_ratio_a > 0.0);
}

TEST_CASE("linear g with no coupling pins the probe to the known curvature") {
    GameConfig gc;
    gc.coupling_scale = 0.0;
    gc.nonconvex_amp = 0.0;  // grad Phi = G0 + lambda W, exactly lambda-Lipschitz
    QuadraticGame game = make_game(gc);
    SmoothnessReport rep = smoothness_probe(game, 400, 1.5, 19);
    CHECK(rep.max_ratio_w == doctest::Approx(gc.lambda).epsilon(1e-9));
    CHECK(rep.pass);
}

TEST_CASE("game chain rule identity holds to 1e-10") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix a = Matrix::gaussian(gc.r, gc.k, 1.0, 8000 + trial);
        Matrix b = Matrix::gaussian(gc.d, gc.r, 1.0, 8100 + trial);
        CHECK(game_chain_rule_residual(game, a, b) <= 1e-10);
    }
}

TEST_CASE("sgda trace: noiseless run decays and records consistently") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    SgdaConfig cfg;
    cfg.iterations = 400;
    cfg.eta_w = 2e-3;
    StationarityTrace trace = run_sgda(game, cfg);
    REQUIRE(trace.points.size() == 401);
    CHECK_FALSE(trace.aborted);
    CHECK(trace.points.front().t == 0);
    CHECK(trace.points.back().t == 400);
    for (const TracePoint& p : trace.points) {
        CHECK(std::isfinite(p.grad_phi_sq));
        CHECK(p.gamma >= 0.0);
    }
    // same seed, same trace
    StationarityTrace again = run_sgda(game, cfg);
    CHECK(again.points.size() == trace.points.size());
    CHECK(again.points.back().grad_phi_sq == trace.points.back().grad_phi_sq);

    // B starts at zero and leaves it
    CHECK(trace.points.front().b_norm == 0.0);
    CHECK(trace.points.back().b_norm > 0.0);
}

TEST_CASE("divergent step size aborts with a partial trace") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    SgdaConfig cfg;
    cfg.iterations = 100000;
    cfg.eta_w = 50.0;  // way past stability
    cfg.divergence_norm = 1e6;
    StationarityTrace trace = run_sgda(game, cfg);
    CHECK(trace.aborted);
    CHECK(trace.points.size() < 100001);
}

TEST_CASE("trace csv has the documented columns") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    SgdaConfig cfg;
    cfg.iterations = 3;
    StationarityTrace trace = run_sgda(game, cfg);
    const std::string csv = trace.to_csv();
    CHECK(csv.rfind("t,grad_phi_sq,gamma,phi,a_norm,b_norm\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 points
}

TEST_CASE("first stationary iteration is reported") {
    GameConfig gc;
    QuadraticGame game = make_game(gc);
    SgdaConfig cfg;
    cfg.iterations = 2000;
    cfg.eta_w = 5e-3;
    StationarityTrace trace = run_sgda(game, cfg);
    const double final_norm = std::sqrt(trace.points.back().grad_phi_sq);
    const std::size_t t = trace.first_stationary(final_norm * 2.0 + 1e-12);
    CHECK(t != StationarityTrace::npos);
    CHECK(t <= 2000);
    CHECK(trace.first_stationary(0.0) == StationarityTrace::npos);
}
