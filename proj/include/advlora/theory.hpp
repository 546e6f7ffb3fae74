#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "advlora/linalg.hpp"
#include "advlora/matrix.hpp"

namespace advlora {

// f(W, delta) = g(W) + <delta, C vec(W)> - (mu/2)||delta||^2 with
// g(W) = <G0, W> + (lambda/2)||W||_F^2 + amp * sum_ij cos(W_ij).
// Exactly mu-strongly concave in delta, nonconvex in W, and every
// constant (ell, kappa, the inner maximizer) is analytically available.
struct GameConfig {
    std::size_t d = 6;
    std::size_t k = 5;
    std::size_t r = 2;
    std::size_t n = 8;
    double mu = 1.0;
    double lambda = 0.5;
    double nonconvex_amp = 0.5;
    double coupling_scale = 0.2;  // std of C entries; 0 decouples the game
    double lin_scale = 0.3;       // std of G0 entries
    double radius = 0.5;
    NormKind norm = NormKind::l2;
    std::uint64_t seed = 7;
};

struct QuadraticGame {
    GameConfig cfg;
    Matrix w_base;    // d x k, base point of the low-rank parameterization
    Matrix coupling;  // C: n x (d*k)
    Matrix g_lin;     // G0: d x k
    PerturbationSet set;
    double ell = 0.0;    // valid Lipschitz-gradient constant (upper bound)
    double kappa = 1.0;  // ell / mu
};

QuadraticGame make_game(const GameConfig& cfg);

double game_f(const QuadraticGame& game, const Matrix& w,
              const std::vector<double>& delta);
Matrix game_grad_w(const QuadraticGame& game, const Matrix& w,
                   const std::vector<double>& delta);
std::vector<double> game_grad_delta(const QuadraticGame& game, const Matrix& w,
                                    const std::vector<double>& delta);

// Exact inner maximizer: projection of C vec(W)/mu onto the set.
std::vector<double> delta_star(const QuadraticGame& game, const Matrix& w);

struct PhiResult {
    double phi = 0.0;
    Matrix grad;  // d x k, Danskin gradient
};
PhiResult phi_and_grad(const QuadraticGame& game, const Matrix& w);

// Projected plain-gradient ascent on delta at fixed W, from delta = 0.
std::vector<double> game_ascent(const QuadraticGame& game, const Matrix& w,
                                std::size_t steps, double eta);

struct SgdaConfig {
    std::size_t tau = 1;
    double eta_w = 2e-3;
    double eta_delta = 0.0;  // 0 selects 1/ell
    std::size_t iterations = 10000;
    double noise_std = 0.0;
    std::size_t batch_m = 1;
    std::uint64_t seed = 1;
    double init_a_sigma = 0.1;
    double clip_ca = 0.0;
    double clip_cb = 0.0;
    double divergence_norm = 1e8;
};

struct TracePoint {
    std::size_t t = 0;
    double grad_phi_sq = 0.0;  // ||grad Phi(W_t)||_F^2, exact
    // ||grad_A Phi||_F^2 + ||grad_B Phi||_F^2, the quantity the rate
    // bound controls under the low-rank parameterization
    double grad_ab_sq = 0.0;
    double gamma = 0.0;  // ||delta*(W_t) - delta_t||^2
    double phi = 0.0;
    double a_norm = 0.0;
    double b_norm = 0.0;
};

struct StationarityTrace {
    std::vector<TracePoint> points;  // includes t = 0
    bool aborted = false;

    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    // First t with ||grad Phi(W_t)||_F <= eps.
    std::size_t first_stationary(double eps) const;
    // Same threshold on the (A, B)-restricted gradient norm.
    std::size_t first_stationary_ab(double eps) const;
    std::string to_csv() const;
};

// The minimax loop on the game with W = w_base + B A; gradients optionally
// carry Gaussian noise of std noise_std averaged over batch_m draws.
StationarityTrace run_sgda(const QuadraticGame& game, const SgdaConfig& cfg);

struct ContractionReport {
    double max_ratio = 0.0;  // per-step gamma_post / gamma_pre
    double bound = 0.0;      // (1 - 1/kappa) + 1e-9
    std::size_t steps = 0;
    bool pass = false;
};
// tau = 1 noiseless run; measures the inner-step gamma contraction at
// fixed W each iteration. eta_delta = 0 selects 1/ell.
ContractionReport contraction_check(const QuadraticGame& game,
                                    std::size_t iterations, double eta_delta,
                                    double eta_w, std::uint64_t seed);

struct SmoothnessReport {
    double max_ratio_w = 0.0;
    double bound_w = 0.0;  // 2 kappa ell
    double max_ratio_a = 0.0;
    double bound_a = 0.0;  // 2 kappa ell c_B^2
    double c_b = 0.0;
    bool pass = false;
};
SmoothnessReport smoothness_probe(const QuadraticGame& game, std::size_t samples,
                                  double c_b, std::uint64_t seed);

// Least-squares slope of log10(min-so-far grad_phi_sq) vs log10(t).
double fit_loglog_slope(const StationarityTrace& trace, std::size_t t_lo,
                        std::size_t t_hi);
// Mean grad_phi_sq over the trailing fraction of the trace.
double plateau_level(const StationarityTrace& trace, double tail_fraction = 0.2);

// Algebraic check of grad_A Phi = B^T grad Phi and grad_B Phi = grad Phi A^T
// against an independently coded index-level evaluation.
double game_chain_rule_residual(const QuadraticGame& game, const Matrix& a,
                                const Matrix& b);

struct TheoryCheck {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::string detail;
};

struct BenchConfig {
    static SgdaConfig default_rate() {
        SgdaConfig c;
        c.eta_w = 5e-3;
        return c;
    }

    std::size_t fd_samples = 50;
    std::size_t lipschitz_pairs = 1000;
    std::size_t contraction_iters = 1000;
    std::size_t smoothness_pairs = 1000;
    double c_b = 2.0;
    double eta_delta = 0.0;  // 0 selects 1/ell for contraction + sgda
    SgdaConfig rate = default_rate();
    std::size_t noise_iterations = 2000;
    double noise_std = 1.0;
    std::vector<std::size_t> noise_batches{16, 64};
    std::size_t noise_seeds = 5;
    double eps_stationary = 1e-3;
    std::size_t slope_t_lo = 100;
    std::size_t slope_t_hi = 10000;
    double slope_threshold = -0.8;
    std::uint64_t seed = 123;
};

struct TheoryReport {
    std::vector<TheoryCheck> checks;
    double slope = 0.0;
    double plateau_m_small = 0.0;
    double plateau_m_large = 0.0;
    std::size_t first_eps_stationary = StationarityTrace::npos;
    std::size_t first_eps_stationary_ab = StationarityTrace::npos;
    bool all_pass() const;
    std::string to_json() const;
};

TheoryReport run_theory_checks(const GameConfig& game_cfg, const BenchConfig& bench);

} // namespace advlora
