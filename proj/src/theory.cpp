#include "advlora/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "advlora/errors.hpp"
#include "advlora/kernels.hpp"
#include "advlora/numio.hpp"
#include "advlora/rng.hpp"

namespace advlora {

QuadraticGame make_game(const GameConfig& cfg) {
    if (cfg.mu <= 0.0) throw ConfigError("game: mu must be positive");
    if (cfg.r > std::min(cfg.d, cfg.k)) throw ConfigError("game: rank too large");

    QuadraticGame game;
    game.cfg = cfg;
    game.w_base = Matrix::gaussian(cfg.d, cfg.k, 0.5, substream(cfg.seed, Stream::backbone, 0));
    game.coupling = Matrix::gaussian(cfg.n, cfg.d * cfg.k, cfg.coupling_scale,
                                     substream(cfg.seed, Stream::backbone, 1));
    game.g_lin = Matrix::gaussian(cfg.d, cfg.k, cfg.lin_scale,
                                  substream(cfg.seed, Stream::backbone, 2));
    game.set = PerturbationSet{cfg.norm, cfg.radius, cfg.n};

    // ||C||_F upper-bounds ||C||_op, so ell is a valid (conservative)
    // Lipschitz constant for the joint gradient.
    const double c_norm = frobenius_norm(game.coupling);
    game.ell = cfg.mu + c_norm + cfg.lambda + cfg.nonconvex_amp;
    game.kappa = game.ell / cfg.mu;
    return game;
}

namespace {

std::vector<double> coupling_times_vecw(const QuadraticGame& game, const Matrix& w) {
    std::vector<double> s(game.cfg.n);
    for (std::size_t i = 0; i < game.cfg.n; ++i)
        s[i] = kernels::dot(game.coupling.row(i), w.data(), w.size());
    return s;
}

Matrix coupling_t_times(const QuadraticGame& game, const std::vector<double>& delta) {
    Matrix out(game.cfg.d, game.cfg.k, 0.0);
    for (std::size_t i = 0; i < game.cfg.n; ++i)
        kernels::axpy(out.data(), delta[i], game.coupling.row(i), out.size());
    return out;
}

double g_value(const QuadraticGame& game, const Matrix& w) {
    const GameConfig& cfg = game.cfg;
    double v = kernels::dot(game.g_lin.data(), w.data(), w.size());
    v += 0.5 * cfg.lambda * kernels::sum_sq(w.data(), w.size());
    double c = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) c += std::cos(w.data()[i]);
    return v + cfg.nonconvex_amp * c;
}

Matrix g_grad(const QuadraticGame& game, const Matrix& w) {
    Matrix grad = game.g_lin;
    grad.add_scaled(w, game.cfg.lambda);
    for (std::size_t i = 0; i < w.size(); ++i)
        grad.data()[i] -= game.cfg.nonconvex_amp * std::sin(w.data()[i]);
    return grad;
}

} // namespace

double game_f(const QuadraticGame& game, const Matrix& w,
              const std::vector<double>& delta) {
    const auto s = coupling_times_vecw(game, w);
    return g_value(game, w) + kernels::dot(delta.data(), s.data(), delta.size()) -
           0.5 * game.cfg.mu * kernels::sum_sq(delta.data(), delta.size());
}

Matrix game_grad_w(const QuadraticGame& game, const Matrix& w,
                   const std::vector<double>& delta) {
    Matrix grad = g_grad(game, w);
    grad += coupling_t_times(game, delta);
    return grad;
}

std::vector<double> game_grad_delta(const QuadraticGame& game, const Matrix& w,
                                    const std::vector<double>& delta) {
    auto g = coupling_times_vecw(game, w);
    kernels::axpy(g.data(), -game.cfg.mu, delta.data(), g.size());
    return g;
}

std::vector<double> delta_star(const QuadraticGame& game, const Matrix& w) {
    auto s = coupling_times_vecw(game, w);
    kernels::scal(s.data(), 1.0 / game.cfg.mu, s.size());
    project(game.set, s);
    return s;
}

PhiResult phi_and_grad(const QuadraticGame& game, const Matrix& w) {
    PhiResult res;
    const auto ds = delta_star(game, w);
    res.phi = game_f(game, w, ds);
    res.grad = game_grad_w(game, w, ds);
    return res;
}

std::vector<double> game_ascent(const QuadraticGame& game, const Matrix& w,
                                std::size_t steps, double eta) {
    std::vector<double> delta(game.cfg.n, 0.0);
    for (std::size_t j = 0; j < steps; ++j) {
        const auto g = game_grad_delta(game, w, delta);
        kernels::axpy(delta.data(), eta, g.data(), delta.size());
        project(game.set, delta);
    }
    return delta;
}

std::size_t StationarityTrace::first_stationary(double eps) const {
    for (const TracePoint& p : points)
        if (std::sqrt(p.grad_phi_sq) <= eps) return p.t;
    return npos;
}

std::size_t StationarityTrace::first_stationary_ab(double eps) const {
    for (const TracePoint& p : points)
        if (std::sqrt(p.grad_ab_sq) <= eps) return p.t;
    return npos;
}

std::string StationarityTrace::to_csv() const {
    std::ostringstream os;
    os << "t,grad_phi_sq,gamma,phi,a_norm,b_norm\n";
    for (const TracePoint& p : points)
        os << p.t << ',' << format_double(p.grad_phi_sq) << ','
           << format_double(p.gamma) << ',' << format_double(p.phi) << ','
           << format_double(p.a_norm) << ',' << format_double(p.b_norm) << "\n";
    return os.str();
}

namespace {

struct SgdaState {
    Matrix a;  // r x k
    Matrix b;  // d x r
    Matrix w;  // w_base + b a
    std::vector<double> delta;
};

SgdaState init_state(const QuadraticGame& game, const SgdaConfig& cfg) {
    SgdaState st;
    st.a = Matrix::gaussian(game.cfg.r, game.cfg.k, cfg.init_a_sigma,
                            substream(cfg.seed, Stream::lora_init));
    st.b = Matrix(game.cfg.d, game.cfg.r, 0.0);
    st.w = game.w_base;
    st.delta.assign(game.cfg.n, 0.0);
    return st;
}

void refresh_w(const QuadraticGame& game, SgdaState& st) {
    st.w = game.w_base;
    Matrix ba = matmul(st.b, st.a);
    st.w += ba;
}

TracePoint snapshot(const QuadraticGame& game, const SgdaState& st, std::size_t t) {
    TracePoint p;
    p.t = t;
    const PhiResult pr = phi_and_grad(game, st.w);
    p.grad_phi_sq = kernels::sum_sq(pr.grad.data(), pr.grad.size());
    const Matrix ga = matmul_tn(st.b, pr.grad);
    const Matrix gb = matmul_nt(pr.grad, st.a);
    p.grad_ab_sq = kernels::sum_sq(ga.data(), ga.size()) +
                   kernels::sum_sq(gb.data(), gb.size());
    const auto ds = delta_star(game, st.w);
    double gamma = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double diff = ds[i] - st.delta[i];
        gamma += diff * diff;
    }
    p.gamma = gamma;
    p.phi = pr.phi;
    p.a_norm = frobenius_norm(st.a);
    p.b_norm = frobenius_norm(st.b);
    return p;
}

void clip_to(Matrix& m, double bound) {
    if (bound <= 0.0) return;
    const double n = frobenius_norm(m);
    if (n > bound) m *= bound / n;
}

} // namespace

StationarityTrace run_sgda(const QuadraticGame& game, const SgdaConfig& cfg) {
    const double eta_delta = cfg.eta_delta > 0.0 ? cfg.eta_delta : 1.0 / game.ell;
    SgdaState st = init_state(game, cfg);

    CounterRng noise(substream(cfg.seed, Stream::grad_noise));
    const double noise_scale =
        cfg.noise_std / std::sqrt(static_cast<double>(std::max<std::size_t>(1, cfg.batch_m)));
    auto perturb = [&](double* data, std::size_t len) {
        if (cfg.noise_std <= 0.0) return;
        for (std::size_t i = 0; i < len; ++i) data[i] += noise_scale * noise.next_gaussian();
    };

    StationarityTrace trace;
    trace.points.push_back(snapshot(game, st, 0));

    for (std::size_t t = 1; t <= cfg.iterations; ++t) {
        for (std::size_t j = 0; j < cfg.tau; ++j) {
            auto g = game_grad_delta(game, st.w, st.delta);
            perturb(g.data(), g.size());
            kernels::axpy(st.delta.data(), eta_delta, g.data(), st.delta.size());
            project(game.set, st.delta);
        }

        Matrix gw = game_grad_w(game, st.w, st.delta);
        perturb(gw.data(), gw.size());
        Matrix ga = matmul_tn(st.b, gw);  // B^T grad_W
        Matrix gb = matmul_nt(gw, st.a);  // grad_W A^T
        st.a.add_scaled(ga, -cfg.eta_w);
        st.b.add_scaled(gb, -cfg.eta_w);
        clip_to(st.a, cfg.clip_ca);
        clip_to(st.b, cfg.clip_cb);
        refresh_w(game, st);

        if (frobenius_norm(st.w) > cfg.divergence_norm) {
            trace.aborted = true;
            break;
        }
        trace.points.push_back(snapshot(game, st, t));
    }
    return trace;
}

ContractionReport contraction_check(const QuadraticGame& game,
                                    std::size_t iterations, double eta_delta,
                                    double eta_w, std::uint64_t seed) {
    const double eta = eta_delta > 0.0 ? eta_delta : 1.0 / game.ell;
    SgdaConfig cfg;
    cfg.seed = seed;
    SgdaState st = init_state(game, cfg);

    ContractionReport rep;
    rep.bound = (1.0 - 1.0 / game.kappa) + 1e-9;
    rep.steps = iterations;

    for (std::size_t t = 1; t <= iterations; ++t) {
        const auto ds = delta_star(game, st.w);
        auto dist_sq = [&](const std::vector<double>& d) {
            double s = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i) {
                const double diff = ds[i] - d[i];
                s += diff * diff;
            }
            return s;
        };
        const double gamma_pre = dist_sq(st.delta);

        auto g = game_grad_delta(game, st.w, st.delta);
        kernels::axpy(st.delta.data(), eta, g.data(), st.delta.size());
        project(game.set, st.delta);

        const double gamma_post = dist_sq(st.delta);
        if (gamma_pre > 1e-22)
            rep.max_ratio = std::max(rep.max_ratio, gamma_post / gamma_pre);

        Matrix gw = game_grad_w(game, st.w, st.delta);
        st.a.add_scaled(matmul_tn(st.b, gw), -eta_w);
        st.b.add_scaled(matmul_nt(gw, st.a), -eta_w);
        refresh_w(game, st);
    }
    rep.pass = rep.max_ratio <= rep.bound;
    return rep;
}

SmoothnessReport smoothness_probe(const QuadraticGame& game, std::size_t samples,
                                  double c_b, std::uint64_t seed) {
    if (samples < 2) throw ConfigError("smoothness_probe needs at least 2 samples");
    const GameConfig& cfg = game.cfg;
    CounterRng rng(substream(seed, Stream::probe));

    SmoothnessReport rep;
    rep.bound_w = 2.0 * game.kappa * game.ell;
    rep.bound_a = 2.0 * game.kappa * game.ell * c_b * c_b;
    rep.c_b = c_b;

    auto random_matrix = [&](std::size_t rows, std::size_t cols, double scale) {
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.next_gaussian();
        return m;
    };

    for (std::size_t s = 0; s < samples; ++s) {
        Matrix w1 = random_matrix(cfg.d, cfg.k, 1.0);
        // alternate distant and nearby pairs
        Matrix w2 = s % 2 == 0 ? random_matrix(cfg.d, cfg.k, 1.0) : w1;
        if (s % 2 == 1) {
            Matrix step = random_matrix(cfg.d, cfg.k, 1e-3);
            w2 += step;
        }
        Matrix diff = w1;
        diff -= w2;
        const double dn = frobenius_norm(diff);
        if (dn == 0.0) continue;
        Matrix gdiff = phi_and_grad(game, w1).grad;
        gdiff -= phi_and_grad(game, w2).grad;
        rep.max_ratio_w = std::max(rep.max_ratio_w, frobenius_norm(gdiff) / dn);
    }

    Matrix b = random_matrix(cfg.d, cfg.r, 1.0);
    const double bn = frobenius_norm(b);
    b *= c_b / bn;  // exactly on the Frobenius sphere of radius c_b
    for (std::size_t s = 0; s < samples; ++s) {
        Matrix a1 = random_matrix(cfg.r, cfg.k, 1.0);
        Matrix a2 = s % 2 == 0 ? random_matrix(cfg.r, cfg.k, 1.0) : a1;
        if (s % 2 == 1) {
            Matrix step = random_matrix(cfg.r, cfg.k, 1e-3);
            a2 += step;
        }
        Matrix adiff = a1;
        adiff -= a2;
        const double dn = frobenius_norm(adiff);
        if (dn == 0.0) continue;

        auto grad_a = [&](const Matrix& a) {
            Matrix w = game.w_base;
            Matrix ba = matmul(b, a);
            w += ba;
            return matmul_tn(b, phi_and_grad(game, w).grad);
        };
        Matrix gdiff = grad_a(a1);
        gdiff -= grad_a(a2);
        rep.max_ratio_a = std::max(rep.max_ratio_a, frobenius_norm(gdiff) / dn);
    }

    rep.pass = rep.max_ratio_w <= rep.bound_w * (1.0 + 1e-6) &&
               rep.max_ratio_a <= rep.bound_a * (1.0 + 1e-6);
    return rep;
}

double fit_loglog_slope(const StationarityTrace& trace, std::size_t t_lo,
                        std::size_t t_hi) {
    double msf = std::numeric_limits<double>::infinity();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    std::size_t count = 0;
    for (const TracePoint& p : trace.points) {
        if (p.t == 0) continue;
        msf = std::min(msf, p.grad_ab_sq);
        if (p.t < t_lo || p.t > t_hi) continue;
        const double x = std::log10(static_cast<double>(p.t));
        const double y = std::log10(std::max(msf, 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++count;
    }
    if (count < 2) throw ContractError("fit_loglog_slope: not enough points");
    const double denom = static_cast<double>(count) * sxx - sx * sx;
    return (static_cast<double>(count) * sxy - sx * sy) / denom;
}

double plateau_level(const StationarityTrace& trace, double tail_fraction) {
    const std::size_t n = trace.points.size();
    if (n == 0) throw ContractError("plateau_level: empty trace");
    const std::size_t start =
        n - std::max<std::size_t>(1, static_cast<std::size_t>(tail_fraction * n));
    double sum = 0.0;
    for (std::size_t i = start; i < n; ++i) sum += trace.points[i].grad_ab_sq;
    return sum / static_cast<double>(n - start);
}

double game_chain_rule_residual(const QuadraticGame& game, const Matrix& a,
                                const Matrix& b) {
    Matrix w = game.w_base;
    Matrix ba = matmul(b, a);
    w += ba;
    const PhiResult pr = phi_and_grad(game, w);

    Matrix ga = matmul_tn(b, pr.grad);   // B^T grad Phi
    Matrix gb = matmul_nt(pr.grad, a);   // grad Phi A^T

    // independent index-level evaluation of the same contractions
    Matrix ga_ref(a.rows(), a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < b.rows(); ++p) s += b(p, i) * pr.grad(p, j);
            ga_ref(i, j) = s;
        }
    Matrix gb_ref(b.rows(), b.cols(), 0.0);
    for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) s += pr.grad(i, p) * a(j, p);
            gb_ref(i, j) = s;
        }
    ga -= ga_ref;
    gb -= gb_ref;
    return frobenius_norm(ga) + frobenius_norm(gb);
}

bool TheoryReport::all_pass() const {
    for (const TheoryCheck& c : checks)
        if (!c.pass) return false;
    return true;
}

std::string TheoryReport::to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const TheoryCheck& c : checks) {
        nlohmann::ordered_json cj;
        cj["name"] = c.name;
        cj["value"] = format_double(c.value);
        cj["threshold"] = format_double(c.threshold);
        cj["pass"] = c.pass;
        if (!c.detail.empty()) cj["detail"] = c.detail;
        arr.push_back(std::move(cj));
    }
    j["checks"] = std::move(arr);
    j["slope"] = format_double(slope);
    j["plateau_m_small"] = format_double(plateau_m_small);
    j["plateau_m_large"] = format_double(plateau_m_large);
    if (first_eps_stationary == StationarityTrace::npos)
        j["first_eps_stationary"] = nullptr;
    else
        j["first_eps_stationary"] = first_eps_stationary;
    if (first_eps_stationary_ab == StationarityTrace::npos)
        j["first_eps_stationary_ab"] = nullptr;
    else
        j["first_eps_stationary_ab"] = first_eps_stationary_ab;
    j["all_pass"] = all_pass();
    return j.dump(2) + "\n";
}

TheoryReport run_theory_checks(const GameConfig& game_cfg, const BenchConfig& bench) {
    const QuadraticGame game = make_game(game_cfg);
    TheoryReport report;

    // Danskin: central differences of Phi against the analytic gradient.
    {
        CounterRng rng(substream(bench.seed, Stream::probe, 1));
        double worst = 0.0;
        for (std::size_t s = 0; s < bench.fd_samples; ++s) {
            Matrix w(game_cfg.d, game_cfg.k);
            for (std::size_t i = 0; i < w.size(); ++i)
                w.data()[i] = rng.next_gaussian();
            const PhiResult pr = phi_and_grad(game, w);
            Matrix fd(game_cfg.d, game_cfg.k);
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double h = 1e-6 * std::max(1.0, std::abs(w.data()[i]));
                Matrix wp = w, wm = w;
                wp.data()[i] += h;
                wm.data()[i] -= h;
                fd.data()[i] = (phi_and_grad(game, wp).phi - phi_and_grad(game, wm).phi) /
                               (2.0 * h);
            }
            fd -= pr.grad;
            const double rel =
                frobenius_norm(fd) / std::max(1e-12, frobenius_norm(pr.grad));
            worst = std::max(worst, rel);
        }
        report.checks.push_back({"danskin_fd", worst, 1e-5, worst <= 1e-5,
                                 std::to_string(bench.fd_samples) + " random points"});
    }

    // delta* is kappa-Lipschitz.
    {
        CounterRng rng(substream(bench.seed, Stream::probe, 2));
        double worst = 0.0;
        for (std::size_t s = 0; s < bench.lipschitz_pairs; ++s) {
            Matrix w1(game_cfg.d, game_cfg.k), w2(game_cfg.d, game_cfg.k);
            for (std::size_t i = 0; i < w1.size(); ++i) w1.data()[i] = rng.next_gaussian();
            if (s % 2 == 0) {
                for (std::size_t i = 0; i < w2.size(); ++i)
                    w2.data()[i] = rng.next_gaussian();
            } else {
                w2 = w1;
                for (std::size_t i = 0; i < w2.size(); ++i)
                    w2.data()[i] += 1e-4 * rng.next_gaussian();
            }
            Matrix diff = w1;
            diff -= w2;
            const double dn = frobenius_norm(diff);
            if (dn == 0.0) continue;
            const auto d1 = delta_star(game, w1);
            const auto d2 = delta_star(game, w2);
            double dd = 0.0;
            for (std::size_t i = 0; i < d1.size(); ++i)
                dd += (d1[i] - d2[i]) * (d1[i] - d2[i]);
            worst = std::max(worst, std::sqrt(dd) / dn);
        }
        const double bound = game.kappa * (1.0 + 1e-6);
        report.checks.push_back({"delta_star_lipschitz", worst, bound, worst <= bound,
                                 "kappa = " + format_double(game.kappa)});
    }

    // Inner-step contraction at eta_delta = 1/ell.
    {
        ContractionReport c = contraction_check(game, bench.contraction_iters,
                                                bench.eta_delta, bench.rate.eta_w,
                                                bench.seed);
        report.checks.push_back({"inner_contraction", c.max_ratio, c.bound, c.pass,
                                 std::to_string(c.steps) + " iterations"});
    }

    // Smoothness of Phi, full and A-restricted.
    {
        SmoothnessReport s =
            smoothness_probe(game, bench.smoothness_pairs, bench.c_b, bench.seed);
        report.checks.push_back({"smoothness_w", s.max_ratio_w,
                                 s.bound_w * (1.0 + 1e-6),
                                 s.max_ratio_w <= s.bound_w * (1.0 + 1e-6), ""});
        report.checks.push_back({"smoothness_a", s.max_ratio_a,
                                 s.bound_a * (1.0 + 1e-6),
                                 s.max_ratio_a <= s.bound_a * (1.0 + 1e-6),
                                 "c_B = " + format_double(s.c_b)});
    }

    // Noiseless stationarity rate.
    {
        SgdaConfig cfg = bench.rate;
        cfg.noise_std = 0.0;
        cfg.eta_delta = bench.eta_delta;
        StationarityTrace trace = run_sgda(game, cfg);
        report.slope = fit_loglog_slope(trace, bench.slope_t_lo,
                                        std::min(bench.slope_t_hi, cfg.iterations));
        report.first_eps_stationary = trace.first_stationary(bench.eps_stationary);
        report.first_eps_stationary_ab =
            trace.first_stationary_ab(bench.eps_stationary);
        report.checks.push_back({"rate_slope", report.slope, bench.slope_threshold,
                                 report.slope <= bench.slope_threshold,
                                 "min-so-far fit over [" +
                                     std::to_string(bench.slope_t_lo) + ", " +
                                     std::to_string(bench.slope_t_hi) + "]"});
    }

    // Variance floor drops with the batch size.
    if (bench.noise_batches.size() >= 2) {
        auto plateau_for = [&](std::size_t m) {
            double sum = 0.0;
            for (std::size_t s = 0; s < bench.noise_seeds; ++s) {
                SgdaConfig cfg = bench.rate;
                cfg.iterations = bench.noise_iterations;
                cfg.noise_std = bench.noise_std;
                cfg.batch_m = m;
                cfg.eta_delta = bench.eta_delta;
                cfg.seed = bench.seed + 1000 + s;
                sum += plateau_level(run_sgda(game, cfg));
            }
            return sum / static_cast<double>(bench.noise_seeds);
        };
        report.plateau_m_small = plateau_for(bench.noise_batches.front());
        report.plateau_m_large = plateau_for(bench.noise_batches.back());
        report.checks.push_back(
            {"noise_plateau_ordering", report.plateau_m_large, report.plateau_m_small,
             report.plateau_m_large < report.plateau_m_small,
             "plateau(M=" + std::to_string(bench.noise_batches.back()) +
                 ") vs plateau(M=" + std::to_string(bench.noise_batches.front()) + ")"});
    }

    return report;
}

} // namespace advlora
