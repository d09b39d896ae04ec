#include "fwd/experiment.hpp"
#include "fwd/flows.hpp"
#include "fwd/io.hpp"
#include "fwd/numeraire.hpp"
#include "fwd/paths.hpp"
#include "fwd/utility.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

namespace fwd {

namespace fs = std::filesystem;

namespace {

const char* hint_for(ErrorKind k) {
    switch (k) {
    case ErrorKind::InvalidConfig: return "check the config keys and value types against the documented schema";
    case ErrorKind::InvalidInput: return "check the shapes and values passed between stages";
    case ErrorKind::SingularMarket: return "sigma has rank zero; give the market at least one traded risk";
    case ErrorKind::NoArbitrageViolation: return "b - r must lie in the range of sigma^T";
    case ErrorKind::ConstraintViolation: return "kappa must lie in range(sigma) and nu in its orthogonal complement";
    case ErrorKind::SimulationBlowup: return "reduce dt or the size of the coefficients";
    case ErrorKind::NonInvertibleFlow: return "reduce dt or the policy's dependence on wealth";
    case ErrorKind::Coupling: return "build every object of a run from the same lattice and path block";
    case ErrorKind::Range: return "widen [grid] or narrow the evaluation range";
    case ErrorKind::InvalidField: return "the field lost monotonicity or concavity; refine the grid or reduce dt";
    case ErrorKind::Io: return "check that the output directory is writable and the files are intact";
    }
    return "";
}

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    }
}

void note(std::ostream* log, const std::string& s) {
    if (log) *log << s << '\n';
}

Vec to_vec(const std::vector<double>& v, int n, const char* what) {
    if (static_cast<int>(v.size()) != n)
        throw Error(ErrorKind::InvalidConfig, std::string(what) + " must have " + std::to_string(n) + " entries");
    Vec out(n);
    for (int i = 0; i < n; ++i) out(i) = v[i];
    return out;
}

double power_param(const ExperimentConfig& cfg) {
    if (cfg.utility_kind == "log") return 0.0;
    if (cfg.utility_kind != "power")
        throw Error(ErrorKind::InvalidConfig, "the merton generator needs a power or log utility");
    return cfg.utility.at("a").get<double>();
}

IdentityResult identity(std::string name, std::string tag, double residual, double threshold, bool pass, long paths,
                        double dt) {
    return {std::move(name), std::move(tag), residual, threshold, pass ? Verdict::Pass : Verdict::Fail, paths, dt};
}

IdentityResult named(ResidualReport r, std::string name, std::string tag) {
    r.name = std::move(name);
    return to_identity(r, std::move(tag));
}

int finish_run(RunResult& res, const ExperimentConfig& cfg, std::ostream* log) {
    stage("report", [&] {
        write_json(res.dir / "report.json", res.report.to_json());
        write_json(res.dir / "config.json", nlohmann::json{{"config_hash", cfg.hash}, {"config", cfg.raw}});
        return 0;
    });
    int failed = 0;
    for (const auto& e : res.report.entries) {
        note(log, std::string(e.verdict == Verdict::Pass ? "  pass " : "  FAIL ") + e.name + "  residual=" +
                      format_double(e.residual) + "  threshold=" + format_double(e.threshold));
        failed += e.verdict != Verdict::Pass;
    }
    res.exit_code = failed == 0 && !res.report.entries.empty() ? 0 : 1;
    return res.exit_code;
}

// ---------------------------------------------------------------- flow experiments

void run_flow(const ExperimentConfig& cfg, RunResult& res, std::ostream* log) {
    const MarketSpec& M = cfg.market;
    const LatticeSettings& L = cfg.lattice;
    const VerifySettings& V = cfg.verify;
    const int n = M.n(), T = L.n_steps + 1;
    const double dt = L.dt;

    const BrownianLattice lat = stage("simulate", [&] { return generate_lattice(L.n_paths, L.n_steps, dt, n, L.seed); });
    const std::vector<double> grid = log_grid(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.n);
    const int G = static_cast<int>(grid.size());
    const PolicyField kappa = stage("config", [&] { return make_kappa(cfg); });
    const DualPolicyField nu = stage("config", [&] { return make_nu(cfg); });
    const InitialUtility u = stage("config", [&] { return make_initial_utility(cfg.utility_kind, cfg.utility); });
    const FlowGenerators gen{&M, &kappa, &nu};
    const std::vector<double> ygrid = dual_grid_for(u, grid);
    const std::vector<double> y_flow_grid = log_grid(u.ux(cfg.grid.x_max) / 4.0, u.ux(cfg.grid.x_min) * 4.0, G);

    DriftOptions xopt;
    xopt.x_lo = V.x_lo;
    xopt.x_hi = V.x_hi;
    xopt.allowance = V.allowance;
    DriftOptions yopt = xopt;
    yopt.x_lo = u.ux(V.x_hi);
    yopt.x_hi = u.ux(V.x_lo);
    const double x0 = V.x0, y0 = u.ux(x0);

    // Comparison policies for the consistency battery.
    const PolicyField zero_policy = constant_policy(Vec::Zero(n), "zero");
    auto shifted = [&](double s) {
        return PolicyField{"kappa*" + std::string(s > 0 ? "+" : "-") + "0.5eta",
                           [&kappa, &M, s](double t, double x) {
                               return Vec(kappa.kappa(t, x) + s * M.eta(M.index(t)));
                           }};
    };
    const PolicyField plus = shifted(0.5), minus = shifted(-0.5);
    const DualPolicyField nu_zero = constant_dual_policy(Vec::Zero(n), "zero");
    std::optional<DualPolicyField> nu_orth;
    if (n > M.d()) {
        std::mt19937_64 rng(L.seed ^ 0x6f7274686f676f6eull);
        std::normal_distribution<double> g01;
        Vec v(n);
        for (int i = 0; i < n; ++i) v(i) = g01(rng);
        Vec vs, vp;
        M.split(v, 0, vs, vp);
        if (vp.norm() > 0.0) nu_orth = constant_dual_policy(Vec(0.2 * vp / vp.norm()), "random-orthogonal");
    }

    const bool want_conj = cfg.enabled("conjugacy") || cfg.enabled("dual");
    MonotonicityAudit audit_total;
    audit_total.worst_ratio = std::numeric_limits<double>::infinity();
    InverseFlowCheck inv_check(wealth_dynamics(M, kappa), grid, n);
    bool inv_seen = false;
    PathSamples s_opt(L.n_paths, T), s_zero(L.n_paths, T), s_plus(L.n_paths, T), s_minus(L.n_paths, T);
    PathSamples s_d0(L.n_paths, T), s_dorth(L.n_paths, T), s_dstar(L.n_paths, T), s_prod(L.n_paths, T);
    PathSamples s_rt(L.n_paths, T);
    CellRegression hjb(T - 1, G, n), dual(T - 1, G, n);
    MarginalAccumulator marg(T - 1, G, n);
    HattedPolicyCheck hpol(T - 1, G, n);
    double bic_gap = 0.0, inv_pair = 0.0, rt_max = 0.0, inv_gap = 0.0, hat_r = 0.0, hat_eta = 0.0;
    long bic_cells = 0;
    std::vector<double> slice_sum(static_cast<std::size_t>(2) * 3 * G, 0.0);

    for (int begin = 0; begin < L.n_paths; begin += V.chunk) {
        const PathRange range{begin, std::min(V.chunk, L.n_paths - begin)};
        const int P = range.count;
        note(log, "  paths " + std::to_string(begin) + ".." + std::to_string(begin + P - 1));
        const FlowBundle X = stage("simulate", [&] { return simulate_wealth_flow(lat, M, kappa, grid, range); });
        const FlowBundle Y = stage("simulate", [&] { return simulate_spd_flow(lat, M, nu, y_flow_grid, range); });
        const MonotonicityAudit a = audit_monotone(X);
        audit_total.total += a.total;
        audit_total.worst_ratio = std::min(audit_total.worst_ratio, a.worst_ratio);
        if (!a.pass) {
            for (int p : a.offending_paths)
                if (audit_total.offending_paths.size() < 10) audit_total.offending_paths.push_back(p);
            continue;
        }
        const InverseFlowField inv = stage("invert", [&] { return invert_flow(X, grid); });
        const UtilityField U = stage("build", [&] { return build_utility_field(X, inv, Y, u, gen); });
        if (cfg.output.bundles) {
            stage("output", [&] {
                const std::string tag = "-chunk" + std::to_string(begin / V.chunk);
                const nlohmann::json side{{"config_hash", cfg.hash}, {"market_hash", market_hash(M)}};
                write_bundle(res.dir / "bundles" / ("wealth" + tag), X, side);
                write_bundle(res.dir / "bundles" / ("spd" + tag), Y, side);
                nlohmann::json us = side;
                us["plane"] = "U";
                us["provenance"] = to_string(U.provenance);
                write_plane(res.dir / "bundles" / ("utility" + tag), Role::Utility, U.U, U.x_grid, U.lattice, us);
                return 0;
            });
        }
        if (cfg.enabled("inverse_flow")) {
            stage("verify", [&] {
                inv_check.add(X, inv, lat);
                return 0;
            });
            inv_seen = true;
        }

        // Pointwise paths at x0 and y0 for the martingale battery.
        const std::vector<double> gx0{x0}, gy0{y0};
        const FlowBundle Xo = simulate_wealth_flow(lat, M, kappa, gx0, range);
        const FlowBundle Xz = simulate_wealth_flow(lat, M, zero_policy, gx0, range);
        const FlowBundle Xp = simulate_wealth_flow(lat, M, plus, gx0, range);
        const FlowBundle Xm = simulate_wealth_flow(lat, M, minus, gx0, range);
        const FlowBundle Y0 = simulate_spd_flow(lat, M, nu_zero, gy0, range);
        const FlowBundle Ys = simulate_spd_flow(lat, M, nu, gy0, range);
        std::optional<FlowBundle> Yo;
        if (nu_orth) Yo = simulate_spd_flow(lat, M, *nu_orth, gy0, range);

        std::optional<DualField> D;
        if (want_conj) D = stage("conjugate", [&] { return conjugate_field(U, ygrid, &M); });

        stage("verify", [&] {
            UtilitySlice s;
            DualSlice ds;
            std::optional<Plane> bic;
            if (D && cfg.enabled("conjugacy")) bic = biconjugate(*D, grid);
            for (int p = 0; p < P; ++p)
                for (int k = 0; k < T; ++k) {
                    const int gp = begin + p;
                    s.assign(U, p, k);
                    s_opt(gp, k) = s.value(Xo.values(p, k, 0));
                    s_zero(gp, k) = s.value(Xz.values(p, k, 0));
                    s_plus(gp, k) = s.value(Xp.values(p, k, 0));
                    s_minus(gp, k) = s.value(Xm.values(p, k, 0));
                    s_prod(gp, k) = Xz.values(p, k, 0) * s.marginal(Xo.values(p, k, 0));
                    if (k == 0 || k == T - 1) {
                        const int which = k == 0 ? 0 : 1;
                        for (int j = 0; j < G; ++j) {
                            slice_sum[(which * 3 + 0) * G + j] += U.U(p, k, j);
                            slice_sum[(which * 3 + 1) * G + j] += U.Ux(p, k, j);
                            slice_sum[(which * 3 + 2) * G + j] += U.Uxx(p, k, j);
                        }
                    }
                    if (!D) continue;
                    ds.assign(*D, p, k);
                    s_d0(gp, k) = ds.value(Y0.values(p, k, 0));
                    s_dstar(gp, k) = ds.value(Ys.values(p, k, 0));
                    if (Yo) s_dorth(gp, k) = ds.value(Yo->values(p, k, 0));
                    if (!bic) continue;
                    for (int j = 0; j < G; ++j) {
                        const double x = grid[j];
                        if (x < V.x_lo || x > V.x_hi) continue;
                        const double b = (*bic)(p, k, j);
                        const double uval = U.U(p, k, j);
                        if (std::isfinite(b)) {
                            bic_gap = std::max(bic_gap, std::abs(b - uval) / std::abs(uval));
                            ++bic_cells;
                        }
                        inv_pair = std::max(inv_pair, std::abs(ds.minus_derivative(U.Ux(p, k, j)) - x) / x);
                    }
                }
            if (cfg.enabled("hjb")) accumulate_hjb_drift(hjb, U, M, lat, xopt);
            if (D && cfg.enabled("dual")) accumulate_dual_drift(dual, *D, M, lat, yopt);
            if (cfg.enabled("marginal")) marg.add(U, X, M, lat, nu.nu, xopt);
            if (cfg.enabled("risk_tolerance")) {
                const RiskToleranceCheck rt = risk_tolerance_check(U, X, Y, u, x0, xopt);
                rt_max = std::max(rt_max, rt.max_rel_error);
                for (int p = 0; p < P; ++p)
                    for (int k = 0; k < T; ++k) s_rt(begin + p, k) = rt.product(p, k);
            }
            if (cfg.enabled("numeraire")) {
                const NumeraireSpec N = numeraire_portfolio(lat, M, range);
                if (begin == 0) {
                    const HattedMarket hm = change_numeraire_market(M, N);
                    for (int e = 0; e < hm.market.n_entries(); ++e) {
                        hat_r = std::max(hat_r, std::abs(hm.market.r(e)));
                        hat_eta = std::max(hat_eta, (hm.market.eta(e)).norm() + hm.translation[e].norm());
                    }
                }
                const FlowBundle Xhat = transform_wealth(X, N);
                const NumeraireView view(U, N);
                inv_gap = std::max(inv_gap, invariance_gap(U, view, X, Xhat));
                hpol.add(view, Xhat, M, lat, xopt);
            }
            return 0;
        });
    }

    // ---- assemble the report
    auto& R = res.report.entries;
    const long NP = L.n_paths;
    MartingaleOptions mopt;
    mopt.confidence = V.confidence;
    mopt.controls = &lat;
    if (cfg.enabled("monotone"))
        R.push_back(identity("flow_monotone", "monotone-flow", static_cast<double>(audit_total.total), 0.0,
                             audit_total.total == 0, NP, dt));
    if (audit_total.total > 0) {
        std::string paths;
        for (int p : audit_total.offending_paths) paths += (paths.empty() ? "" : ",") + std::to_string(p);
        note(log, "  monotonicity violations on paths " + paths + "; later stages ran on the remaining chunks only");
    }
    if (inv_seen) {
        const InverseFlowResidual r = inv_check.result();
        const double thr = 3.0 * r.drift_stderr + V.allowance * dt;
        R.push_back(identity("inverse_flow_drift", "inverse-flow-dynamics", r.drift_residual, thr,
                             r.drift_residual <= thr, r.n_paths, dt));
    }
    if (cfg.enabled("inverse_flow") && V.dt_levels >= 2) {
        const std::vector<ResidualReport> levels = stage("convergence", [&] {
            return inverse_flow_convergence(M, kappa, grid, L.n_paths, L.n_steps, dt, V.dt_levels, L.seed, V.chunk);
        });
        const auto ratios = convergence_ratios(levels);
        bool ok = true;
        for (double q : ratios) ok = ok && q >= 1.4 && q <= 3.0;
        note(log, "  inverse-flow residual ratios per dt halving:");
        for (double q : ratios) note(log, "    " + format_double(q));
        R.push_back(identity("inverse_flow_convergence", "inverse-flow-dynamics", *levels.front().slope, 1.0, ok,
                             L.n_paths, dt));
    }
    if (cfg.enabled("martingale")) {
        const MartingaleVerdict v = martingale_test(s_opt, MartingaleMode::Martingale, mopt);
        R.push_back(to_identity(v, "optimal_utility_martingale", "consistency-optimal", dt));
    }
    if (cfg.enabled("supermartingale")) {
        const MartingaleVerdict vz = martingale_test(s_zero, MartingaleMode::Supermartingale, mopt);
        R.push_back(to_identity(vz, "utility_supermartingale_kappa0", "consistency-admissible", dt));
        for (auto [samples, name] : {std::pair{&s_plus, "utility_supermartingale_kappa_plus"},
                                     std::pair{&s_minus, "utility_supermartingale_kappa_minus"}}) {
            const MartingaleVerdict v = martingale_test(*samples, MartingaleMode::Supermartingale, mopt);
            IdentityResult e = to_identity(v, name, "consistency-admissible", dt);
            // strict decrease not resolved at this path count
            if (e.verdict == Verdict::Pass && !(v.final_drift <= -3.0 * v.final_stderr)) e.verdict = Verdict::Inconclusive;
            R.push_back(e);
        }
    }
    if (cfg.enabled("hjb")) R.push_back(named(finish_drift(hjb, "", dt, xopt, grid), "hjb_drift", "drift-constraint"));
    if (cfg.enabled("conjugacy")) {
        R.push_back(identity("biconjugation_gap", "conjugacy", bic_gap, 1e-3, bic_cells > 0 && bic_gap < 1e-3, NP, dt));
        R.push_back(identity("inverse_marginal_pair", "conjugacy", inv_pair, 1e-3, inv_pair < 1e-3, NP, dt));
    }
    if (cfg.enabled("dual")) {
        R.push_back(named(finish_drift(dual, "", dt, yopt, ygrid), "dual_drift", "dual-drift"));
        R.push_back(to_identity(martingale_test(s_d0, MartingaleMode::Submartingale, mopt), "dual_submartingale_nu0",
                                "dual-submartingale", dt));
        if (nu_orth)
            R.push_back(to_identity(martingale_test(s_dorth, MartingaleMode::Submartingale, mopt),
                                    "dual_submartingale_orthogonal", "dual-submartingale", dt));
        R.push_back(to_identity(martingale_test(s_dstar, MartingaleMode::Martingale, mopt), "dual_martingale_nu_star",
                                "dual-optimal", dt));
    }
    if (cfg.enabled("marginal")) {
        DriftOptions strict = xopt;
        strict.allowance = 0.0;  // drift of U_x must sit within 3 stderr of -r U_x
        const MarginalDynamics md = marg.finish(dt, strict, grid);
        R.push_back(named(md.drift, "marginal_drift", "marginal-dynamics"));
        R.push_back(identity("marginal_volatility", "marginal-dynamics", md.vol_rel_error, 1e-2,
                             md.cells > 0 && md.vol_rel_error < 1e-2, NP, dt));
        R.push_back(to_identity(martingale_test(s_prod, MartingaleMode::Martingale, mopt),
                                "wealth_marginal_product_martingale", "marginal-dynamics", dt));
    }
    if (cfg.enabled("risk_tolerance")) {
        R.push_back(identity("risk_tolerance_identity", "risk-tolerance", rt_max, 1e-2, rt_max < 1e-2, NP, dt));
        R.push_back(to_identity(martingale_test(s_rt, MartingaleMode::Martingale, mopt), "risk_tolerance_martingale",
                                "risk-tolerance", dt));
    }
    if (cfg.enabled("numeraire")) {
        R.push_back(identity("numeraire_invariance", "numeraire-invariance", inv_gap, 1e-10, inv_gap <= 1e-10, NP, dt));
        const double hat = std::max(hat_r, hat_eta);
        R.push_back(identity("numeraire_martingale_market", "numeraire-market", hat, 1e-12, hat <= 1e-12, NP, dt));
        const double pe = hpol.rel_error(dt, xopt, grid);
        R.push_back(identity("numeraire_policy", "numeraire-policy", pe, 1e-2, pe < 1e-2, NP, dt));
    }

    // ---- plot tables
    stage("output", [&] {
        std::ostringstream os;
        write_csv_row(os, {"t", "mean_U", "stderr", "config_hash"});
        for (int k = 0; k < T; ++k) {
            double m = 0.0, m2 = 0.0;
            for (int p = 0; p < L.n_paths; ++p) {
                m += s_opt(p, k);
                m2 += s_opt(p, k) * s_opt(p, k);
            }
            m /= NP;
            const double se = NP > 1 ? std::sqrt(std::max(0.0, (m2 / NP - m * m) * NP / (NP - 1)) / NP) : 0.0;
            write_csv_row(os, {format_double(k * dt), format_double(m), format_double(se), cfg.hash});
        }
        write_text(res.dir / "mean_utility.csv", os.str());

        std::ostringstream sl;
        write_csv_row(sl, {"t", "x", "U", "U_x", "U_xx", "config_hash"});
        for (int w = 0; w < 2; ++w)
            for (int j = 0; j < G; ++j)
                write_csv_row(sl, {format_double(w == 0 ? 0.0 : (T - 1) * dt), format_double(grid[j]),
                                   format_double(slice_sum[(w * 3 + 0) * G + j] / NP),
                                   format_double(slice_sum[(w * 3 + 1) * G + j] / NP),
                                   format_double(slice_sum[(w * 3 + 2) * G + j] / NP), cfg.hash});
        write_text(res.dir / "utility_slices.csv", sl.str());

        if (cfg.enabled("hjb")) {
            std::ostringstream hm;
            write_csv_row(hm, {"t", "x", "relative_drift_residual", "stderr", "config_hash"});
            for (int k = 0; k < T - 1; ++k)
                for (int j = 0; j < G; ++j) {
                    if (grid[j] < V.x_lo || grid[j] > V.x_hi) continue;
                    const CellRegression::Cell c = hjb.solve(k, j);
                    if (!(c.scale > 0.0)) continue;
                    write_csv_row(hm, {format_double(k * dt), format_double(grid[j]),
                                       format_double(c.intercept / c.scale), format_double(c.stderr_ / c.scale),
                                       cfg.hash});
                }
            write_text(res.dir / "hjb_residual_map.csv", hm.str());
        }
        return 0;
    });
}

// ---------------------------------------------------------------- Z v(x/N) experiments

void run_zn(const ExperimentConfig& cfg, RunResult& res, std::ostream* log) {
    const MarketSpec& M = cfg.market;
    const LatticeSettings& L = cfg.lattice;
    const FamilySettings& F = cfg.family;
    const int n = M.n(), T = L.n_steps + 1;
    const double dt = L.dt;
    const BrownianLattice lat = stage("simulate", [&] { return generate_lattice(L.n_paths, L.n_steps, dt, n, L.seed); });
    const std::vector<double> grid = log_grid(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.n);
    const int G = static_cast<int>(grid.size());
    const InitialUtility v = stage("config", [&] {
        if (F.v == "power") return InitialUtility::power(F.param);
        if (F.v == "exponential") return InitialUtility::exponential(F.param);
        if (F.v == "log") return InitialUtility::log();
        throw Error(ErrorKind::InvalidConfig, "family v must be power, exponential or log");
    });
    const Vec sN = stage("config", [&] { return to_vec(F.sigma_N, n, "sigma_N"); });
    const Vec sZ = stage("config", [&] { return to_vec(F.sigma_Z, n, "sigma_Z"); });

    auto mu_N = [&](double t) {
        const int k = M.index(t);
        return F.mu_N.value_or(M.r(k) + sN.dot(M.eta(k)));
    };
    auto mu_Z = [&](double t) {
        const int k = M.index(t);
        Vec ns, np, zs, zp;
        M.split(sN, k, ns, np);
        M.split(sZ, k, zs, zp);
        const Vec w = M.eta(k) - ns + zs;
        double m = 0.0;
        if (F.v == "exponential") m = 0.5 * w.squaredNorm();
        if (F.v == "power") {
            const double a = F.param;
            m = -a * (M.r(k) - mu_N(t) + sN.dot(M.eta(k)) - np.dot(zp) + w.squaredNorm() / (2.0 * (1.0 - a)) +
                      0.5 * (1.0 + a) * np.squaredNorm());
        }
        return F.mu_Z.value_or(m) + F.mu_Z_shift;
    };

    DriftOptions opt;
    opt.x_lo = cfg.verify.x_lo;
    opt.x_hi = cfg.verify.x_hi;
    opt.allowance = cfg.verify.allowance;
    CellRegression hjb(T - 1, G, n);
    ConditionReport cond;
    std::vector<double> mean_U(static_cast<std::size_t>(T) * G, 0.0);
    for (int begin = 0; begin < L.n_paths; begin += cfg.verify.chunk) {
        const PathRange range{begin, std::min(cfg.verify.chunk, L.n_paths - begin)};
        note(log, "  paths " + std::to_string(begin) + ".." + std::to_string(begin + range.count - 1));
        const ScalarFlow Z = stage("simulate", [&] {
            return simulate_scalar(lat, [&](double t, double) { return mu_Z(t); }, [&](double, double) { return sZ; },
                                   1.0, range, "Z");
        });
        const ScalarFlow N = stage("simulate", [&] {
            return simulate_scalar(lat, [&](double t, double) { return mu_N(t); }, [&](double, double) { return sN; },
                                   1.0, range, "N");
        });
        const ZNField zn = stage("build", [&] { return closed_form_ZN(v, Z, N, M, grid); });
        cond.family = zn.condition.family;
        cond.max_violation = std::max(cond.max_violation, zn.condition.max_violation);
        stage("verify", [&] {
            accumulate_hjb_drift(hjb, zn.field, M, lat, opt);
            return 0;
        });
        for (int p = 0; p < range.count; ++p)
            for (int k = 0; k < T; ++k)
                for (int j = 0; j < G; ++j) mean_U[static_cast<std::size_t>(k) * G + j] += zn.field.U(p, k, j);
        if (cfg.output.bundles) {
            stage("output", [&] {
                const std::string tag = "-chunk" + std::to_string(begin / cfg.verify.chunk);
                const nlohmann::json side{{"config_hash", cfg.hash}, {"market_hash", market_hash(M)}};
                write_bundle(res.dir / "bundles" / ("Z" + tag), Z.bundle, side);
                write_bundle(res.dir / "bundles" / ("N" + tag), N.bundle, side);
                return 0;
            });
        }
    }
    cond.pass = cond.max_violation <= cond.tolerance;
    auto& R = res.report.entries;
    if (cfg.enabled("condition"))
        R.push_back(identity("zn_" + cond.family + "_condition", "zn-family-condition", cond.max_violation,
                             cond.tolerance, cond.pass, L.n_paths, dt));
    if (cfg.enabled("hjb")) R.push_back(named(finish_drift(hjb, "", dt, opt, grid), "hjb_drift", "drift-constraint"));

    stage("output", [&] {
        std::ostringstream os;
        write_csv_row(os, {"t", "x", "mean_U", "config_hash"});
        for (int k = 0; k < T; ++k)
            for (int j = 0; j < G; ++j)
                write_csv_row(os, {format_double(k * dt), format_double(grid[j]),
                                   format_double(mean_U[static_cast<std::size_t>(k) * G + j] / L.n_paths), cfg.hash});
        write_text(res.dir / "utility_mean.csv", os.str());
        return 0;
    });
}

// ---------------------------------------------------------------- decreasing utilities

void run_decreasing(const ExperimentConfig& cfg, RunResult& res, std::ostream* log) {
    const MarketSpec& M = cfg.market;
    const LatticeSettings& L = cfg.lattice;
    const MeasureMixture m = stage("config", [&] {
        return MeasureMixture::normalized(cfg.mixture.alphas, cfg.mixture.weights, cfg.mixture.log_limit);
    });
    const InitialUtility u = InitialUtility::mixture(m);
    const std::vector<double> grid = log_grid(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.n);
    const std::vector<double> ygrid = dual_grid_for(u, grid);
    note(log, "  evaluating the mixture field");
    const DecreasingUtility f =
        stage("build", [&] { return decreasing_utility(m, M, L.n_steps, L.dt, ygrid, grid); });
    const DualField& D = f.dual;
    const int T = D.n_times(), G = D.n_grid();

    double increase = 0.0, drift_from_start = 0.0;
    for (int k = 0; k + 1 < T; ++k)
        for (int j = 0; j < G; ++j) {
            const double a = D.V(0, k, j), b = D.V(0, k + 1, j);
            increase = std::max(increase, (b - a) / (1.0 + std::abs(a)));
            drift_from_start = std::max(drift_from_start, std::abs(b - D.V(0, 0, j)) / (1.0 + std::abs(D.V(0, 0, j))));
        }
    auto& R = res.report.entries;
    if (cfg.enabled("dual_decreasing"))
        R.push_back(named(decreasing_dual_residual(m, f, M), "decreasing_dual_drift", "decreasing-utility"));
    if (cfg.enabled("time_monotone"))
        R.push_back(identity("dual_nonincreasing_in_t", "decreasing-utility", std::max(0.0, increase), 1e-12,
                             increase <= 1e-12, 0, L.dt));
    const bool flat = f.A.back() == 0.0 && f.R.back() == 0.0;
    if (flat || cfg.enabled("constant_in_time"))
        R.push_back(identity("dual_constant_in_t", "decreasing-utility", drift_from_start, 1e-12,
                             drift_from_start <= 1e-12, 0, L.dt));

    stage("output", [&] {
        std::ostringstream os;
        write_csv_row(os, {"t", "y", "V", "V_y", "V_yy", "config_hash"});
        for (int k = 0; k < T; ++k)
            for (int j = 0; j < G; ++j)
                write_csv_row(os, {format_double(k * L.dt), format_double(ygrid[j]), format_double(D.V(0, k, j)),
                                   format_double(D.Vy(0, k, j)), format_double(D.Vyy(0, k, j)), cfg.hash});
        write_text(res.dir / "dual_field.csv", os.str());
        std::ostringstream ps;
        write_csv_row(ps, {"t", "x", "U", "U_x", "U_xx", "config_hash"});
        const UtilityField& U = f.primal;
        for (int k = 0; k < T; ++k)
            for (int j = 0; j < U.n_grid(); ++j)
                write_csv_row(ps, {format_double(k * L.dt), format_double(grid[j]), format_double(U.U(0, k, j)),
                                   format_double(U.Ux(0, k, j)), format_double(U.Uxx(0, k, j)), cfg.hash});
        write_text(res.dir / "primal_field.csv", ps.str());
        return 0;
    });
}

} // namespace

std::vector<ResidualReport> inverse_flow_convergence(const MarketSpec& market, const PolicyField& kappa,
                                                    const std::vector<double>& grid, int n_paths, int n_steps,
                                                    double dt, int levels, std::uint64_t seed, int chunk) {
    std::vector<ResidualReport> out;
    for (int i = 0; i < levels; ++i) {
        const int steps = n_steps << i;
        const double h = dt / static_cast<double>(1 << i);
        const MarketSpec m = market.resampled(1, h);
        const BrownianLattice lat = generate_lattice(n_paths, steps, h, market.n(), seed);
        InverseFlowCheck check(wealth_dynamics(m, kappa), grid, market.n());
        for (int begin = 0; begin < n_paths; begin += chunk) {
            const PathRange range{begin, std::min(chunk, n_paths - begin)};
            const FlowBundle X = simulate_wealth_flow(lat, m, kappa, grid, range);
            check.add(X, invert_flow(X, grid), lat);
        }
        const InverseFlowResidual r = check.result();
        ResidualReport rr;
        rr.name = "inverse_flow_drift";
        rr.residual = r.drift_residual;
        rr.relative_residual = r.drift_residual;
        rr.stderr_mean = r.drift_stderr;
        rr.threshold = 3.0 * r.drift_stderr + h;
        rr.dt = h;
        rr.n_paths = r.n_paths;
        rr.cells = r.cells;
        rr.verdict = rr.residual <= rr.threshold ? Verdict::Pass : Verdict::Fail;
        out.push_back(rr);
    }
    attach_convergence(out);
    return out;
}

StageError::StageError(std::string stage, const Error& cause)
    : Error(cause.kind(), "stage " + stage + ": " + cause.what()), stage_(std::move(stage)),
      hint_(hint_for(cause.kind())) {}

fs::path default_output_root() {
    if (const char* env = std::getenv("FWDLAB_OUT"); env && *env) return env;
    return "fwdlab-out";
}

PolicyField make_kappa(const ExperimentConfig& cfg) {
    const PolicySettings& p = cfg.policy;
    const MarketSpec& M = cfg.market;
    if (p.kappa == "merton") {
        const double a = power_param(cfg);
        if (a == 0.0) return {"merton-log", [M](double t, double) { return Vec(M.eta(M.index(t))); }};
        return merton_policy(M, a);
    }
    if (p.kappa == "constant") {
        const Vec k = p.kappa_value.empty() ? Vec(Vec::Zero(M.n())) : to_vec(p.kappa_value, M.n(), "kappa_value");
        M.require_in_range(k, 0, "kappa_value");
        return constant_policy(k, "constant");
    }
    if (p.kappa == "user-table") {
        std::vector<Vec> rows;
        for (const auto& r : p.table_kappa) {
            rows.push_back(to_vec(r, M.n(), "table_kappa row"));
            M.require_in_range(rows.back(), 0, "table_kappa row");
        }
        const std::vector<double> ts = p.table_t;
        return {"user-table", [ts, rows](double t, double) {
                    const auto it = std::upper_bound(ts.begin(), ts.end(), t + 1e-12);
                    const std::size_t i = it == ts.begin() ? 0 : static_cast<std::size_t>(it - ts.begin()) - 1;
                    return rows[i];
                }};
    }
    if (p.kappa == "from-closed-form") {
        if (cfg.kind != "zn") throw Error(ErrorKind::InvalidConfig, "from-closed-form needs a [family] experiment");
        return constant_policy(to_vec(cfg.family.sigma_N, M.n(), "sigma_N"), "sigma_N");
    }
    throw Error(ErrorKind::InvalidConfig, "unknown kappa generator '" + p.kappa + "'");
}

DualPolicyField make_nu(const ExperimentConfig& cfg) {
    const PolicySettings& p = cfg.policy;
    const MarketSpec& M = cfg.market;
    if (p.nu == "constant") {
        const Vec v = p.nu_value.empty() ? Vec(Vec::Zero(M.n())) : to_vec(p.nu_value, M.n(), "nu_value");
        M.require_orthogonal(v, 0, "nu_value");
        return constant_dual_policy(v, v.norm() == 0.0 ? "zero" : "constant");
    }
    throw Error(ErrorKind::InvalidConfig, "nu supports only the constant generator");
}

RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_root, std::ostream* log) {
    RunResult res;
    res.dir = out_root / cfg.output.dir;
    res.report.experiment = cfg.name;
    res.report.config_hash = cfg.hash;
    note(log, "run " + cfg.name + " (" + cfg.kind + ", config " + cfg.hash + ")");
    if (cfg.kind == "flow") run_flow(cfg, res, log);
    else if (cfg.kind == "zn") run_zn(cfg, res, log);
    else if (cfg.kind == "decreasing") run_decreasing(cfg, res, log);
    else throw StageError("config", Error(ErrorKind::InvalidConfig, "unknown experiment kind '" + cfg.kind + "'"));
    finish_run(res, cfg, log);
    return res;
}

// ---------------------------------------------------------------- report

ReportSummary summarize_reports(const fs::path& dir, bool write) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "report directory " + dir.string() + " does not exist");
    ReportSummary s;
    std::vector<std::pair<std::string, fs::path>> sources;
    if (fs::exists(dir / "report.json")) sources.emplace_back("", dir / "report.json");
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& d : subdirs) sources.emplace_back(d.filename().string(), d / "report.json");

    std::vector<std::pair<std::string, std::vector<SummaryRow>>> groups;
    for (const auto& [label, path] : sources) {
        std::vector<SummaryRow> rows;
        std::string name = label;
        try {
            const VerificationReport r = VerificationReport::from_json(read_json(path));
            name = r.experiment;
            for (const auto& e : r.entries)
                rows.push_back({r.experiment, e.name, e.paper_ref, format_double(e.residual),
                                format_double(e.threshold), to_string(e.verdict), std::to_string(e.n_paths),
                                format_double(e.dt), r.config_hash});
        } catch (const Error&) {
            rows.clear();
            rows.push_back({name.empty() ? path.parent_path().filename().string() : name, "", "", "", "", "absent",
                            "", "", ""});
        }
        groups.emplace_back(rows.front().experiment, std::move(rows));
    }
    std::stable_sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& g : groups)
        for (auto& r : g.second) {
            if (r.verdict == "pass") ++s.pass;
            else if (r.verdict == "fail") ++s.fail;
            else if (r.verdict == "inconclusive") ++s.inconclusive;
            else ++s.absent;
            s.rows.push_back(std::move(r));
        }

    const std::vector<std::string> header{"experiment", "identity", "paper_ref", "residual", "threshold",
                                          "verdict",    "n_paths",  "dt",        "config_hash"};
    std::ostringstream csv;
    write_csv_row(csv, header);
    for (const auto& r : s.rows)
        write_csv_row(csv, {r.experiment, r.identity, r.paper_ref, r.residual, r.threshold, r.verdict, r.n_paths, r.dt,
                            r.config_hash});
    s.csv = csv.str();

    std::vector<std::vector<std::string>> cells{{"experiment", "identity", "verdict", "residual", "threshold"}};
    for (const auto& r : s.rows) cells.push_back({r.experiment, r.identity, r.verdict, r.residual, r.threshold});
    std::vector<std::size_t> width(5, 0);
    for (const auto& c : cells)
        for (std::size_t i = 0; i < c.size(); ++i) width[i] = std::max(width[i], c[i].size());
    std::ostringstream tab;
    for (const auto& c : cells) {
        for (std::size_t i = 0; i < c.size(); ++i)
            tab << std::left << std::setw(static_cast<int>(width[i]) + (i + 1 < c.size() ? 2 : 0)) << c[i];
        tab << '\n';
    }
    tab << s.rows.size() << " rows: " << s.pass << " pass, " << s.fail << " fail, " << s.inconclusive
        << " inconclusive, " << s.absent << " absent\n";
    s.table = tab.str();
    s.exit_code = !s.rows.empty() && s.fail == 0 && s.inconclusive == 0 && s.absent == 0 ? 0 : 1;
    if (write) write_text(dir / "summary.csv", s.csv);
    return s;
}

} // namespace fwd
