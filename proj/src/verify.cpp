#include "fwd/verify.hpp"
#include "fwd/error.hpp"

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace fwd {

const char* to_string(MartingaleMode m) {
    switch (m) {
    case MartingaleMode::Martingale: return "martingale";
    case MartingaleMode::Supermartingale: return "supermartingale";
    case MartingaleMode::Submartingale: return "submartingale";
    }
    return "unknown";
}

const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::Inconclusive: return "inconclusive";
    }
    return "unknown";
}

namespace {

Verdict verdict_from_string(const std::string& s) {
    if (s == "pass") return Verdict::Pass;
    if (s == "fail") return Verdict::Fail;
    if (s == "inconclusive") return Verdict::Inconclusive;
    throw Error(ErrorKind::InvalidInput, "unknown verdict '" + s + "'");
}

double normal_quantile(double p) {
    static const boost::math::normal_distribution<double> n01;
    return boost::math::quantile(n01, p);
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double m = 0.0;
    for (double v : x) m += v;
    m /= n;
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / (n - 1.0) / n)};
}

bool in_window(double x, const DriftOptions& opt) { return x >= opt.x_lo && x <= opt.x_hi; }

} // namespace

// ---------------------------------------------------------------- martingale test

MartingaleVerdict martingale_test(const PathSamples& s, MartingaleMode mode, const MartingaleOptions& opt) {
    const int P = s.n_paths, T = s.n_times;
    if (P < 2 || T < 2) throw Error(ErrorKind::InvalidInput, "martingale test needs at least two paths and two times");
    for (double v : s.v)
        if (!std::isfinite(v)) throw Error(ErrorKind::InvalidInput, "martingale test: non-finite sample");
    if (!(opt.confidence > 0.0 && opt.confidence < 1.0))
        throw Error(ErrorKind::InvalidConfig, "confidence must lie in (0, 1)");
    const BrownianLattice* L = opt.controls;
    if (L && (opt.path_begin < 0 || opt.path_begin + P > L->n_paths() || T - 1 > L->n_steps()))
        throw Error(ErrorKind::Coupling, "martingale test: control lattice does not cover the samples");

    // Adjusted increments, accumulated into a shadow process A with A_0 = M_0.
    std::vector<double> A(static_cast<std::size_t>(P) * T);
    for (int p = 0; p < P; ++p) A[static_cast<std::size_t>(p) * T] = s(p, 0);
    std::vector<double> inc(P);
    const int D = L ? L->dim() : 0;
    for (int k = 0; k + 1 < T; ++k) {
        for (int p = 0; p < P; ++p) inc[p] = s(p, k + 1) - s(p, k);
        if (L) {
            // Controls: dW and the centered products dW_i dW_j - delta_ij dt, all mean zero.
            const double h = L->dt();
            const int Q = 1 + D + D * (D + 1) / 2;
            Eigen::MatrixXd X(P, Q);
            Eigen::VectorXd y(P);
            for (int p = 0; p < P; ++p) {
                const double* dw = L->dW(opt.path_begin + p, k);
                X(p, 0) = 1.0;
                int q = 1;
                for (int d = 0; d < D; ++d) X(p, q++) = dw[d];
                for (int a = 0; a < D; ++a)
                    for (int c = a; c < D; ++c) X(p, q++) = (dw[a] * dw[c] - (a == c ? h : 0.0)) / h;
                y(p) = inc[p];
            }
            const Eigen::VectorXd b = (X.transpose() * X).ldlt().solve(X.transpose() * y);
            for (int p = 0; p < P; ++p) inc[p] -= X.row(p).tail(Q - 1).dot(b.tail(Q - 1));
        }
        for (int p = 0; p < P; ++p) {
            const std::size_t i = static_cast<std::size_t>(p) * T + k;
            A[i + 1] = A[i] + inc[p];
        }
    }

    double scale = 0.0;
    for (double v : s.v) scale += std::abs(v);
    scale /= static_cast<double>(s.v.size());
    const double se_floor = 1e-12 * (1.0 + scale);

    MartingaleVerdict out;
    out.mode = mode;
    out.confidence = opt.confidence;
    out.n_paths = P;
    out.n_tests = (T - 1) + (T - 2);
    const double alpha = (1.0 - opt.confidence) / out.n_tests;
    out.critical = mode == MartingaleMode::Martingale ? normal_quantile(1.0 - alpha / 2.0) : normal_quantile(1.0 - alpha);
    out.means.assign(T, 0.0);
    out.stderrs.assign(T, 0.0);

    auto stat = [&](const MeanSe& m) {
        const double z = m.mean / std::max(m.se, se_floor);
        switch (mode) {
        case MartingaleMode::Martingale: return std::abs(z);
        case MartingaleMode::Supermartingale: return z;
        case MartingaleMode::Submartingale: return -z;
        }
        return 0.0;
    };
    std::vector<double> x(P);
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 1; k < T; ++k) {
        for (int p = 0; p < P; ++p) x[p] = A[static_cast<std::size_t>(p) * T + k] - A[static_cast<std::size_t>(p) * T + k - 1];
        worst = std::max(worst, stat(mean_se(x)));
        for (int p = 0; p < P; ++p) x[p] = A[static_cast<std::size_t>(p) * T + k] - A[static_cast<std::size_t>(p) * T];
        const MeanSe a = mean_se(x);
        out.means[k] = a.mean;
        out.stderrs[k] = a.se;
        if (k >= 2) worst = std::max(worst, stat(a));
    }
    out.statistic = worst;
    out.final_drift = out.means[T - 1];
    out.final_stderr = out.stderrs[T - 1];
    if (P < 100) out.verdict = Verdict::Inconclusive;
    else out.verdict = worst <= out.critical ? Verdict::Pass : Verdict::Fail;
    return out;
}

// ---------------------------------------------------------------- cell regressions

double hjb_beta(double x, double Ux, double Uxx, const Vec& gamma_x, const MarketSpec& market, int entry) {
    const Vec v = market.projector(entry) * gamma_x + Ux * market.eta(entry);
    return -x * Ux * market.r(entry) + v.squaredNorm() / (2.0 * Uxx);
}

double dual_beta(double y, double Vy, double Vyy, const Vec& gamma_y, const MarketSpec& market, int entry) {
    const Vec perp = gamma_y - market.projector(entry) * gamma_y;
    const Vec& eta = market.eta(entry);
    return y * Vy * market.r(entry) + perp.squaredNorm() / (2.0 * Vyy) + y * gamma_y.dot(eta) -
           0.5 * y * y * Vyy * eta.squaredNorm();
}

void accumulate_hjb_drift(CellRegression& acc, const UtilityField& U, const MarketSpec& market,
                          const BrownianLattice& lattice, const DriftOptions& opt) {
    if (!U.has_gamma()) throw Error(ErrorKind::InvalidInput, "HJB residual needs gamma_x samples");
    if (!(U.lattice == lattice.ref())) throw Error(ErrorKind::Coupling, "HJB residual: field built on another lattice");
    if (acc.n_times() != U.n_times() - 1 || acc.n_grid() != U.n_grid() || acc.dim() != lattice.dim())
        throw Error(ErrorKind::InvalidInput, "HJB residual: accumulator shape does not match the field");
    const double dt = U.dt;
    for (int p = 0; p < U.n_paths(); ++p)
        for (int k = 0; k + 1 < U.n_times(); ++k) {
            const int mk = market.index(k * dt);
            const double* dW = lattice.dW(U.path_begin + p, k);
            for (int j = 0; j < U.n_grid(); ++j) {
                const double x = U.x_grid[j];
                if (!in_window(x, opt) || !U.interior(p, k, j) || !U.interior(p, k + 1, j)) continue;
                const double u0 = U.U(p, k, j);
                const double beta = hjb_beta(x, U.Ux(p, k, j), U.Uxx(p, k, j), U.gamma_at(p, k, j), market, mk) +
                                    opt.beta_shift * std::abs(u0);
                // A known volatility is an exact zero-mean control.
                double mart = 0.0;
                for (std::size_t d = 0; d < U.gamma.size(); ++d) mart += U.gamma[d](p, k, j) * dW[d];
                acc.add(k, j, (U.U(p, k + 1, j) - u0 - mart) / dt - beta, dW, u0, dt);
            }
        }
    acc.count_paths(U.n_paths());
}

void accumulate_dual_drift(CellRegression& acc, const DualField& D, const MarketSpec& market,
                           const BrownianLattice& lattice, const DriftOptions& opt) {
    if (!D.has_gamma()) throw Error(ErrorKind::InvalidInput, "dual drift residual needs gamma_y samples");
    if (!(D.lattice == lattice.ref())) throw Error(ErrorKind::Coupling, "dual residual: field built on another lattice");
    if (acc.n_times() != D.n_times() - 1 || acc.n_grid() != D.n_grid() || acc.dim() != lattice.dim())
        throw Error(ErrorKind::InvalidInput, "dual residual: accumulator shape does not match the field");
    const double dt = D.dt;
    for (int p = 0; p < D.n_paths(); ++p)
        for (int k = 0; k + 1 < D.n_times(); ++k) {
            const int mk = market.index(k * dt);
            const double* dW = lattice.dW(D.path_begin + p, k);
            for (int j = 0; j < D.n_grid(); ++j) {
                const double y = D.y_grid[j];
                if (!in_window(y, opt) || !D.interior(p, k, j) || !D.interior(p, k + 1, j)) continue;
                const double v0 = D.V(p, k, j);
                const double beta = dual_beta(y, D.Vy(p, k, j), D.Vyy(p, k, j), D.gamma_at(p, k, j), market, mk) +
                                    opt.beta_shift * std::abs(v0);
                acc.add(k, j, (D.V(p, k + 1, j) - v0) / dt - beta, dW, v0, dt);
            }
        }
    acc.count_paths(D.n_paths());
}

ResidualReport finish_drift(const CellRegression& acc, const std::string& name, double dt, const DriftOptions& opt,
                            const std::vector<double>& grid) {
    ResidualReport r;
    r.name = name;
    r.dt = dt;
    r.n_paths = acc.paths_seen();
    double sum_abs = 0.0, sum_scale = 0.0;
    for (int k = 0; k < acc.n_times(); ++k)
        for (int j = 0; j < acc.n_grid(); ++j) {
            if (!in_window(grid[j], opt)) continue;
            const CellRegression::Cell c = acc.solve(k, j);
            if (c.slope.empty() || !(c.scale > 0.0)) continue;
            const double rel = std::abs(c.intercept) / c.scale;
            r.residual += rel;
            r.stderr_mean += c.stderr_ / c.scale;
            sum_abs += std::abs(c.intercept);
            sum_scale += c.scale;
            if (rel > r.worst.value) r.worst = {k, j, rel};
            ++r.cells;
        }
    if (r.cells == 0) {
        r.verdict = Verdict::Inconclusive;
        return r;
    }
    r.residual /= static_cast<double>(r.cells);
    r.stderr_mean /= static_cast<double>(r.cells);
    r.relative_residual = sum_abs / sum_scale;
    r.threshold = 3.0 * r.stderr_mean + opt.allowance * dt;
    if (r.n_paths < opt.min_paths) r.verdict = Verdict::Inconclusive;
    else r.verdict = r.residual <= r.threshold ? Verdict::Pass : Verdict::Fail;
    return r;
}

ResidualReport hjb_drift_residual(const UtilityField& U, const MarketSpec& market, const BrownianLattice& lattice,
                                  const DriftOptions& opt) {
    CellRegression acc(U.n_times() - 1, U.n_grid(), lattice.dim());
    accumulate_hjb_drift(acc, U, market, lattice, opt);
    return finish_drift(acc, "hjb_drift", U.dt, opt, U.x_grid);
}

ResidualReport dual_drift_residual(const DualField& D, const MarketSpec& market, const BrownianLattice& lattice,
                                   const DriftOptions& opt) {
    CellRegression acc(D.n_times() - 1, D.n_grid(), lattice.dim());
    accumulate_dual_drift(acc, D, market, lattice, opt);
    return finish_drift(acc, "dual_drift", D.dt, opt, D.y_grid);
}

ResidualReport decreasing_dual_residual(const MeasureMixture& m, const DecreasingUtility& f, const MarketSpec& market) {
    const DualField& D = f.dual;
    ResidualReport r;
    r.name = "decreasing_dual_drift";
    r.dt = D.dt;
    r.n_paths = 0;
    r.threshold = 1e-8;
    for (int k = 0; k < D.n_times(); ++k) {
        const int mk = market.index(k * D.dt);
        const double rate = market.r(mk), eta2 = market.eta(mk).squaredNorm();
        for (int j = 0; j < D.n_grid(); ++j) {
            const double y = D.y_grid[j];
            const DualPoint d = mixture_dual(m, y, f.A[k], f.R[k], eta2, rate);
            const double pred = y * d.Vy * rate - 0.5 * y * y * d.Vyy * eta2;
            const double e = std::abs(d.Vt - pred) / (1.0 + std::abs(d.V));
            r.residual = std::max(r.residual, e);
            if (e >= r.worst.value) r.worst = {k, j, e};
            ++r.cells;
        }
    }
    r.relative_residual = r.residual;
    r.verdict = r.residual < r.threshold ? Verdict::Pass : Verdict::Fail;
    return r;
}

// ---------------------------------------------------------------- marginal dynamics

MarginalAccumulator::MarginalAccumulator(int n_times, int n_grid, int dim)
    : reg_(n_times, n_grid, dim), target_(static_cast<std::size_t>(n_times) * n_grid, Vec::Zero(dim)) {}

void MarginalAccumulator::add(const UtilityField& U, const FlowBundle& X, const MarketSpec& market,
                              const BrownianLattice& lattice, const std::function<Vec(double, double)>& nu_star,
                              const DriftOptions& opt) {
    require_coupled(U.lattice, U.path_begin, U.n_paths(), X.lattice, X.path_begin, X.n_paths(), "marginal_dynamics");
    if (!(U.lattice == lattice.ref())) throw Error(ErrorKind::Coupling, "marginal dynamics: lattice mismatch");
    const double dt = U.dt;
    const int G = X.n_grid();
    UtilitySlice s0, s1;
    std::vector<double> m0(G), m1(G);
    for (int p = 0; p < X.n_paths(); ++p) {
        s0.assign(U, p, 0);
        for (int j = 0; j < G; ++j) m0[j] = s0.marginal(X.values(p, 0, j));
        for (int k = 0; k + 1 < X.n_times(); ++k) {
            s1.assign(U, p, k + 1);
            const int mk = market.index(k * dt);
            const double* dW = lattice.dW(X.path_begin + p, k);
            for (int j = 0; j < G; ++j) {
                m1[j] = s1.marginal(X.values(p, k + 1, j));
                if (!in_window(X.grid[j], opt)) continue;
                const double e = (m1[j] - m0[j]) / (m0[j] * dt) + market.r(mk);
                reg_.add(k, j, e, dW, 1.0, dt);
                Vec target = -market.eta(mk);
                if (nu_star) target += nu_star(k * dt, m0[j]);
                target_[static_cast<std::size_t>(k) * reg_.n_grid() + j] += target;
            }
            std::swap(m0, m1);
        }
    }
    reg_.count_paths(X.n_paths());
}

MarginalDynamics MarginalAccumulator::finish(double dt, const DriftOptions& opt, const std::vector<double>& grid) const {
    MarginalDynamics out;
    out.drift = finish_drift(reg_, "marginal_drift", dt, opt, grid);
    double sum = 0.0;
    for (int k = 0; k < reg_.n_times(); ++k)
        for (int j = 0; j < reg_.n_grid(); ++j) {
            if (!in_window(grid[j], opt)) continue;
            const CellRegression::Cell c = reg_.solve(k, j);
            if (c.slope.empty()) continue;
            const Vec target = target_[static_cast<std::size_t>(k) * reg_.n_grid() + j] / static_cast<double>(c.n);
            Vec slope(reg_.dim());
            for (int d = 0; d < reg_.dim(); ++d) slope(d) = c.slope[d] * dt;
            const double tn = target.norm();
            sum += tn > 0.0 ? (slope - target).norm() / tn : slope.norm();
            ++out.cells;
        }
    if (out.cells) out.vol_rel_error = sum / static_cast<double>(out.cells);
    return out;
}

// ---------------------------------------------------------------- Ito-Ventzel

FieldIncrementModel product_field(const ScalarFlow& M) {
    FieldIncrementModel f;
    f.lattice = M.bundle.lattice;
    f.path_begin = M.bundle.path_begin;
    const ScalarFlow* m = &M;
    f.value = [m](int p, int k, double x) { return x * m->value(p, k); };
    f.beta = [m](int p, int k, double x) { return x * m->value(p, k) * m->mu_at(p, k); };
    f.gamma = [m](int p, int k, double x) { return Vec(x * m->value(p, k) * m->vol_at(p, k)); };
    f.F_x = [m](int p, int k, double) { return m->value(p, k); };
    f.F_xx = [](int, int, double) { return 0.0; };
    f.gamma_x = [m](int p, int k, double) { return Vec(m->value(p, k) * m->vol_at(p, k)); };
    return f;
}

ItoVentzelReport ito_ventzel_residual(const FieldIncrementModel& F, const ScalarFlow& X, const BrownianLattice& lattice) {
    const FlowBundle& xb = X.bundle;
    require_coupled(F.lattice, F.path_begin, xb.n_paths(), xb.lattice, xb.path_begin, xb.n_paths(), "ito_ventzel");
    if (!(xb.lattice == lattice.ref())) throw Error(ErrorKind::Coupling, "Ito-Ventzel: lattice mismatch");
    const double dt = lattice.dt();
    // Pooled regressions on dW and dW^2: the intercepts are the mean residuals.
    CellRegression with(1, 1, lattice.dim()), without(1, 1, lattice.dim());
    long n = 0;
    for (int p = 0; p < xb.n_paths(); ++p)
        for (int k = 0; k + 1 < xb.n_times(); ++k) {
            const double x0 = X.value(p, k), x1 = X.value(p, k + 1);
            const Eigen::Map<const Eigen::VectorXd> dW = lattice.dw(xb.path_begin + p, k);
            const Vec sx = x0 * X.vol_at(p, k);
            const double f0 = F.value(p, k, x0);
            const double df = F.value(p, k + 1, x1) - f0;
            const double pred = F.beta(p, k, x0) * dt + F.gamma(p, k, x0).dot(dW) + F.F_x(p, k, x0) * (x1 - x0) +
                                0.5 * F.F_xx(p, k, x0) * sx.squaredNorm() * dt;
            const double corr = F.gamma_x(p, k, x0).dot(sx) * dt;
            const double scale = std::max(std::abs(f0), 1e-300);
            with.add(0, 0, (df - pred - corr) / (dt * scale), dW.data(), 1.0, dt);
            without.add(0, 0, (df - pred) / (dt * scale), dW.data(), 1.0, dt);
            ++n;
        }
    const int m = 2 + lattice.dim() + lattice.dim() * (lattice.dim() + 1) / 2;
    if (n < m) throw Error(ErrorKind::InvalidInput, "Ito-Ventzel residual needs more increments than regressors");
    auto fill = [&](ResidualReport& r, const char* name, const CellRegression& reg) {
        const CellRegression::Cell c = reg.solve(0, 0);
        r.name = name;
        r.residual = std::abs(c.intercept);
        r.relative_residual = r.residual;
        r.stderr_mean = c.stderr_;
        r.threshold = 3.0 * r.stderr_mean + dt;
        r.dt = dt;
        r.n_paths = xb.n_paths();
        r.cells = n;
        r.verdict = r.residual <= r.threshold ? Verdict::Pass : Verdict::Fail;
    };
    ItoVentzelReport out;
    fill(out.with_correction, "ito_ventzel", with);
    fill(out.without_correction, "ito_ventzel_uncorrected", without);
    return out;
}

std::vector<double> convergence_ratios(const std::vector<ResidualReport>& levels) {
    std::vector<double> r;
    for (std::size_t i = 0; i + 1 < levels.size(); ++i) r.push_back(levels[i].residual / levels[i + 1].residual);
    return r;
}

void attach_convergence(std::vector<ResidualReport>& levels) {
    if (levels.size() < 2) return;
    const double slope =
        std::log2(levels.front().residual / levels.back().residual) / static_cast<double>(levels.size() - 1);
    for (auto& l : levels) l.slope = slope;
}

// ---------------------------------------------------------------- risk tolerance

RiskToleranceCheck risk_tolerance_check(const UtilityField& U, const FlowBundle& X, const FlowBundle& Y,
                                        const InitialUtility& u, double x0, const DriftOptions& opt) {
    require_coupled(U.lattice, U.path_begin, U.n_paths(), X.lattice, X.path_begin, X.n_paths(), "risk_tolerance");
    require_coupled(X.lattice, X.path_begin, X.n_paths(), Y.lattice, Y.path_begin, Y.n_paths(), "risk_tolerance");
    const Plane Xx = flow_initial_derivative(X);
    const int G = X.n_grid();
    const double y0 = u.ux(x0);
    std::vector<double> ylog(Y.n_grid());
    for (int i = 0; i < Y.n_grid(); ++i) ylog[i] = std::log(Y.grid[i]);
    const std::vector<double> xs{x0};
    RiskToleranceCheck out;
    out.product = PathSamples(X.n_paths(), X.n_times());
    UtilitySlice s;
    LogLogCurve yc, xc;
    for (int p = 0; p < X.n_paths(); ++p)
        for (int k = 0; k < X.n_times(); ++k) {
            s.assign(U, p, k);
            yc.assign(Y.grid.data(), Y.values.row(p, k), Y.n_grid(), ylog.data());
            xc.assign(X.grid.data(), X.values.row(p, k), G);
            out.product(p, k) = yc.deriv(y0) * s.risk_tolerance(xc.eval(x0));
            for (int j = 0; j < G; ++j) {
                const double x = X.grid[j];
                if (!in_window(x, opt)) continue;
                const double aU = s.risk_tolerance(X.values(p, k, j));
                const double target = u.risk_tolerance(x) * Xx(p, k, j);
                const double e = std::abs(aU - target) / std::abs(target);
                out.max_rel_error = std::max(out.max_rel_error, e);
                out.sum_rel_error += e;
                ++out.cells;
            }
        }
    return out;
}

// ---------------------------------------------------------------- reports

IdentityResult to_identity(const ResidualReport& r, std::string tag) {
    return {r.name, std::move(tag), r.residual, r.threshold, r.verdict, r.n_paths, r.dt};
}

IdentityResult to_identity(const MartingaleVerdict& v, std::string name, std::string tag, double dt) {
    return {std::move(name), std::move(tag), v.statistic, v.critical, v.verdict, v.n_paths, dt};
}

const char* VerificationReport::caveat() {
    return "Finite-sample tests support but cannot establish true (rather than local) martingality or "
           "integrability; verdicts certify bounded-horizon behaviour on the simulated lattice only.";
}

bool VerificationReport::all_pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const IdentityResult& e) { return e.verdict == Verdict::Pass; });
}

nlohmann::json VerificationReport::to_json() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["config_hash"] = config_hash;
    j["caveat"] = caveat();
    j["all_pass"] = all_pass();
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries)
        arr.push_back({{"name", e.name},
                       {"paper_ref", e.paper_ref},
                       {"residual", e.residual},
                       {"threshold", e.threshold},
                       {"verdict", to_string(e.verdict)},
                       {"n_paths", e.n_paths},
                       {"dt", e.dt}});
    j["entries"] = arr;
    return j;
}

VerificationReport VerificationReport::from_json(const nlohmann::json& j) {
    try {
        VerificationReport r;
        r.experiment = j.at("experiment").get<std::string>();
        r.config_hash = j.value("config_hash", "");
        for (const auto& e : j.at("entries")) {
            IdentityResult x;
            x.name = e.at("name").get<std::string>();
            x.paper_ref = e.value("paper_ref", "");
            x.residual = e.at("residual").get<double>();
            x.threshold = e.at("threshold").get<double>();
            x.verdict = verdict_from_string(e.at("verdict").get<std::string>());
            x.n_paths = e.value("n_paths", 0L);
            x.dt = e.value("dt", 0.0);
            r.entries.push_back(std::move(x));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Io, std::string("malformed verification report: ") + e.what());
    }
}

} // namespace fwd
