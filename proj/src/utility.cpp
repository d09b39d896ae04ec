#include "fwd/utility.hpp"
#include "fwd/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fwd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_log_atom(double alpha) { return std::abs(alpha - 1.0) < 1e-12; }

struct AtomTerms {
    double phi, phi_y, phi_yy, phi_A;
};

// One mixture atom: (1/q)(1 - y^q e^{-kA}), q = 1 - 1/alpha, k = (1-alpha)/(2 alpha^2).
AtomTerms atom(double alpha, double y, double A) {
    if (is_log_atom(alpha)) return {-std::log(y) - 0.5 * A, -1.0 / y, 1.0 / (y * y), -0.5};
    const double q = 1.0 - 1.0 / alpha;
    const double k = (1.0 - alpha) / (2.0 * alpha * alpha);
    const double e = std::exp(-k * A);
    const double yq = std::pow(y, q);
    return {(1.0 - yq * e) / q, -yq / y * e, yq / (y * y) * e / alpha, yq * e * k / q};
}

// Three-point parabola through (s_i, f_i); returns the extremum value and location.
bool parabola_vertex(const double* s, const double* f, double& s_star, double& f_star) {
    const double d1 = (f[1] - f[0]) / (s[1] - s[0]);
    const double d2 = (f[2] - f[1]) / (s[2] - s[1]);
    const double a = (d2 - d1) / (s[2] - s[0]);
    if (a == 0.0) return false;
    const double b = d1 - a * (s[0] + s[1]);
    s_star = -b / (2.0 * a);
    f_star = f[0] + d1 * (s_star - s[0]) + a * (s_star - s[0]) * (s_star - s[1]);
    return true;
}

double interp_log_linear(const std::vector<double>& logx, const double* v, double lx) {
    const int n = static_cast<int>(logx.size());
    if (lx <= logx[0]) return v[0];
    if (lx >= logx[n - 1]) return v[n - 1];
    auto it = std::upper_bound(logx.begin(), logx.end(), lx);
    const int i = static_cast<int>(it - logx.begin()) - 1;
    const double w = (lx - logx[i]) / (logx[i + 1] - logx[i]);
    return (1.0 - w) * v[i] + w * v[i + 1];
}

std::vector<double> logs(const std::vector<double>& x) {
    std::vector<double> l(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) l[i] = std::log(x[i]);
    return l;
}

double u_at_zero(const InitialUtility& u) {
    switch (u.kind()) {
    case UtilityKind::Power: return u.param() > 0.0 ? 0.0 : -kInf;
    case UtilityKind::Exponential: return -1.0 / u.param();
    case UtilityKind::Log: return -kInf;
    case UtilityKind::Mixture: {
        const auto& m = u.measure();
        double v = m.C;
        for (std::size_t i = 0; i < m.alphas.size(); ++i) {
            if (m.alphas[i] >= 1.0) return -kInf;
            v += m.weights[i] / (1.0 - 1.0 / m.alphas[i]);
        }
        return v;
    }
    }
    return -kInf;
}

} // namespace

// ---------------------------------------------------------------- mixtures

MeasureMixture MeasureMixture::normalized(std::vector<double> alphas, std::vector<double> weights, bool log_limit) {
    MeasureMixture m{std::move(alphas), std::move(weights), 0.0, log_limit};
    m.validate();
    bool all_below = true;
    double c = 0.0;
    for (std::size_t i = 0; i < m.alphas.size(); ++i) {
        if (m.alphas[i] >= 1.0) all_below = false;
        else c -= m.weights[i] / (1.0 - 1.0 / m.alphas[i]);
    }
    m.C = all_below ? c : 0.0;
    return m;
}

void MeasureMixture::validate() const {
    if (alphas.empty() || alphas.size() != weights.size())
        throw Error(ErrorKind::InvalidConfig, "mixture needs matching, nonempty atoms and weights");
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (!(alphas[i] > 0.0) || !(weights[i] > 0.0) || !std::isfinite(alphas[i]) || !std::isfinite(weights[i]))
            throw Error(ErrorKind::InvalidConfig, "mixture atoms and weights must be positive");
        if (is_log_atom(alphas[i]) && !log_limit)
            throw Error(ErrorKind::InvalidConfig, "atom at alpha = 1 requires the log-limit flag");
        for (std::size_t j = 0; j < i; ++j)
            if (alphas[i] == alphas[j]) throw Error(ErrorKind::InvalidConfig, "mixture atoms must be distinct");
    }
}

DualPoint mixture_dual(const MeasureMixture& m, double y, double A, double R, double eta2, double r) {
    if (!(y > 0.0)) throw Error(ErrorKind::InvalidInput, "dual variable must be positive");
    const double scale = std::exp(R), Y = y * scale;
    DualPoint d;
    d.V = m.C;
    double sy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < m.alphas.size(); ++i) {
        const AtomTerms a = atom(m.alphas[i], Y, A);
        const double w = m.weights[i];
        d.V += w * a.phi;
        sy += w * a.phi_y;
        syy += w * a.phi_yy;
        d.Vt += w * (a.phi_A * eta2 + a.phi_y * Y * r);
    }
    d.Vy = scale * sy;
    d.Vyy = scale * scale * syy;
    return d;
}

PrimalPoint mixture_primal(const MeasureMixture& m, double x, double A, double R) {
    if (!(x > 0.0)) throw Error(ErrorKind::InvalidInput, "wealth must be positive");
    // Solve -V_y(y) = x in s = log y; -V_y is decreasing in y.
    auto F = [&](double s) { return std::log(-mixture_dual(m, std::exp(s), A, R).Vy) - std::log(x); };
    double lo = -1.0, hi = 1.0;
    while (F(lo) < 0.0) lo -= 2.0 * (hi - lo);
    while (F(hi) > 0.0) hi += 2.0 * (hi - lo);
    double s = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double y = std::exp(s);
        const DualPoint d = mixture_dual(m, y, A, R);
        const double f = std::log(-d.Vy) - std::log(x);
        if (f > 0.0) lo = s; else hi = s;
        if (std::abs(f) < 1e-15 || hi - lo < 1e-15) break;
        const double fp = y * d.Vyy / d.Vy;  // d/ds log(-V_y)
        double next = s - f / fp;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        s = next;
    }
    const double y = std::exp(s);
    const DualPoint d = mixture_dual(m, y, A, R);
    return {d.V + x * y, y, -1.0 / d.Vyy};
}

// ---------------------------------------------------------------- initial utilities

InitialUtility InitialUtility::power(double a, bool allow_negative) {
    if (!(a < 1.0) || a == 0.0 || (a < 0.0 && !allow_negative) || !std::isfinite(a))
        throw Error(ErrorKind::InvalidConfig, "power utility needs a in (0,1) (a < 0 only with the override flag)");
    InitialUtility u;
    u.kind_ = UtilityKind::Power;
    u.p_ = a;
    return u;
}

InitialUtility InitialUtility::exponential(double c) {
    if (!(c > 0.0) || !std::isfinite(c)) throw Error(ErrorKind::InvalidConfig, "exponential utility needs c > 0");
    InitialUtility u;
    u.kind_ = UtilityKind::Exponential;
    u.p_ = c;
    return u;
}

InitialUtility InitialUtility::log() {
    InitialUtility u;
    u.kind_ = UtilityKind::Log;
    u.p_ = 0.0;
    return u;
}

InitialUtility InitialUtility::mixture(MeasureMixture m) {
    m.validate();
    InitialUtility u;
    u.kind_ = UtilityKind::Mixture;
    u.m_ = std::move(m);
    return u;
}

std::string InitialUtility::describe() const {
    switch (kind_) {
    case UtilityKind::Power: return "power(a=" + std::to_string(p_) + ")";
    case UtilityKind::Exponential: return "exponential(c=" + std::to_string(p_) + ")";
    case UtilityKind::Log: return "log";
    case UtilityKind::Mixture: return "mixture(" + std::to_string(m_.alphas.size()) + " atoms)";
    }
    return "unknown";
}

double InitialUtility::u(double x) const {
    switch (kind_) {
    case UtilityKind::Power: return std::pow(x, p_) / p_;
    case UtilityKind::Exponential: return -std::exp(-p_ * x) / p_;
    case UtilityKind::Log: return std::log(x);
    case UtilityKind::Mixture: return mixture_primal(m_, x, 0.0, 0.0).U;
    }
    return 0.0;
}

double InitialUtility::ux(double x) const {
    switch (kind_) {
    case UtilityKind::Power: return std::pow(x, p_ - 1.0);
    case UtilityKind::Exponential: return std::exp(-p_ * x);
    case UtilityKind::Log: return 1.0 / x;
    case UtilityKind::Mixture: return mixture_primal(m_, x, 0.0, 0.0).Ux;
    }
    return 0.0;
}

double InitialUtility::uxx(double x) const {
    switch (kind_) {
    case UtilityKind::Power: return (p_ - 1.0) * std::pow(x, p_ - 2.0);
    case UtilityKind::Exponential: return -p_ * std::exp(-p_ * x);
    case UtilityKind::Log: return -1.0 / (x * x);
    case UtilityKind::Mixture: return mixture_primal(m_, x, 0.0, 0.0).Uxx;
    }
    return 0.0;
}

double InitialUtility::conj(double y) const {
    switch (kind_) {
    case UtilityKind::Power: return (1.0 - p_) / p_ * std::pow(y, p_ / (p_ - 1.0));
    case UtilityKind::Exponential: return y < 1.0 ? y / p_ * (std::log(y) - 1.0) : -1.0 / p_;
    case UtilityKind::Log: return -std::log(y) - 1.0;
    case UtilityKind::Mixture: return mixture_dual(m_, y, 0.0, 0.0).V;
    }
    return 0.0;
}

double InitialUtility::conj_y(double y) const {
    switch (kind_) {
    case UtilityKind::Power: return -std::pow(y, 1.0 / (p_ - 1.0));
    case UtilityKind::Exponential: return y < 1.0 ? std::log(y) / p_ : 0.0;
    case UtilityKind::Log: return -1.0 / y;
    case UtilityKind::Mixture: return mixture_dual(m_, y, 0.0, 0.0).Vy;
    }
    return 0.0;
}

InitialUtility make_initial_utility(const std::string& kind, const nlohmann::json& params) {
    try {
        if (kind == "power") return InitialUtility::power(params.at("a").get<double>(), params.value("allow_negative", false));
        if (kind == "exponential") return InitialUtility::exponential(params.at("c").get<double>());
        if (kind == "log") return InitialUtility::log();
        if (kind == "mixture") {
            auto alphas = params.at("alphas").get<std::vector<double>>();
            auto weights = params.at("weights").get<std::vector<double>>();
            const bool log_limit = params.value("log_limit", false);
            MeasureMixture m = MeasureMixture::normalized(alphas, weights, log_limit);
            if (params.contains("C")) m.C = params.at("C").get<double>();
            return InitialUtility::mixture(m);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("utility parameters: ") + e.what());
    }
    throw Error(ErrorKind::InvalidConfig, "unknown utility kind '" + kind + "'");
}

const char* to_string(Provenance p) {
    switch (p) {
    case Provenance::FlowBuilt: return "flow-built";
    case Provenance::ClosedForm: return "closed-form";
    case Provenance::External: return "external";
    }
    return "unknown";
}

// ---------------------------------------------------------------- fields

Vec UtilityField::gamma_at(int p, int k, int j) const {
    Vec g(static_cast<int>(gamma_x.size()));
    for (std::size_t i = 0; i < gamma_x.size(); ++i) g(static_cast<int>(i)) = gamma_x[i](p, k, j);
    return g;
}

UtilitySlice UtilityField::slice(int p, int k) const {
    UtilitySlice s;
    s.assign(*this, p, k);
    return s;
}

void UtilitySlice::assign(const UtilityField& f, int p, int k) {
    n_ = f.n_grid();
    x_ = f.x_grid.data();
    U_ = f.U.row(p, k);
    g_.assign(f.x_grid.data(), f.Ux.row(p, k), n_, f.log_x.empty() ? nullptr : f.log_x.data());
}

double UtilitySlice::value(double x) const {
    if (x < x_[0]) return U_[0] - g_.integral(x, x_[0]);
    const int j = static_cast<int>(std::upper_bound(x_, x_ + n_, x) - x_) - 1;
    return U_[j] + g_.integral(x_[j], x);
}

Vec DualField::gamma_at(int p, int k, int j) const {
    Vec g(static_cast<int>(gamma_y.size()));
    for (std::size_t i = 0; i < gamma_y.size(); ++i) g(static_cast<int>(i)) = gamma_y[i](p, k, j);
    return g;
}

DualSlice DualField::slice(int p, int k) const {
    DualSlice s;
    s.assign(*this, p, k);
    return s;
}

void DualSlice::assign(const DualField& f, int p, int k) {
    n_ = f.n_grid();
    y_ = f.y_grid.data();
    V_ = f.V.row(p, k);
    std::vector<double> h(n_);
    const double* vy = f.Vy.row(p, k);
    for (int j = 0; j < n_; ++j) h[j] = -vy[j];
    h_.assign(f.y_grid.data(), h.data(), n_, f.log_y.empty() ? nullptr : f.log_y.data());
}

double DualSlice::value(double y) const {
    if (y < y_[0]) return V_[0] + h_.integral(y, y_[0]);
    const int j = static_cast<int>(std::upper_bound(y_, y_ + n_, y) - y_) - 1;
    return V_[j] - h_.integral(y_[j], y);
}

// ---------------------------------------------------------------- construction from flows

UtilityField build_utility_field(const FlowBundle& X, const FlowBundle& Y, const InitialUtility& u,
                                 const std::vector<double>& z_grid, const FlowGenerators& gen) {
    return build_utility_field(X, invert_flow(X, z_grid), Y, u, gen);
}

UtilityField build_utility_field(const FlowBundle& X, const InverseFlowField& inv, const FlowBundle& Y,
                                 const InitialUtility& u, const FlowGenerators& gen) {
    require_coupled(X.lattice, X.path_begin, X.n_paths(), Y.lattice, Y.path_begin, Y.n_paths(), "build_utility_field");
    require_coupled(X.lattice, X.path_begin, X.n_paths(), inv.lattice, inv.path_begin, inv.values.n_paths,
                    "build_utility_field");
    if (X.role != Role::Wealth || Y.role != Role::Spd)
        throw Error(ErrorKind::InvalidInput, "build_utility_field expects a wealth and a density bundle");
    const int P = X.n_paths(), T = X.n_times(), G = static_cast<int>(inv.z_grid.size());
    if (G < 3) throw Error(ErrorKind::InvalidInput, "utility construction needs at least three grid points");
    const bool with_gamma = gen.market && gen.kappa;
    const int D = X.lattice.dim;

    UtilityField f;
    f.x_grid = inv.z_grid;
    f.log_x = logs(f.x_grid);
    f.U = Plane(P, T, G);
    f.Ux = Plane(P, T, G);
    f.Uxx = Plane(P, T, G);
    f.flags.assign(f.U.v.size(), 0);
    if (with_gamma) f.gamma_x.assign(D, Plane(P, T, G));
    f.provenance = Provenance::FlowBuilt;
    f.lattice = X.lattice;
    f.path_begin = X.path_begin;
    f.dt = X.lattice.dt;

    const double u0 = u_at_zero(u);
    const auto ylog = logs(Y.grid);
    LogLogCurve ycurve, gcurve;
    std::vector<double> init_U(G);
    for (int j = 0; j < G; ++j) init_U[j] = std::isfinite(u0) ? u.u(f.x_grid[j]) - u0 : u.u(f.x_grid[j]);

    for (int p = 0; p < P; ++p) {
        for (int k = 0; k < T; ++k) {
            ycurve.assign(Y.grid.data(), Y.values.row(p, k), Y.n_grid(), ylog.data());
            double* g = f.Ux.row(p, k);
            for (int j = 0; j < G; ++j) {
                bool ext = false;
                g[j] = ycurve.eval(u.ux(inv.values(p, k, j)), &ext);
                if (ext || inv.flag(p, k, j) != kInterior) f.flags[f.U.index(p, k, j)] = 1;
                if (j > 0 && !(g[j] < g[j - 1]))
                    throw Error(ErrorKind::InvalidField, "marginal utility not decreasing at path " +
                                                             std::to_string(X.path_begin + p) + ", time index " +
                                                             std::to_string(k));
            }
            gcurve.assign(f.x_grid.data(), g, G, f.log_x.data());
            double* U = f.U.row(p, k);
            if (k == 0) {
                for (int j = 0; j < G; ++j) U[j] = init_U[j];
            } else {
                const double tail = gcurve.left_tail_integral();
                if (std::isfinite(tail)) {
                    U[0] = tail;
                } else {
                    U[0] = init_U[0];
                    f.flags[f.U.index(p, k, 0)] |= 4;
                }
                for (int j = 1; j < G; ++j) U[j] = U[j - 1] + gcurve.cell_integral(j - 1);
            }
            double* Uxx = f.Uxx.row(p, k);
            for (int j = 0; j < G; ++j) Uxx[j] = g[j] * gcurve.node_elasticity(j) / f.x_grid[j];
            if (with_gamma) {
                const double t = k * f.dt;
                const int mk = gen.market->index(t);
                const Vec& eta = gen.market->eta(mk);
                for (int j = 0; j < G; ++j) {
                    const double x = f.x_grid[j];
                    Vec gx = -g[j] * eta - x * Uxx[j] * gen.kappa->kappa(t, x);
                    if (gen.nu) gx += gen.nu->nu(t, g[j]);
                    for (int d = 0; d < D; ++d) f.gamma_x[d](p, k, j) = gx(d);
                }
            }
        }
    }
    return f;
}

std::vector<double> dual_grid_for(const InitialUtility& u, const std::vector<double>& x_grid) {
    return log_grid(u.ux(x_grid.back()), u.ux(x_grid.front()), static_cast<int>(x_grid.size()));
}

// ---------------------------------------------------------------- conjugation

DualField conjugate_field(const UtilityField& U, const std::vector<double>& y_grid, const MarketSpec* market) {
    (void)market;
    const int P = U.n_paths(), T = U.n_times(), G = U.n_grid(), Yn = static_cast<int>(y_grid.size());
    if (Yn < 3) throw Error(ErrorKind::InvalidInput, "dual grid needs at least three points");
    for (int p = 0; p < P; ++p)
        for (int k = 0; k < T; ++k) {
            const double* uxx = U.Uxx.row(p, k);
            for (int j = 0; j < G; ++j)
                if (!(uxx[j] < 0.0))
                    throw Error(ErrorKind::InvalidField, "utility not strictly concave at path " +
                                                             std::to_string(U.path_begin + p) + ", time index " +
                                                             std::to_string(k));
        }
    DualField D;
    D.y_grid = y_grid;
    D.log_y = logs(y_grid);
    D.V = Plane(P, T, Yn);
    D.Vy = Plane(P, T, Yn);
    D.Vyy = Plane(P, T, Yn);
    D.flags.assign(D.V.v.size(), 0);
    D.lattice = U.lattice;
    D.path_begin = U.path_begin;
    D.dt = U.dt;
    const int nG = static_cast<int>(U.gamma_x.size());
    if (nG) D.gamma_y.assign(nG, Plane(P, T, Yn));

    const auto& s = U.log_x;
    std::vector<double> f(G);
    UtilitySlice S;
    for (int p = 0; p < P; ++p) {
        for (int k = 0; k < T; ++k) {
            S.assign(U, p, k);
            const double* u = U.U.row(p, k);
            int i = G - 1;
            for (int jy = 0; jy < Yn; ++jy) {
                const double y = y_grid[jy];
                auto val = [&](int idx) { return u[idx] - U.x_grid[idx] * y; };
                while (i > 0 && val(i - 1) >= val(i)) --i;
                // The discrete argmax only brackets; the maximizer itself solves U_x(x*) = y
                // on the shape-preserving interpolant.
                bool ext = false;
                const double xstar = S.marginal_inverse(y, &ext);
                const double V = S.value(xstar) - xstar * y;
                if (i == 0 || i == G - 1 || ext) D.flags[D.V.index(p, k, jy)] = 1;
                const double uxx = S.curvature(xstar);
                D.V(p, k, jy) = V;
                D.Vy(p, k, jy) = -xstar;
                D.Vyy(p, k, jy) = -1.0 / uxx;
                if (nG) {
                    const double lx = std::log(xstar);
                    for (int d = 0; d < nG; ++d) {
                        const double gx = interp_log_linear(s, U.gamma_x[d].row(p, k), lx);
                        D.gamma_y[d](p, k, jy) = -gx * D.Vyy(p, k, jy);
                    }
                }
            }
        }
    }
    return D;
}

Plane biconjugate(const DualField& D, const std::vector<double>& x_grid) {
    const int P = D.n_paths(), T = D.n_times(), Yn = D.n_grid(), X = static_cast<int>(x_grid.size());
    Plane out(P, T, X, std::numeric_limits<double>::quiet_NaN());
    const auto& s = D.log_y;
    for (int p = 0; p < P; ++p)
        for (int k = 0; k < T; ++k) {
            const double* v = D.V.row(p, k);
            int i = Yn - 1;
            for (int jx = 0; jx < X; ++jx) {
                const double x = x_grid[jx];
                auto val = [&](int idx) { return v[idx] + D.y_grid[idx] * x; };
                // Minimizer index decreases as x grows.
                while (i > 0 && val(i - 1) <= val(i)) --i;
                if (i == 0 || i == Yn - 1) continue;
                const double fs[3] = {val(i - 1), val(i), val(i + 1)};
                double s_star, f_star;
                out(p, k, jx) = parabola_vertex(&s[i - 1], fs, s_star, f_star) ? f_star : fs[1];
            }
        }
    return out;
}

// ---------------------------------------------------------------- closed-form families

ZNField closed_form_ZN(const InitialUtility& v, const ScalarFlow& Z, const ScalarFlow& N, const MarketSpec& market,
                       const std::vector<double>& x_grid) {
    require_coupled(Z.bundle.lattice, Z.bundle.path_begin, Z.bundle.n_paths(), N.bundle.lattice, N.bundle.path_begin,
                    N.bundle.n_paths(), "closed_form_ZN");
    const int P = Z.bundle.n_paths(), T = Z.bundle.n_times(), G = static_cast<int>(x_grid.size());
    const int D = Z.bundle.lattice.dim;
    const double dt = Z.bundle.lattice.dt;
    ZNField out;
    UtilityField& f = out.field;
    f.x_grid = x_grid;
    f.log_x = logs(x_grid);
    f.U = Plane(P, T, G);
    f.Ux = Plane(P, T, G);
    f.Uxx = Plane(P, T, G);
    f.gamma_x.assign(D, Plane(P, T, G));
    f.gamma.assign(D, Plane(P, T, G));
    f.provenance = Provenance::ClosedForm;
    f.lattice = Z.bundle.lattice;
    f.path_begin = Z.bundle.path_begin;
    f.dt = dt;

    ConditionReport& c = out.condition;
    switch (v.kind()) {
    case UtilityKind::Power: c.family = "power"; break;
    case UtilityKind::Exponential: c.family = "exponential"; break;
    default: c.family = "general"; break;
    }
    for (int p = 0; p < P; ++p) {
        for (int k = 0; k < T; ++k) {
            const int ks = std::min(k, T - 2);
            const double z = Z.value(p, k), n = N.value(p, k);
            const Vec sz = Z.vol_at(p, ks), sn = N.vol_at(p, ks);
            for (int j = 0; j < G; ++j) {
                const double x = x_grid[j], u = x / n;
                const double U = z * v.u(u), Ux = z / n * v.ux(u), Uxx = z / (n * n) * v.uxx(u);
                f.U(p, k, j) = U;
                f.Ux(p, k, j) = Ux;
                f.Uxx(p, k, j) = Uxx;
                const Vec gx = Ux * sz - (Ux + x * Uxx) * sn;
                const Vec g = U * sz - x * Ux * sn;
                for (int d = 0; d < D; ++d) {
                    f.gamma_x[d](p, k, j) = gx(d);
                    f.gamma[d](p, k, j) = g(d);
                }
            }
            if (k == T - 1) continue;
            const int mk = market.index(k * dt);
            const double r = market.r(mk), muz = Z.mu_at(p, k), mun = N.mu_at(p, k);
            const Vec& eta = market.eta(mk);
            Vec sn_s, sn_p, sz_s, sz_p;
            market.split(sn, mk, sn_s, sn_p);
            market.split(sz, mk, sz_s, sz_p);
            const Vec w = eta - sn_s + sz_s;
            double viol = 0.0, scale = 1.0 + std::abs(muz) + std::abs(mun) + std::abs(r) + w.squaredNorm();
            if (c.family == "power") {
                const double a = v.param();
                viol = std::abs(muz / a + r - mun + sn.dot(eta) - sn_p.dot(sz_p) + w.squaredNorm() / (2.0 * (1.0 - a)) +
                                0.5 * (1.0 + a) * sn_p.squaredNorm());
                scale /= std::abs(a);
            } else if (c.family == "exponential") {
                viol = std::max({std::abs(mun - r - sn.dot(eta)), std::abs(muz - 0.5 * w.squaredNorm()), sn_p.norm()});
            } else {
                viol = std::max({std::abs(muz), sn_p.norm(), std::abs(muz + r - mun + sn.squaredNorm() - sn.dot(sz)),
                                 w.norm()});
            }
            c.max_violation = std::max(c.max_violation, viol / scale);
        }
    }
    c.pass = c.max_violation <= c.tolerance;
    return out;
}

DecreasingUtility decreasing_utility(const MeasureMixture& m, const MarketSpec& market, int n_steps, double dt,
                                     const std::vector<double>& y_grid, const std::vector<double>& x_grid) {
    m.validate();
    if (n_steps < 1 || !(dt > 0.0)) throw Error(ErrorKind::InvalidConfig, "decreasing utility needs a time grid");
    DecreasingUtility out;
    const int T = n_steps + 1, Yn = static_cast<int>(y_grid.size()), G = static_cast<int>(x_grid.size());
    out.A.assign(T, 0.0);
    out.R.assign(T, 0.0);
    for (int k = 0; k < n_steps; ++k) {
        const int mk = market.index(k * dt);
        out.A[k + 1] = out.A[k] + market.eta(mk).squaredNorm() * dt;
        out.R[k + 1] = out.R[k] + market.r(mk) * dt;
    }
    DualField& D = out.dual;
    D.y_grid = y_grid;
    D.log_y = logs(y_grid);
    D.V = Plane(1, T, Yn);
    D.Vy = Plane(1, T, Yn);
    D.Vyy = Plane(1, T, Yn);
    D.gamma_y.assign(market.n(), Plane(1, T, Yn));
    D.dt = dt;
    D.lattice = {0, 1, n_steps, market.n(), dt};
    UtilityField& U = out.primal;
    U.x_grid = x_grid;
    U.log_x = logs(x_grid);
    U.U = Plane(1, T, G);
    U.Ux = Plane(1, T, G);
    U.Uxx = Plane(1, T, G);
    U.gamma_x.assign(market.n(), Plane(1, T, G));
    U.provenance = Provenance::ClosedForm;
    U.dt = dt;
    U.lattice = D.lattice;
    for (int k = 0; k < T; ++k) {
        for (int j = 0; j < Yn; ++j) {
            const DualPoint d = mixture_dual(m, y_grid[j], out.A[k], out.R[k]);
            D.V(0, k, j) = d.V;
            D.Vy(0, k, j) = d.Vy;
            D.Vyy(0, k, j) = d.Vyy;
        }
        for (int j = 0; j < G; ++j) {
            const PrimalPoint q = mixture_primal(m, x_grid[j], out.A[k], out.R[k]);
            U.U(0, k, j) = q.U;
            U.Ux(0, k, j) = q.Ux;
            U.Uxx(0, k, j) = q.Uxx;
        }
    }
    return out;
}

// ---------------------------------------------------------------- optimal policies

PolicySamples optimal_policy_from_field(const UtilityField& U, const MarketSpec& market) {
    if (!U.has_gamma()) throw Error(ErrorKind::InvalidInput, "optimal policy needs gamma_x samples");
    const int P = U.n_paths(), T = U.n_times(), G = U.n_grid(), D = market.n();
    PolicySamples out;
    out.xkappa.assign(D, Plane(P, T, G));
    out.Q = Plane(P, T, G);
    for (int p = 0; p < P; ++p)
        for (int k = 0; k < T; ++k) {
            const int mk = market.index(k * U.dt);
            const Mat& Pr = market.projector(mk);
            const Vec& eta = market.eta(mk);
            for (int j = 0; j < G; ++j) {
                const double uxx = U.Uxx(p, k, j);
                if (!(uxx < 0.0)) throw Error(ErrorKind::InvalidField, "U_xx must be negative for the optimal policy");
                const Vec xk = -(U.Ux(p, k, j) * eta + Pr * U.gamma_at(p, k, j)) / uxx;
                for (int d = 0; d < D; ++d) out.xkappa[d](p, k, j) = xk(d);
                out.Q(p, k, j) = -xk.squaredNorm();
            }
        }
    return out;
}

std::vector<Plane> dual_optimal_nu(const DualField& Dl, const MarketSpec& market) {
    if (!Dl.has_gamma()) throw Error(ErrorKind::InvalidInput, "dual optimal nu needs gamma_y samples");
    const int P = Dl.n_paths(), T = Dl.n_times(), Yn = Dl.n_grid(), D = market.n();
    std::vector<Plane> nu(D, Plane(P, T, Yn));
    for (int p = 0; p < P; ++p)
        for (int k = 0; k < T; ++k) {
            const Mat& Pr = market.projector(market.index(k * Dl.dt));
            for (int j = 0; j < Yn; ++j) {
                const double vyy = Dl.Vyy(p, k, j);
                if (!(vyy > 0.0)) throw Error(ErrorKind::InvalidField, "Ũ_yy must be positive for the dual optimum");
                const Vec g = Dl.gamma_at(p, k, j);
                const Vec perp = g - Pr * g;
                const Vec n = -perp / (Dl.y_grid[j] * vyy);
                for (int d = 0; d < D; ++d) nu[d](p, k, j) = n(d);
            }
        }
    return nu;
}

} // namespace fwd
