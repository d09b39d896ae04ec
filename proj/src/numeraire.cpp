#include "fwd/numeraire.hpp"
#include "fwd/error.hpp"

#include <algorithm>
#include <cmath>

namespace fwd {

namespace {

constexpr double kCoefTol = 1e-12;

int step_index(const ScalarFlow& f, int k) { return std::min(k, f.bundle.n_times() - 2); }

double interp_log_linear(const std::vector<double>& logx, const double* v, double lx) {
    const int n = static_cast<int>(logx.size());
    if (lx <= logx[0]) return v[0];
    if (lx >= logx[n - 1]) return v[n - 1];
    const int i = static_cast<int>(std::upper_bound(logx.begin(), logx.end(), lx) - logx.begin()) - 1;
    const double w = (lx - logx[i]) / (logx[i + 1] - logx[i]);
    return (1.0 - w) * v[i] + w * v[i + 1];
}

double quantile(std::vector<double>& v, double q) {
    const std::size_t i = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(i), v.end());
    return v[i];
}

} // namespace

double NumeraireSpec::mu(int p, int k) const { return flow.mu_at(p, step_index(flow, k)); }

Vec NumeraireSpec::delta(int p, int k) const { return flow.vol_at(p, step_index(flow, k)); }

NumeraireSpec make_numeraire(std::string id, ScalarFlow flow, const MarketSpec& market) {
    if (flow.bundle.n_times() < 2) throw Error(ErrorKind::InvalidInput, "numeraire needs at least one step");
    NumeraireSpec n;
    n.id = std::move(id);
    n.flow = std::move(flow);
    const double dt = n.flow.bundle.lattice.dt;
    for (int p = 0; p < n.flow.bundle.n_paths(); ++p)
        for (int k = 0; k < n.flow.bundle.n_times(); ++k) {
            if (!(n.N(p, k) > 0.0))
                throw Error(ErrorKind::InvalidInput, "numeraire must be positive (path " + std::to_string(p) +
                                                         ", time index " + std::to_string(k) + ")");
            if (k + 1 == n.flow.bundle.n_times()) continue;
            Vec s, q;
            const Vec d = n.delta(p, k);
            market.split(d, market.index(k * dt), s, q);
            if (q.norm() > MarketSpec::kConstraintTol * (1.0 + d.norm())) n.delta_in_range = false;
        }
    return n;
}

NumeraireSpec numeraire_portfolio(const BrownianLattice& lattice, const MarketSpec& market, PathRange range) {
    ScalarFlow f = simulate_scalar(
        lattice,
        [&market](double t, double) {
            const int k = market.index(t);
            return market.r(k) + market.eta(k).squaredNorm();
        },
        [&market](double t, double) { return Vec(market.eta(market.index(t))); }, 1.0, range, "1/Y0");
    return make_numeraire("numeraire-portfolio", std::move(f), market);
}

NumeraireSpec bank_account(const BrownianLattice& lattice, const MarketSpec& market, PathRange range) {
    const int D = lattice.dim();
    ScalarFlow f = simulate_scalar(
        lattice, [&market](double t, double) { return market.r(market.index(t)); },
        [D](double, double) { return Vec(Vec::Zero(D)); }, 1.0, range, "bank");
    return make_numeraire("bank-account", std::move(f), market);
}

NumeraireSpec unit_numeraire(const BrownianLattice& lattice, const MarketSpec& market, PathRange range) {
    const int D = lattice.dim();
    ScalarFlow f = simulate_scalar(
        lattice, [](double, double) { return 0.0; }, [D](double, double) { return Vec(Vec::Zero(D)); }, 1.0, range,
        "unit");
    return make_numeraire("unit", std::move(f), market);
}

HattedCoefficients hatted_coefficients(const MarketSpec& market, const NumeraireSpec& N, int p, int k) {
    const int mk = market.index(k * N.flow.bundle.lattice.dt);
    const Vec d = N.delta(p, k);
    Vec ds, dp;
    market.split(d, mk, ds, dp);
    const Vec& eta = market.eta(mk);
    return {market.r(mk) - N.mu(p, k) + ds.dot(eta), eta - d};
}

HattedMarket change_numeraire_market(const MarketSpec& market, const NumeraireSpec& N) {
    const int P = N.flow.bundle.n_paths(), K = N.flow.bundle.n_times() - 1;
    const double dt = N.flow.bundle.lattice.dt;
    if (P < 1) throw Error(ErrorKind::InvalidInput, "numeraire has no paths");
    for (int k = 0; k < K; ++k) {
        const double m0 = N.mu(0, k);
        const Vec d0 = N.delta(0, k);
        for (int p = 1; p < P; ++p)
            if (std::abs(N.mu(p, k) - m0) > kCoefTol * (1.0 + std::abs(m0)) ||
                (N.delta(p, k) - d0).norm() > kCoefTol * (1.0 + d0.norm()))
                throw Error(ErrorKind::InvalidInput,
                            "numeraire coefficients vary across paths; use hatted_coefficients per path");
    }
    HattedMarket h;
    std::vector<double> r;
    std::vector<Vec> b;
    std::vector<Mat> sigma;
    for (int k = 0; k < K; ++k) {
        const int mk = market.index(k * dt);
        const HattedCoefficients c = hatted_coefficients(market, N, 0, k);
        Vec es, ep;
        market.split(c.eta, mk, es, ep);
        const Mat& s = market.sigma(mk);
        r.push_back(c.r);
        b.push_back(Vec(c.r * Vec::Ones(market.d()) + s.transpose() * es));
        sigma.push_back(s);
        h.translation.push_back(ep);
        if (ep.norm() > MarketSpec::kConstraintTol) h.translated = true;
    }
    h.market = MarketSpec(market.n(), market.d(), dt, std::move(r), std::move(b), std::move(sigma));
    return h;
}

FlowBundle transform_wealth(const FlowBundle& bundle, const NumeraireSpec& N) {
    const FlowBundle& nb = N.flow.bundle;
    require_coupled(bundle.lattice, bundle.path_begin, bundle.n_paths(), nb.lattice, nb.path_begin, nb.n_paths(),
                    "transform_wealth");
    if (bundle.n_times() != nb.n_times()) throw Error(ErrorKind::Coupling, "transform_wealth: time grids differ");
    FlowBundle out = bundle;
    out.policy_ref = bundle.policy_ref + "/" + N.id;
    for (int p = 0; p < bundle.n_paths(); ++p)
        for (int k = 0; k < bundle.n_times(); ++k) {
            const double n = N.N(p, k);
            double* v = out.values.row(p, k);
            for (int j = 0; j < bundle.n_grid(); ++j) v[j] /= n;
        }
    return out;
}

// ---------------------------------------------------------------- utility view

NumeraireView::NumeraireView(const UtilityField& U, const NumeraireSpec& N) : U_(&U), N_(&N) {
    const FlowBundle& nb = N.flow.bundle;
    require_coupled(U.lattice, U.path_begin, U.n_paths(), nb.lattice, nb.path_begin, nb.n_paths(), "NumeraireView");
    if (U.n_times() != nb.n_times()) throw Error(ErrorKind::Coupling, "NumeraireView: time grids differ");
}

const UtilitySlice& NumeraireView::slice(int p, int k) const {
    if (p != cp_ || k != ck_) {
        cache_.assign(*U_, p, k);
        cp_ = p;
        ck_ = k;
    }
    return cache_;
}

double NumeraireView::value(int p, int k, double x) const { return slice(p, k).value(x * N_->N(p, k)); }

double NumeraireView::marginal(int p, int k, double x) const {
    const double n = N_->N(p, k);
    return n * slice(p, k).marginal(x * n);
}

double NumeraireView::curvature(int p, int k, double x) const {
    const double n = N_->N(p, k);
    return n * n * slice(p, k).curvature(x * n);
}

Vec NumeraireView::gamma_x(int p, int k, double x) const {
    if (!U_->has_gamma()) throw Error(ErrorKind::InvalidInput, "NumeraireView: base field has no gamma_x");
    const double n = N_->N(p, k);
    const double lx = std::log(x * n);
    const int D = static_cast<int>(U_->gamma_x.size());
    Vec g(D);
    for (int d = 0; d < D; ++d) g(d) = n * interp_log_linear(U_->log_x, U_->gamma_x[d].row(p, k), lx);
    return g + (marginal(p, k, x) + x * curvature(p, k, x)) * N_->delta(p, k);
}

UtilityField transform_utility(const UtilityField& U, const NumeraireSpec& N, const std::vector<double>& x_grid) {
    const NumeraireView view(U, N);
    const int P = U.n_paths(), T = U.n_times(), G = static_cast<int>(x_grid.size());
    std::vector<double> col(P);
    for (int k = 0; k < T; ++k) {
        for (int p = 0; p < P; ++p) col[p] = N.N(p, k);
        const double lo = quantile(col, 0.01), hi = quantile(col, 0.99);
        if (x_grid.front() * lo < U.x_grid.front() || x_grid.back() * hi > U.x_grid.back())
            throw Error(ErrorKind::Range, "x N_t leaves the sampled utility grid at time index " + std::to_string(k) +
                                              "; widen the utility grid or narrow the target grid");
    }
    UtilityField V;
    V.x_grid = x_grid;
    V.log_x.resize(G);
    for (int j = 0; j < G; ++j) V.log_x[j] = std::log(x_grid[j]);
    V.U = Plane(P, T, G);
    V.Ux = Plane(P, T, G);
    V.Uxx = Plane(P, T, G);
    V.flags.assign(V.U.v.size(), 0);
    if (U.has_gamma()) V.gamma_x.assign(U.gamma_x.size(), Plane(P, T, G));
    V.provenance = U.provenance;
    V.lattice = U.lattice;
    V.path_begin = U.path_begin;
    V.dt = U.dt;
    for (int p = 0; p < P; ++p)
        for (int k = 0; k < T; ++k)
            for (int j = 0; j < G; ++j) {
                const double x = x_grid[j], z = x * N.N(p, k);
                V.U(p, k, j) = view.value(p, k, x);
                V.Ux(p, k, j) = view.marginal(p, k, x);
                V.Uxx(p, k, j) = view.curvature(p, k, x);
                if (z < U.x_grid.front() || z > U.x_grid.back()) V.flags[V.U.index(p, k, j)] = 1;
                if (U.has_gamma()) {
                    const Vec g = view.gamma_x(p, k, x);
                    for (int d = 0; d < g.size(); ++d) V.gamma_x[d](p, k, j) = g(d);
                }
            }
    return V;
}

Vec hatted_policy(const NumeraireView& V, const HattedCoefficients& h, const MarketSpec& market, int p, int k,
                  double x) {
    const Mat& P = market.projector(market.index(k * V.base().dt));
    const double vxx = V.curvature(p, k, x);
    if (!(vxx < 0.0)) throw Error(ErrorKind::InvalidField, "V_xx must be negative for the hatted policy");
    return -(V.marginal(p, k, x) * (P * h.eta) + P * V.gamma_x(p, k, x)) / vxx;
}

double invariance_gap(const UtilityField& U, const NumeraireView& V, const FlowBundle& X, const FlowBundle& Xhat) {
    require_coupled(U.lattice, U.path_begin, U.n_paths(), X.lattice, X.path_begin, X.n_paths(), "invariance_gap");
    require_coupled(X.lattice, X.path_begin, X.n_paths(), Xhat.lattice, Xhat.path_begin, Xhat.n_paths(),
                    "invariance_gap");
    double gap = 0.0;
    UtilitySlice s;
    for (int p = 0; p < X.n_paths(); ++p)
        for (int k = 0; k < X.n_times(); ++k) {
            s.assign(U, p, k);
            for (int j = 0; j < X.n_grid(); ++j) {
                const double u = s.value(X.values(p, k, j));
                const double v = V.value(p, k, Xhat.values(p, k, j));
                gap = std::max(gap, std::abs(u - v) / std::max(1.0, std::abs(u)));
            }
        }
    return gap;
}

HattedPolicyCheck::HattedPolicyCheck(int n_times, int n_grid, int dim)
    : reg_(n_times, n_grid, dim), formula_(static_cast<std::size_t>(n_times) * n_grid, Vec::Zero(dim)) {}

void HattedPolicyCheck::add(const NumeraireView& V, const FlowBundle& Xhat, const MarketSpec& market,
                            const BrownianLattice& lattice, const DriftOptions& opt) {
    if (!(Xhat.lattice == lattice.ref())) throw Error(ErrorKind::Coupling, "hatted policy check: lattice mismatch");
    const double dt = lattice.dt();
    for (int p = 0; p < Xhat.n_paths(); ++p)
        for (int k = 0; k + 1 < Xhat.n_times(); ++k) {
            const HattedCoefficients h = hatted_coefficients(market, V.numeraire(), p, k);
            const double* dW = lattice.dW(Xhat.path_begin + p, k);
            for (int j = 0; j < Xhat.n_grid(); ++j) {
                const double x0 = Xhat.grid[j];
                if (x0 < opt.x_lo || x0 > opt.x_hi) continue;
                const double x = Xhat.values(p, k, j);
                reg_.add(k, j, (Xhat.values(p, k + 1, j) - x) / (x * dt), dW, 1.0, dt);
                formula_[static_cast<std::size_t>(k) * reg_.n_grid() + j] += hatted_policy(V, h, market, p, k, x) / x;
            }
        }
    reg_.count_paths(Xhat.n_paths());
}

double HattedPolicyCheck::rel_error(double dt, const DriftOptions& opt, const std::vector<double>& grid) const {
    double sum = 0.0;
    long cells = 0;
    for (int k = 0; k < reg_.n_times(); ++k)
        for (int j = 0; j < reg_.n_grid(); ++j) {
            if (grid[j] < opt.x_lo || grid[j] > opt.x_hi) continue;
            const CellRegression::Cell c = reg_.solve(k, j);
            if (c.slope.empty()) continue;
            const Vec f = formula_[static_cast<std::size_t>(k) * reg_.n_grid() + j] / static_cast<double>(c.n);
            Vec slope(reg_.dim());
            for (int d = 0; d < reg_.dim(); ++d) slope(d) = c.slope[d] * dt;
            sum += f.norm() > 0.0 ? (slope - f).norm() / f.norm() : slope.norm();
            ++cells;
        }
    if (cells == 0) throw Error(ErrorKind::InvalidInput, "hatted policy check has no interior cells");
    return sum / static_cast<double>(cells);
}

} // namespace fwd
