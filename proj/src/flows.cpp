#include "fwd/flows.hpp"
#include "fwd/regression.hpp"
#include "fwd/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fwd {

namespace {

constexpr double kTieTol = 1e-12;

// Derivative of y on a nonuniform grid: three-point central, one-sided at the ends.
double grid_derivative(const std::vector<double>& x, const double* y, int j) {
    const int n = static_cast<int>(x.size());
    if (j == 0) return (y[1] - y[0]) / (x[1] - x[0]);
    if (j == n - 1) return (y[n - 1] - y[n - 2]) / (x[n - 1] - x[n - 2]);
    const double h0 = x[j] - x[j - 1], h1 = x[j + 1] - x[j];
    const double d0 = (y[j] - y[j - 1]) / h0, d1 = (y[j + 1] - y[j]) / h1;
    return (h1 * d0 + h0 * d1) / (h0 + h1);
}

void require_audit(const FlowBundle& bundle) {
    const MonotonicityAudit a = audit_monotone(bundle);
    if (a.pass) return;
    std::string paths;
    for (int p : a.offending_paths) paths += (paths.empty() ? "" : ",") + std::to_string(p);
    throw Error(ErrorKind::NonInvertibleFlow,
                std::to_string(a.total) + " monotonicity violations; offending paths " + paths);
}

} // namespace

StateDynamics wealth_dynamics(const MarketSpec& market, const PolicyField& kappa) {
    StateDynamics d;
    d.mu = [market, kappa](double t, double x) {
        const int k = market.index(t);
        return x * (market.r(k) + kappa.kappa(t, x).dot(market.eta(k)));
    };
    d.sigma = [kappa](double t, double x) { return Vec(x * kappa.kappa(t, x)); };
    return d;
}

LogLogCurve bundle_curve(const FlowBundle& bundle, int p, int k) {
    return LogLogCurve(bundle.grid.data(), bundle.values.row(p, k), bundle.n_grid());
}

MonotonicityAudit audit_monotone(const FlowBundle& bundle) {
    const int G = bundle.n_grid();
    if (G < 2) throw Error(ErrorKind::InvalidInput, "monotonicity audit needs at least two grid points");
    MonotonicityAudit a;
    a.violations.assign(static_cast<std::size_t>(bundle.n_paths()) * bundle.n_times(), 0);
    a.worst_ratio = std::numeric_limits<double>::infinity();
    for (int p = 0; p < bundle.n_paths(); ++p) {
        bool bad_path = false;
        for (int k = 0; k < bundle.n_times(); ++k) {
            const double* v = bundle.values.row(p, k);
            int count = 0;
            for (int i = 0; i + 1 < G; ++i) {
                a.worst_ratio = std::min(a.worst_ratio, v[i + 1] / v[i]);
                if (!(v[i + 1] > v[i] * (1.0 + kTieTol))) ++count;
            }
            a.violations[static_cast<std::size_t>(p) * bundle.n_times() + k] = count;
            a.total += count;
            bad_path = bad_path || count > 0;
        }
        if (bad_path && a.offending_paths.size() < 10) a.offending_paths.push_back(bundle.path_begin + p);
    }
    a.pass = a.total == 0;
    return a;
}

InverseFlowField invert_flow(const FlowBundle& bundle, const std::vector<double>& z_grid) {
    require_audit(bundle);
    for (std::size_t j = 0; j < z_grid.size(); ++j)
        if (!(z_grid[j] > 0.0) || (j > 0 && !(z_grid[j] > z_grid[j - 1])))
            throw Error(ErrorKind::InvalidConfig, "z grid must be positive and strictly increasing");
    InverseFlowField f;
    f.z_grid = z_grid;
    f.lattice = bundle.lattice;
    f.path_begin = bundle.path_begin;
    const int Z = static_cast<int>(z_grid.size());
    f.values = Plane(bundle.n_paths(), bundle.n_times(), Z);
    f.flags.assign(f.values.v.size(), kInterior);
    std::vector<double> logx(bundle.n_grid());
    for (int i = 0; i < bundle.n_grid(); ++i) logx[i] = std::log(bundle.grid[i]);
    LogLogCurve c;
    for (int p = 0; p < bundle.n_paths(); ++p) {
        for (int k = 0; k < bundle.n_times(); ++k) {
            const double* v = bundle.values.row(p, k);
            c.assign(bundle.grid.data(), v, bundle.n_grid(), logx.data());
            double* out = f.values.row(p, k);
            for (int j = 0; j < Z; ++j) {
                bool ext = false;
                out[j] = c.inverse(z_grid[j], &ext);
                if (ext) f.flags[f.values.index(p, k, j)] = z_grid[j] < v[0] ? kBelow : kAbove;
                if (!(out[j] > 0.0) || !std::isfinite(out[j]))
                    throw Error(ErrorKind::NonInvertibleFlow, "inverse undefined at path " +
                                                                  std::to_string(bundle.path_begin + p) +
                                                                  ", time index " + std::to_string(k));
            }
        }
    }
    return f;
}

namespace {

Plane initial_derivative(const std::vector<double>& grid, const Plane& values) {
    const int G = values.n_grid;
    if (G < 3) throw Error(ErrorKind::InvalidInput, "initial-condition derivative needs at least three grid points");
    Plane d(values.n_paths, values.n_times, G);
    std::vector<double> logx(G);
    for (int i = 0; i < G; ++i) logx[i] = std::log(grid[i]);
    LogLogCurve c;
    for (int p = 0; p < values.n_paths; ++p)
        for (int k = 0; k < values.n_times; ++k) {
            const double* v = values.row(p, k);
            c.assign(grid.data(), v, G, logx.data());
            double* out = d.row(p, k);
            for (int j = 0; j < G; ++j) out[j] = v[j] * c.node_elasticity(j) / grid[j];
        }
    return d;
}

} // namespace

Plane flow_initial_derivative(const FlowBundle& bundle) {
    require_audit(bundle);
    return initial_derivative(bundle.grid, bundle.values);
}

Plane flow_initial_derivative(const InverseFlowField& inverse) {
    return initial_derivative(inverse.z_grid, inverse.values);
}

Plane compose_flows(const FlowBundle& outer, const Plane& inner, const LatticeRef& inner_lattice,
                    int inner_path_begin, const std::function<double(double)>& map) {
    require_coupled(outer.lattice, outer.path_begin, outer.n_paths(), inner_lattice, inner_path_begin,
                    inner.n_paths, "compose_flows");
    if (inner.n_times != outer.n_times()) throw Error(ErrorKind::Coupling, "compose_flows: time grids differ");
    Plane out(inner.n_paths, inner.n_times, inner.n_grid);
    std::vector<double> logx(outer.n_grid());
    for (int i = 0; i < outer.n_grid(); ++i) logx[i] = std::log(outer.grid[i]);
    LogLogCurve c;
    for (int p = 0; p < inner.n_paths; ++p)
        for (int k = 0; k < inner.n_times; ++k) {
            c.assign(outer.grid.data(), outer.values.row(p, k), outer.n_grid(), logx.data());
            const double* in = inner.row(p, k);
            double* o = out.row(p, k);
            for (int j = 0; j < inner.n_grid; ++j) o[j] = c.eval(map ? map(in[j]) : in[j]);
        }
    return out;
}

Plane compose_flows(const FlowBundle& outer, const InverseFlowField& inner, const std::function<double(double)>& map) {
    return compose_flows(outer, inner.values, inner.lattice, inner.path_begin, map);
}

InverseFlowCheck::InverseFlowCheck(StateDynamics dynamics, std::vector<double> z_grid, int dim)
    : dyn_(std::move(dynamics)), z_(std::move(z_grid)), reg_(1, static_cast<int>(z_.size()), dim),
      cnt_(z_.size(), 0), vsum_(z_.size(), Vec::Zero(dim)) {
    for (double z : z_) logz_.push_back(std::log(z));
}

void InverseFlowCheck::add(const FlowBundle& bundle, const InverseFlowField& inverse, const BrownianLattice& lattice) {
    require_coupled(bundle.lattice, bundle.path_begin, bundle.n_paths(), inverse.lattice, inverse.path_begin,
                    inverse.values.n_paths, "inverse_flow_dynamics_residual");
    if (!(bundle.lattice == lattice.ref())) throw Error(ErrorKind::Coupling, "bundle was built on another lattice");
    if (inverse.z_grid != z_ || lattice.dim() != reg_.dim())
        throw Error(ErrorKind::InvalidInput, "inverse-flow check: z grid or dimension differs from the accumulator");
    if (dt_ != 0.0 && dt_ != lattice.dt()) throw Error(ErrorKind::Coupling, "inverse-flow check: chunks differ in dt");
    const int P = inverse.values.n_paths, T = inverse.values.n_times, Z = inverse.values.n_grid;
    const double dt = lattice.dt();
    dt_ = dt;
    paths_ += P;

    // One regression cell per z node pooled over steps; the dW and dW^2 controls
    // absorb the martingale noise left after subtracting the model volatility.
    std::vector<double> xi_z(Z), q(Z), mu(Z);
    std::vector<Vec> sig(Z);
    LogLogCurve c;
    for (int k = 0; k + 1 < T; ++k) {
        const double t = k * dt;
        for (int j = 0; j < Z; ++j) {
            mu[j] = dyn_.mu(t, z_[j]);
            sig[j] = dyn_.sigma(t, z_[j]);
        }
        for (int p = 0; p < P; ++p) {
            const double* xi = inverse.values.row(p, k);
            const double* xi1 = inverse.values.row(p, k + 1);
            c.assign(z_.data(), xi, Z, logz_.data());
            for (int j = 0; j < Z; ++j) {
                xi_z[j] = xi[j] * c.node_elasticity(j) / z_[j];
                q[j] = xi_z[j] * sig[j].squaredNorm();
            }
            const Eigen::Map<const Eigen::VectorXd> dW = lattice.dw(bundle.path_begin + p, k);
            for (int j = 1; j + 1 < Z; ++j) {
                if (inverse.flag(p, k, j) != kInterior || inverse.flag(p, k + 1, j) != kInterior) continue;
                const Vec vol = -xi_z[j] * sig[j];
                const double drift = -xi_z[j] * mu[j] + 0.5 * grid_derivative(z_, q.data(), j);
                const double dxi = xi1[j] - xi[j];
                reg_.add(0, j, ((dxi - vol.dot(dW)) / dt - drift) / xi[j], dW.data(), 1.0, dt);
                vsum_[j] += (dxi * dW / dt - vol) / xi[j];
                ++cnt_[j];
            }
        }
    }
}

InverseFlowResidual InverseFlowCheck::result() const {
    InverseFlowResidual r;
    r.n_paths = paths_;
    r.dt = dt_;
    int used = 0;
    for (std::size_t j = 0; j < z_.size(); ++j) {
        const CellRegression::Cell c = reg_.solve(0, static_cast<int>(j));
        if (c.slope.empty()) continue;
        r.drift_residual += std::abs(c.intercept);
        r.drift_stderr += c.stderr_;
        r.vol_residual += (vsum_[j] / static_cast<double>(cnt_[j])).norm();
        r.cells += cnt_[j];
        ++used;
    }
    if (used == 0) throw Error(ErrorKind::InvalidInput, "no interior cells for the inverse-flow residual");
    r.drift_residual /= used;
    r.drift_stderr /= used;
    r.vol_residual /= used;
    return r;
}

InverseFlowResidual inverse_flow_dynamics_residual(const FlowBundle& bundle, const InverseFlowField& inverse,
                                                   const BrownianLattice& lattice, const StateDynamics& dyn) {
    InverseFlowCheck check(dyn, inverse.z_grid, lattice.dim());
    check.add(bundle, inverse, lattice);
    return check.result();
}

} // namespace fwd
