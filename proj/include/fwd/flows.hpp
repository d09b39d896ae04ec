#pragma once

#include "fwd/interp.hpp"
#include "fwd/paths.hpp"
#include "fwd/regression.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace fwd {

/// Adjacent grid pairs with values(i+1) <= values(i) (ties within 1e-12 relative count too).
struct MonotonicityAudit {
    std::vector<int> violations;  ///< per (path, time), path-major
    long total = 0;
    double worst_ratio = 0.0;     ///< min over all cells of values(i+1)/values(i)
    std::vector<int> offending_paths;  ///< lattice path indices, first few
    bool pass = true;
};

enum ExtrapolationFlag : std::uint8_t { kInterior = 0, kBelow = 1, kAbove = 2 };

/// Pathwise inverse of a wealth flow: values(p, k, j) = initial wealth reaching z_grid[j] at time k.
struct InverseFlowField {
    std::vector<double> z_grid;
    Plane values;
    std::vector<std::uint8_t> flags;  ///< (path, time, z), see ExtrapolationFlag
    LatticeRef lattice;
    int path_begin = 0;

    std::uint8_t flag(int p, int k, int j) const { return flags[values.index(p, k, j)]; }
};

/// Local characteristics of a state-dependent flow dphi = mu(t, phi) dt + sigma(t, phi) . dW.
struct StateDynamics {
    std::function<double(double t, double x)> mu;
    std::function<Vec(double t, double x)> sigma;
};

/// Characteristics of the wealth flow driven by kappa in market.
StateDynamics wealth_dynamics(const MarketSpec& market, const PolicyField& kappa);

struct InverseFlowResidual {
    double drift_residual = 0.0;   ///< mean over z of |per-cell drift error| / xi, per unit time
    double drift_stderr = 0.0;
    double vol_residual = 0.0;     ///< mean over z of ||per-cell volatility error|| / xi
    int n_paths = 0;
    double dt = 0.0;
    long cells = 0;
};

/// Curve through one (path, time) slice of a bundle.
LogLogCurve bundle_curve(const FlowBundle& bundle, int p, int k);

MonotonicityAudit audit_monotone(const FlowBundle& bundle);
InverseFlowField invert_flow(const FlowBundle& bundle, const std::vector<double>& z_grid);
Plane flow_initial_derivative(const FlowBundle& bundle);
Plane flow_initial_derivative(const InverseFlowField& inverse);

/// outer(t, map(inner(p, k, j))) pathwise; `map` defaults to the identity.
Plane compose_flows(const FlowBundle& outer, const Plane& inner, const LatticeRef& inner_lattice,
                    int inner_path_begin, const std::function<double(double)>& map = {});
Plane compose_flows(const FlowBundle& outer, const InverseFlowField& inner,
                    const std::function<double(double)>& map = {});

/// Chunked form of the inverse-flow residual: feed path blocks of one lattice, then read the result.
class InverseFlowCheck {
public:
    InverseFlowCheck(StateDynamics dynamics, std::vector<double> z_grid, int dim);
    void add(const FlowBundle& bundle, const InverseFlowField& inverse, const BrownianLattice& lattice);
    InverseFlowResidual result() const;

private:
    StateDynamics dyn_;
    std::vector<double> z_, logz_;
    CellRegression reg_;
    std::vector<long> cnt_;
    std::vector<Vec> vsum_;
    int paths_ = 0;
    double dt_ = 0.0;
};

InverseFlowResidual inverse_flow_dynamics_residual(const FlowBundle& bundle, const InverseFlowField& inverse,
                                                   const BrownianLattice& lattice, const StateDynamics& dynamics);

} // namespace fwd
