#pragma once

#include "fwd/market.hpp"
#include "fwd/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fwd {

struct LatticeRef {
    std::uint64_t seed = 0;
    int n_paths = 0;
    int n_steps = 0;
    int dim = 0;
    double dt = 0.0;

    bool operator==(const LatticeRef&) const = default;
};

/// Shared Brownian increments, stored (path, step, dim).
///
/// Path p draws from its own generator seeded from (seed, p), so any subset
/// of paths can be regenerated independently of the others.
class BrownianLattice {
public:
    BrownianLattice() = default;
    BrownianLattice(LatticeRef ref, std::vector<double> increments);

    const LatticeRef& ref() const { return ref_; }
    int n_paths() const { return ref_.n_paths; }
    int n_steps() const { return ref_.n_steps; }
    int dim() const { return ref_.dim; }
    double dt() const { return ref_.dt; }

    const double* dW(int path, int step) const {
        return inc_.data() + (static_cast<std::size_t>(path) * ref_.n_steps + step) * ref_.dim;
    }
    Eigen::Map<const Eigen::VectorXd> dw(int path, int step) const {
        return Eigen::Map<const Eigen::VectorXd>(dW(path, step), ref_.dim);
    }
    /// Brownian position W at time index k (W_0 = 0).
    Vec W(int path, int k) const;

private:
    LatticeRef ref_;
    std::vector<double> inc_;
};

BrownianLattice generate_lattice(int n_paths, int n_steps, double dt, int dim, std::uint64_t seed);

enum class Role { Wealth = 0, Spd = 1, Scalar = 2, Inverse = 3, Utility = 4, Dual = 5 };
const char* to_string(Role role);
Role role_from_string(const std::string& s);

/// Contiguous block of lattice paths; count < 0 means "to the end".
struct PathRange {
    int begin = 0;
    int count = -1;
};

/// Samples of a positive flow indexed by (path, time index, initial condition).
struct FlowBundle {
    Role role = Role::Wealth;
    std::vector<double> grid;
    Plane values;
    LatticeRef lattice;
    int path_begin = 0;
    std::string policy_ref;

    int n_paths() const { return values.n_paths; }
    int n_times() const { return values.n_times; }
    int n_grid() const { return values.n_grid; }
};

/// A one-point flow together with the per-unit coefficients used at each step:
/// dS/S = mu dt + vol . dW, recorded as mu(path, step) and vol(path, step, dim).
struct ScalarFlow {
    FlowBundle bundle;
    std::vector<double> mu;
    std::vector<double> vol;

    double value(int p, int k) const { return bundle.values(p, k, 0); }
    double mu_at(int p, int k) const { return mu[static_cast<std::size_t>(p) * (bundle.n_times() - 1) + k]; }
    Vec vol_at(int p, int k) const;
};

using ScalarDrift = std::function<double(double t, double value)>;
using ScalarVol = std::function<Vec(double t, double value)>;

FlowBundle simulate_wealth_flow(const BrownianLattice& lattice, const MarketSpec& market,
                                const PolicyField& kappa, const std::vector<double>& x_grid,
                                PathRange range = {});
FlowBundle simulate_spd_flow(const BrownianLattice& lattice, const MarketSpec& market,
                             const DualPolicyField& nu, const std::vector<double>& y_grid,
                             PathRange range = {});
ScalarFlow simulate_scalar(const BrownianLattice& lattice, const ScalarDrift& mu, const ScalarVol& vol,
                           double init, PathRange range = {}, std::string id = "scalar");

/// Minimal state price density Y^0 (nu = 0, Y_0 = 1) as a scalar flow.
ScalarFlow minimal_density(const BrownianLattice& lattice, const MarketSpec& market, PathRange range = {});

/// Normalizes a path range against the lattice; throws on out-of-bounds ranges.
PathRange resolve(const BrownianLattice& lattice, PathRange range);

/// Throws Coupling unless both objects come from the same lattice and path block.
void require_coupled(const LatticeRef& a, int begin_a, int paths_a, const LatticeRef& b, int begin_b,
                     int paths_b, const char* what);

} // namespace fwd
