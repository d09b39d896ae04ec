#pragma once

#include "fwd/market.hpp"
#include "fwd/paths.hpp"
#include "fwd/utility.hpp"
#include "fwd/verify.hpp"

#include <string>
#include <vector>

namespace fwd {

/// Positive numeraire dN/N = mu^N dt + delta^N . dW sampled on a lattice block.
struct NumeraireSpec {
    std::string id;
    ScalarFlow flow;
    bool delta_in_range = true;  ///< delta^N in range(sigma) at every sampled step

    double N(int p, int k) const { return flow.value(p, k); }
    /// Coefficients in force over step k (the last step is reused at the final time).
    double mu(int p, int k) const;
    Vec delta(int p, int k) const;
};

/// Wraps a simulated scalar flow; checks positivity and classifies delta^N.
NumeraireSpec make_numeraire(std::string id, ScalarFlow flow, const MarketSpec& market);
/// 1/Y^0: mu^N = r + ||eta||^2, delta^N = eta.
NumeraireSpec numeraire_portfolio(const BrownianLattice& lattice, const MarketSpec& market, PathRange range = {});
/// exp(int r).
NumeraireSpec bank_account(const BrownianLattice& lattice, const MarketSpec& market, PathRange range = {});
/// N = 1.
NumeraireSpec unit_numeraire(const BrownianLattice& lattice, const MarketSpec& market, PathRange range = {});

/// Market in units of N: r^ = r - mu^N + delta^{N,sigma}.eta, eta^ = eta - delta^N.
struct HattedMarket {
    MarketSpec market;                 ///< carries r^ and the range part of eta^
    std::vector<Vec> translation;      ///< -delta^{N,perp} per entry: shift of the admissible set
    bool translated = false;
};

/// Needs path-independent numeraire coefficients; use hatted_coefficients otherwise.
HattedMarket change_numeraire_market(const MarketSpec& market, const NumeraireSpec& N);

struct HattedCoefficients {
    double r = 0.0;
    Vec eta;
};
HattedCoefficients hatted_coefficients(const MarketSpec& market, const NumeraireSpec& N, int p, int k);

/// X^ = X / N pathwise.
FlowBundle transform_wealth(const FlowBundle& bundle, const NumeraireSpec& N);

/// V(t, x) = U(t, x N_t) evaluated through U's slices; exact composition, no resampling.
class NumeraireView {
public:
    NumeraireView(const UtilityField& U, const NumeraireSpec& N);
    // The view keeps references; temporaries would dangle.
    NumeraireView(const UtilityField&, NumeraireSpec&&) = delete;
    NumeraireView(UtilityField&&, const NumeraireSpec&) = delete;

    double value(int p, int k, double x) const;
    double marginal(int p, int k, double x) const;
    double curvature(int p, int k, double x) const;
    /// gamma^V_x(t, x) = N gamma^U_x(t, x N) + (V_x + x V_xx) delta^N.
    Vec gamma_x(int p, int k, double x) const;

    const UtilityField& base() const { return *U_; }
    const NumeraireSpec& numeraire() const { return *N_; }

private:
    const UtilitySlice& slice(int p, int k) const;

    const UtilityField* U_;
    const NumeraireSpec* N_;
    mutable UtilitySlice cache_;
    mutable int cp_ = -1, ck_ = -1;
};

/// Samples the view on x_grid. Requires x_grid times the 1st-99th percentile of N_t
/// to stay inside U's grid at every time; throws Range otherwise.
UtilityField transform_utility(const UtilityField& U, const NumeraireSpec& N, const std::vector<double>& x_grid);

/// x kappa^(x) = -(V_x eta^ + P gamma^V_x) / V_xx in the hatted market.
Vec hatted_policy(const NumeraireView& V, const HattedCoefficients& h, const MarketSpec& market, int p, int k, double x);

/// max |U(t, X_t) - V(t, X^_t)| / max(1, |U|) over all cells of a chunk.
double invariance_gap(const UtilityField& U, const NumeraireView& V, const FlowBundle& X, const FlowBundle& Xhat);

/// Compares x kappa^ from V's fields with the volatility of X^* / N recovered by
/// per-cell regression of its relative increments on dW.
class HattedPolicyCheck {
public:
    HattedPolicyCheck(int n_times, int n_grid, int dim);
    void add(const NumeraireView& V, const FlowBundle& Xhat, const MarketSpec& market, const BrownianLattice& lattice,
             const DriftOptions& opt);
    /// Mean over interior cells of ||regressed - formula|| / ||formula||.
    double rel_error(double dt, const DriftOptions& opt, const std::vector<double>& grid) const;

private:
    CellRegression reg_;
    std::vector<Vec> formula_;
};

} // namespace fwd
