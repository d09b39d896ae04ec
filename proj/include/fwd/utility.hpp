#pragma once

#include "fwd/flows.hpp"
#include "fwd/interp.hpp"
#include "fwd/market.hpp"
#include "fwd/paths.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fwd {

/// Finite discrete mixing measure over power-utility risk aversions.
///
/// Atom alpha carries the dual power y^{1 - 1/alpha}; power utility x^a/a
/// corresponds to alpha = 1 - a. An atom at alpha = 1 is the log limit and
/// needs `log_limit`.
struct MeasureMixture {
    std::vector<double> alphas;
    std::vector<double> weights;
    double C = 0.0;
    bool log_limit = false;

    /// Mixture with C chosen so that the primal field vanishes at 0+ when every atom has alpha < 1.
    static MeasureMixture normalized(std::vector<double> alphas, std::vector<double> weights, bool log_limit = false);
    void validate() const;
};

/// Dual mixture value and derivatives at (y, A, R) with A = int ||eta||^2, R = int r.
struct DualPoint {
    double V = 0.0;
    double Vy = 0.0;
    double Vyy = 0.0;
    double Vt = 0.0;  ///< time derivative given the instantaneous ||eta||^2 and r
};
DualPoint mixture_dual(const MeasureMixture& m, double y, double A, double R, double eta2 = 0.0, double r = 0.0);
/// Primal point (U, U_x, U_xx) of the mixture by inverting -V_y.
struct PrimalPoint {
    double U = 0.0;
    double Ux = 0.0;
    double Uxx = 0.0;
};
PrimalPoint mixture_primal(const MeasureMixture& m, double x, double A, double R);

enum class UtilityKind { Power, Exponential, Log, Mixture };

/// Deterministic initial utility u with closed-form derivatives and conjugate
/// ũ(y) = sup_x (u(x) - x y).
class InitialUtility {
public:
    static InitialUtility power(double a, bool allow_negative = false);
    static InitialUtility exponential(double c);
    static InitialUtility log();
    static InitialUtility mixture(MeasureMixture m);

    UtilityKind kind() const { return kind_; }
    double param() const { return p_; }
    const MeasureMixture& measure() const { return m_; }
    std::string describe() const;

    double u(double x) const;
    double ux(double x) const;
    double uxx(double x) const;
    double conj(double y) const;
    double conj_y(double y) const;
    /// Inverse marginal (u_x)^{-1}(y) = -ũ_y(y).
    double ux_inverse(double y) const { return -conj_y(y); }
    double risk_tolerance(double x) const { return -ux(x) / uxx(x); }

private:
    UtilityKind kind_ = UtilityKind::Power;
    double p_ = 0.5;
    MeasureMixture m_;
};

InitialUtility make_initial_utility(const std::string& kind, const nlohmann::json& params);

enum class Provenance { FlowBuilt, ClosedForm, External };
const char* to_string(Provenance p);

class UtilitySlice;

/// Sampled random field U(path, time, x) with derivative planes.
struct UtilityField {
    std::vector<double> x_grid;
    std::vector<double> log_x;
    Plane U, Ux, Uxx;
    std::vector<Plane> gamma_x;            ///< n planes of the volatility derivative, when known
    std::vector<Plane> gamma;              ///< n planes of the volatility itself (closed forms only)
    std::vector<std::uint8_t> flags;       ///< extrapolation flags per cell (may be empty)
    Provenance provenance = Provenance::External;
    LatticeRef lattice;
    int path_begin = 0;
    double dt = 0.0;

    int n_paths() const { return U.n_paths; }
    int n_times() const { return U.n_times; }
    int n_grid() const { return U.n_grid; }
    bool has_gamma() const { return !gamma_x.empty(); }
    Vec gamma_at(int p, int k, int j) const;
    bool interior(int p, int k, int j) const { return flags.empty() || flags[U.index(p, k, j)] == 0; }
    UtilitySlice slice(int p, int k) const;
};

/// Continuous evaluation of one (path, time) section of a utility field:
/// U_x interpolated shape-preservingly, U as its exact integral between nodes.
class UtilitySlice {
public:
    UtilitySlice() = default;
    void assign(const UtilityField& f, int p, int k);

    double value(double x) const;
    double marginal(double x, bool* extrapolated = nullptr) const { return g_.eval(x, extrapolated); }
    double curvature(double x) const { return g_.deriv(x); }
    /// -U_x/U_xx at x.
    double risk_tolerance(double x) const { return -x / g_.elasticity(x); }
    /// x with U_x(x) = y.
    double marginal_inverse(double y, bool* extrapolated = nullptr) const { return g_.inverse(y, extrapolated); }
    const LogLogCurve& curve() const { return g_; }

private:
    LogLogCurve g_;
    const double* x_ = nullptr;
    const double* U_ = nullptr;
    int n_ = 0;
};

class DualSlice;

/// Sampled conjugate field Ũ(path, time, y) with derivative planes.
struct DualField {
    std::vector<double> y_grid;
    std::vector<double> log_y;
    Plane V, Vy, Vyy;
    std::vector<Plane> gamma_y;            ///< n planes of the dual volatility derivative, when known
    std::vector<std::uint8_t> flags;
    LatticeRef lattice;
    int path_begin = 0;
    double dt = 0.0;

    int n_paths() const { return V.n_paths; }
    int n_times() const { return V.n_times; }
    int n_grid() const { return V.n_grid; }
    bool has_gamma() const { return !gamma_y.empty(); }
    Vec gamma_at(int p, int k, int j) const;
    bool interior(int p, int k, int j) const { return flags.empty() || flags[V.index(p, k, j)] == 0; }
    DualSlice slice(int p, int k) const;
};

class DualSlice {
public:
    DualSlice() = default;
    void assign(const DualField& f, int p, int k);

    double value(double y) const;
    /// -Ũ_y(y), the conjugate minimizer x(y).
    double minus_derivative(double y) const { return h_.eval(y); }

private:
    LogLogCurve h_;
    const double* y_ = nullptr;
    const double* V_ = nullptr;
    int n_ = 0;
};

/// Optional generators attached to a flow-built field.
struct FlowGenerators {
    const MarketSpec* market = nullptr;
    const PolicyField* kappa = nullptr;
    const DualPolicyField* nu = nullptr;
};

/// U(t,x) = int_0^x Y*_t(u_x(inverse X*_t(z))) dz on z_grid.
UtilityField build_utility_field(const FlowBundle& X, const FlowBundle& Y, const InitialUtility& u,
                                 const std::vector<double>& z_grid, const FlowGenerators& gen = {});
UtilityField build_utility_field(const FlowBundle& X, const InverseFlowField& inverse, const FlowBundle& Y,
                                 const InitialUtility& u, const FlowGenerators& gen = {});

/// Default dual grid: the marginal range of u over x_grid, same size, log-spaced.
std::vector<double> dual_grid_for(const InitialUtility& u, const std::vector<double>& x_grid);

/// Numeric Legendre-Fenchel transform Ũ(t,y) = max_x (U(t,x) - x y) per (path, time).
DualField conjugate_field(const UtilityField& U, const std::vector<double>& y_grid, const MarketSpec* market = nullptr);
/// min_y (Ũ(t,y) + x y) over the dual grid with parabolic refinement.
Plane biconjugate(const DualField& D, const std::vector<double>& x_grid);

struct ConditionReport {
    std::string family;
    double max_violation = 0.0;
    double tolerance = 1e-10;
    bool pass = true;
};

struct ZNField {
    UtilityField field;
    ConditionReport condition;
};

/// U(t,x) = Z_t v(x/N_t) with its volatility from the Z and N coefficients.
ZNField closed_form_ZN(const InitialUtility& v, const ScalarFlow& Z, const ScalarFlow& N, const MarketSpec& market,
                       const std::vector<double>& x_grid);

struct DecreasingUtility {
    DualField dual;
    UtilityField primal;
    std::vector<double> A;  ///< accumulated ||eta||^2 per time index
    std::vector<double> R;  ///< accumulated r per time index
};

/// Zero-volatility consistent utility from a mixture; one deterministic "path".
DecreasingUtility decreasing_utility(const MeasureMixture& m, const MarketSpec& market, int n_steps, double dt,
                                     const std::vector<double>& y_grid, const std::vector<double>& x_grid);

struct PolicySamples {
    std::vector<Plane> xkappa;  ///< n planes of x * kappa*(t, x)
    Plane Q;                    ///< minimum of the drift quadratic form, -||x kappa*||^2
};

PolicySamples optimal_policy_from_field(const UtilityField& U, const MarketSpec& market);
/// nu*(t, y) = -gamma~_y^perp / (y Ũ_yy), n planes.
std::vector<Plane> dual_optimal_nu(const DualField& D, const MarketSpec& market);

} // namespace fwd
