#pragma once

#include "fwd/flows.hpp"
#include "fwd/market.hpp"
#include "fwd/paths.hpp"
#include "fwd/regression.hpp"
#include "fwd/utility.hpp"

#include "json.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace fwd {

enum class MartingaleMode { Martingale, Supermartingale, Submartingale };
enum class Verdict { Pass, Fail, Inconclusive };

const char* to_string(MartingaleMode m);
const char* to_string(Verdict v);

/// Scalar samples indexed (path, time index), path-major.
struct PathSamples {
    int n_paths = 0;
    int n_times = 0;
    std::vector<double> v;

    PathSamples() = default;
    PathSamples(int paths, int times) : n_paths(paths), n_times(times), v(static_cast<std::size_t>(paths) * times) {}
    double& operator()(int p, int k) { return v[static_cast<std::size_t>(p) * n_times + k]; }
    double operator()(int p, int k) const { return v[static_cast<std::size_t>(p) * n_times + k]; }
};

struct MartingaleVerdict {
    MartingaleMode mode = MartingaleMode::Martingale;
    std::vector<double> means;    ///< E[M_k - M_0] estimate per time index
    std::vector<double> stderrs;
    double statistic = 0.0;       ///< worst standardized violation across tested pairs
    double critical = 0.0;        ///< Bonferroni-corrected normal quantile
    double confidence = 0.95;
    int n_tests = 0;
    int n_paths = 0;
    double final_drift = 0.0;     ///< E[M_T - M_0]
    double final_stderr = 0.0;
    Verdict verdict = Verdict::Inconclusive;
};

struct MartingaleOptions {
    double confidence = 0.95;
    /// Brownian increments of the sampled paths; when set, each step's increment is
    /// adjusted by its least-squares projection on dW (a zero-mean control variate).
    const BrownianLattice* controls = nullptr;
    int path_begin = 0;
};

/// Tests consecutive and anchored (0, t_k) mean increments with normal CIs,
/// Bonferroni-corrected over all tested pairs.
MartingaleVerdict martingale_test(const PathSamples& samples, MartingaleMode mode, const MartingaleOptions& opt = {});

struct WorstCell {
    int k = -1;
    int j = -1;
    double value = 0.0;
};

struct ResidualReport {
    std::string name;
    double residual = 0.0;           ///< mean absolute residual (relative to the cell scale)
    double stderr_mean = 0.0;        ///< mean estimator standard error over cells
    double relative_residual = 0.0;  ///< residual / mean cell scale
    double threshold = 0.0;
    WorstCell worst;
    double dt = 0.0;
    long n_paths = 0;
    long cells = 0;
    std::optional<double> slope;     ///< log2 residual ratio per dt halving, with >= 2 levels
    Verdict verdict = Verdict::Inconclusive;
};

/// Per-(time, grid) regression of a drift sample on dW with intercept.
///
struct DriftOptions {
    double x_lo = 0.0;                 ///< interior window on the grid
    double x_hi = std::numeric_limits<double>::infinity();
    double allowance = 1.0;            ///< C in the C*dt discretization allowance
    double beta_shift = 0.0;           ///< added to the formula drift as a multiple of |U| (negative controls)
    int min_paths = 1000;
};

/// Adds one path chunk of a utility field to a drift regression.
void accumulate_hjb_drift(CellRegression& acc, const UtilityField& U, const MarketSpec& market,
                          const BrownianLattice& lattice, const DriftOptions& opt = {});
void accumulate_dual_drift(CellRegression& acc, const DualField& D, const MarketSpec& market,
                           const BrownianLattice& lattice, const DriftOptions& opt = {});

/// Mean |intercept|/scale over cells versus mean 3*stderr/scale + C*dt.
ResidualReport finish_drift(const CellRegression& acc, const std::string& name, double dt, const DriftOptions& opt,
                            const std::vector<double>& grid);

/// Drift predicted by the HJB constraint: -x U_x r + ||P gamma_x + U_x eta||^2 / (2 U_xx).
double hjb_beta(double x, double Ux, double Uxx, const Vec& gamma_x, const MarketSpec& market, int entry);
/// Dual drift: y Ũ_y r + ||gamma~_y^perp||^2/(2 Ũ_yy) + y gamma~_y.eta - y^2 Ũ_yy ||eta||^2 / 2.
double dual_beta(double y, double Vy, double Vyy, const Vec& gamma_y, const MarketSpec& market, int entry);

ResidualReport hjb_drift_residual(const UtilityField& U, const MarketSpec& market, const BrownianLattice& lattice,
                                  const DriftOptions& opt = {});
ResidualReport dual_drift_residual(const DualField& D, const MarketSpec& market, const BrownianLattice& lattice,
                                   const DriftOptions& opt = {});

/// Deterministic dual drift residual of a decreasing-utility field: max over cells of
/// |Ũ_t - (y Ũ_y r - y^2 Ũ_yy ||eta||^2 / 2)| / (1 + |Ũ|), with Ũ_t analytic.
ResidualReport decreasing_dual_residual(const MeasureMixture& m, const DecreasingUtility& f, const MarketSpec& market);

/// Regression statistics of U_x(t, X*_t(x)) per cell.
struct MarginalDynamics {
    ResidualReport drift;     ///< relative drift versus -r
    double vol_rel_error = 0.0;  ///< mean over cells of ||slope - target|| / ||target||
    long cells = 0;
};

class MarginalAccumulator {
public:
    MarginalAccumulator(int n_times, int n_grid, int dim);
    /// Adds a chunk: X is the optimal wealth bundle on the field's lattice block.
    void add(const UtilityField& U, const FlowBundle& X, const MarketSpec& market, const BrownianLattice& lattice,
             const std::function<Vec(double t, double y)>& nu_star, const DriftOptions& opt);
    MarginalDynamics finish(double dt, const DriftOptions& opt, const std::vector<double>& grid) const;

private:
    CellRegression reg_;
    std::vector<Vec> target_;  // per-cell sum of the predicted relative volatility
};

/// A random field F(t, x) known through its local characteristics along a path block.
struct FieldIncrementModel {
    LatticeRef lattice;
    int path_begin = 0;
    std::function<double(int p, int k, double x)> value;
    std::function<double(int p, int k, double x)> beta;
    std::function<Vec(int p, int k, double x)> gamma;
    std::function<double(int p, int k, double x)> F_x;
    std::function<double(int p, int k, double x)> F_xx;
    std::function<Vec(int p, int k, double x)> gamma_x;
};

/// F(t, x) = x M_t for a scalar flow M.
FieldIncrementModel product_field(const ScalarFlow& M);

struct ItoVentzelReport {
    ResidualReport with_correction;
    ResidualReport without_correction;
};

/// Signed mean of (dF(t,X_t) - Ito-Ventzel prediction)/dt relative to |F|, over paths and steps.
ItoVentzelReport ito_ventzel_residual(const FieldIncrementModel& F, const ScalarFlow& X, const BrownianLattice& lattice);

/// Fills `slope` on each report from successive residual ratios (reports ordered by halving dt).
void attach_convergence(std::vector<ResidualReport>& levels);
/// Per-halving ratios r_i / r_{i+1}.
std::vector<double> convergence_ratios(const std::vector<ResidualReport>& levels);

struct RiskToleranceCheck {
    double max_rel_error = 0.0;
    double sum_rel_error = 0.0;
    long cells = 0;
    PathSamples product;  ///< Y*_y(t, u_x(x0)) * alpha^U(t, X*_t(x0))
    double mean_rel_error() const { return cells ? sum_rel_error / cells : 0.0; }
};

/// alpha^U(t, X*_t(x)) against alpha^u(x) X*_x(t, x) on interior cells of one chunk,
/// plus the product samples at x0 (Y*_y reduces to Y^0 for a linear density flow).
RiskToleranceCheck risk_tolerance_check(const UtilityField& U, const FlowBundle& X, const FlowBundle& Y,
                                        const InitialUtility& u, double x0, const DriftOptions& opt = {});

/// One row of a VerificationReport.
struct IdentityResult {
    std::string name;
    std::string paper_ref;  ///< identity tag the check refers to
    double residual = 0.0;
    double threshold = 0.0;
    Verdict verdict = Verdict::Inconclusive;
    long n_paths = 0;
    double dt = 0.0;
};

IdentityResult to_identity(const ResidualReport& r, std::string tag);
IdentityResult to_identity(const MartingaleVerdict& v, std::string name, std::string tag, double dt);

struct VerificationReport {
    std::string experiment;
    std::string config_hash;
    std::vector<IdentityResult> entries;

    static const char* caveat();
    bool all_pass() const;
    nlohmann::json to_json() const;
    static VerificationReport from_json(const nlohmann::json& j);
};

} // namespace fwd
