#pragma once

#include "fwd/types.hpp"

#include "json.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fwd {

/// Ito market with piecewise-constant coefficients on a uniform time grid.
///
/// Coefficient arrays hold one entry per simulation step; a single entry is
/// treated as constant in time. Derived quantities (minimal risk premium and
/// the projector onto range(sigma)) are cached per entry by finalize().
class MarketSpec {
public:
    MarketSpec() = default;
    MarketSpec(int n, int d, double dt, std::vector<double> r, std::vector<Vec> b,
               std::vector<Mat> sigma);

    static MarketSpec constant(int n, int d, double r, const Vec& b, const Mat& sigma,
                               double dt = 0.01);

    int n() const { return n_; }
    int d() const { return d_; }
    double dt() const { return dt_; }
    int n_entries() const { return static_cast<int>(r_.size()); }

    /// Entry index holding the coefficients in force at time t.
    int index(double t) const;

    double r(int k) const { return r_[clamp(k)]; }
    const Vec& b(int k) const { return b_[clamp(k)]; }
    const Mat& sigma(int k) const { return sigma_[clamp(k)]; }
    const Vec& eta(int k) const { return eta_[clamp(k)]; }
    const Mat& projector(int k) const { return proj_[clamp(k)]; }

    /// Orthogonal split v = v_sigma + v_perp at entry k.
    void split(const Vec& v, int k, Vec& v_sigma, Vec& v_perp) const;

    /// Throws ConstraintViolation if v leaves range(sigma) by more than tolerance.
    void require_in_range(const Vec& v, int k, const char* what) const;
    /// Throws ConstraintViolation if v has a range(sigma) component beyond tolerance.
    void require_orthogonal(const Vec& v, int k, const char* what) const;

    /// Extends a one-entry market to n_steps entries (no-op otherwise).
    MarketSpec resampled(int n_steps, double dt) const;

    static constexpr double kSvdCutoff = 1e-10;
    static constexpr double kConstraintTol = 1e-8;

private:
    int clamp(int k) const;
    void finalize();

    int n_ = 0;
    int d_ = 0;
    double dt_ = 0.01;
    std::vector<double> r_;
    std::vector<Vec> b_;
    std::vector<Mat> sigma_;
    std::vector<Vec> eta_;
    std::vector<Mat> proj_;
};

struct Projection {
    Vec v_sigma;
    Vec v_perp;
};

struct LocalDynamics {
    double drift = 0.0;
    Vec vol;
};

/// Volatility weight of wealth, required to lie in range(sigma).
struct PolicyField {
    std::string id;
    std::function<Vec(double t, double x)> kappa;
};

/// Dual control, required to lie in the orthogonal complement of range(sigma).
struct DualPolicyField {
    std::string id;
    std::function<Vec(double t, double y)> nu;
};

Projection project_sigma(const Vec& v, double t, const MarketSpec& market);
Vec minimal_risk_premium(const MarketSpec& market, double t);
LocalDynamics wealth_local_dynamics(double x, const Vec& kappa, double t, const MarketSpec& market);
LocalDynamics spd_local_dynamics(double y, const Vec& nu, double t, const MarketSpec& market);

PolicyField constant_policy(const Vec& kappa, std::string id = "constant");
DualPolicyField constant_dual_policy(const Vec& nu, std::string id = "constant");
/// Merton proportion eta/(1-a) for power utility x^a/a.
PolicyField merton_policy(const MarketSpec& market, double a);

nlohmann::json to_json(const MarketSpec& market);
MarketSpec market_from_json(const nlohmann::json& j, double dt = 0.01);
/// FNV-1a digest of the canonical JSON serialization, as 16 hex digits.
std::string market_hash(const MarketSpec& market);

} // namespace fwd
