#include "fwd/market.hpp"
#include "fwd/error.hpp"
#include "fwd/io.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstdio>

namespace fwd {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::SingularMarket: return "singular-market";
    case ErrorKind::NoArbitrageViolation: return "no-arbitrage-violation";
    case ErrorKind::ConstraintViolation: return "constraint-violation";
    case ErrorKind::SimulationBlowup: return "simulation-blowup";
    case ErrorKind::NonInvertibleFlow: return "non-invertible-flow";
    case ErrorKind::Coupling: return "coupling";
    case ErrorKind::Range: return "range";
    case ErrorKind::InvalidField: return "invalid-field";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

std::vector<double> log_grid(double lo, double hi, int n) {
    if (!(lo > 0.0) || !(hi > lo) || n < 2)
        throw Error(ErrorKind::InvalidConfig, "log_grid needs 0 < lo < hi and n >= 2");
    std::vector<double> g(n);
    const double a = std::log(lo), b = std::log(hi);
    for (int i = 0; i < n; ++i) g[i] = std::exp(a + (b - a) * i / (n - 1));
    g.front() = lo;
    g.back() = hi;
    return g;
}

MarketSpec::MarketSpec(int n, int d, double dt, std::vector<double> r, std::vector<Vec> b,
                       std::vector<Mat> sigma)
    : n_(n), d_(d), dt_(dt), r_(std::move(r)), b_(std::move(b)), sigma_(std::move(sigma)) {
    finalize();
}

MarketSpec MarketSpec::constant(int n, int d, double r, const Vec& b, const Mat& sigma, double dt) {
    return MarketSpec(n, d, dt, {r}, {b}, {sigma});
}

int MarketSpec::clamp(int k) const {
    const int last = static_cast<int>(r_.size()) - 1;
    return k < 0 ? 0 : (k > last ? last : k);
}

int MarketSpec::index(double t) const {
    if (r_.size() <= 1) return 0;
    return clamp(static_cast<int>(std::floor(t / dt_ + 1e-9)));
}

void MarketSpec::finalize() {
    if (n_ < 1 || n_ > kMaxDim || d_ < 1 || d_ > n_)
        throw Error(ErrorKind::InvalidConfig, "market needs 1 <= d <= n <= 8");
    if (!(dt_ > 0.0)) throw Error(ErrorKind::InvalidConfig, "market dt must be positive");
    if (r_.empty() || b_.size() != r_.size() || sigma_.size() != r_.size())
        throw Error(ErrorKind::InvalidConfig, "market coefficient arrays must share a nonzero length");
    eta_.resize(r_.size());
    proj_.resize(r_.size());
    for (std::size_t k = 0; k < r_.size(); ++k) {
        const Mat& s = sigma_[k];
        if (s.rows() != n_ || s.cols() != d_ || b_[k].size() != d_)
            throw Error(ErrorKind::InvalidConfig, "market coefficient shape mismatch at entry " + std::to_string(k));
        if (!s.allFinite() || !b_[k].allFinite() || !std::isfinite(r_[k]))
            throw Error(ErrorKind::InvalidConfig, "non-finite market coefficient at entry " + std::to_string(k));
        Eigen::JacobiSVD<Mat> svd(s, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        const double smax = sv.size() ? sv(0) : 0.0;
        int rank = 0;
        for (int i = 0; i < sv.size(); ++i)
            if (sv(i) > kSvdCutoff * smax) ++rank;
        if (smax == 0.0 || rank < d_)
            throw Error(ErrorKind::SingularMarket,
                        "sigma^T sigma is singular at entry " + std::to_string(k));
        Mat u = svd.matrixU().leftCols(rank);
        proj_[k] = u * u.transpose();
        // Minimum-norm solution of sigma^T eta = b - r1: eta = U S^{-1} V^T (b - r1).
        Vec excess = b_[k] - Vec::Constant(d_, r_[k]);
        Vec w = svd.matrixV().leftCols(rank).transpose() * excess;
        for (int i = 0; i < rank; ++i) w(i) /= sv(i);
        eta_[k] = u * w;
        const double resid = (s.transpose() * eta_[k] - excess).norm();
        if (resid > 1e-9 * (1.0 + excess.norm()))
            throw Error(ErrorKind::NoArbitrageViolation,
                        "b - r1 is not in the range of sigma^T at entry " + std::to_string(k));
    }
}

void MarketSpec::split(const Vec& v, int k, Vec& v_sigma, Vec& v_perp) const {
    v_sigma = projector(k) * v;
    v_perp = v - v_sigma;
}

void MarketSpec::require_in_range(const Vec& v, int k, const char* what) const {
    if (v.size() != n_) throw Error(ErrorKind::InvalidInput, std::string(what) + " has wrong dimension");
    const Vec perp = v - projector(k) * v;
    if (perp.norm() > kConstraintTol * (1.0 + v.norm()))
        throw Error(ErrorKind::ConstraintViolation, std::string(what) + " is outside range(sigma)");
}

void MarketSpec::require_orthogonal(const Vec& v, int k, const char* what) const {
    if (v.size() != n_) throw Error(ErrorKind::InvalidInput, std::string(what) + " has wrong dimension");
    const Vec par = projector(k) * v;
    if (par.norm() > kConstraintTol * (1.0 + v.norm()))
        throw Error(ErrorKind::ConstraintViolation, std::string(what) + " has a range(sigma) component");
}

MarketSpec MarketSpec::resampled(int n_steps, double dt) const {
    if (r_.size() != 1) {
        MarketSpec m = *this;
        m.dt_ = dt;
        return m;
    }
    return MarketSpec(n_, d_, dt, std::vector<double>(n_steps, r_[0]), std::vector<Vec>(n_steps, b_[0]),
                      std::vector<Mat>(n_steps, sigma_[0]));
}

Projection project_sigma(const Vec& v, double t, const MarketSpec& market) {
    if (v.size() != market.n() || !v.allFinite())
        throw Error(ErrorKind::InvalidInput, "project_sigma needs a finite n-vector");
    Projection p;
    market.split(v, market.index(t), p.v_sigma, p.v_perp);
    return p;
}

Vec minimal_risk_premium(const MarketSpec& market, double t) { return market.eta(market.index(t)); }

LocalDynamics wealth_local_dynamics(double x, const Vec& kappa, double t, const MarketSpec& market) {
    if (!(x > 0.0)) throw Error(ErrorKind::InvalidInput, "wealth must be positive");
    const int k = market.index(t);
    market.require_in_range(kappa, k, "kappa");
    return {x * (market.r(k) + kappa.dot(market.eta(k))), x * kappa};
}

LocalDynamics spd_local_dynamics(double y, const Vec& nu, double t, const MarketSpec& market) {
    if (!(y > 0.0)) throw Error(ErrorKind::InvalidInput, "state price density must be positive");
    const int k = market.index(t);
    market.require_orthogonal(nu, k, "nu");
    return {-y * market.r(k), y * (nu - market.eta(k))};
}

PolicyField constant_policy(const Vec& kappa, std::string id) {
    return {std::move(id), [kappa](double, double) { return kappa; }};
}

DualPolicyField constant_dual_policy(const Vec& nu, std::string id) {
    return {std::move(id), [nu](double, double) { return nu; }};
}

PolicyField merton_policy(const MarketSpec& market, double a) {
    if (!(a < 1.0) || a == 0.0) throw Error(ErrorKind::InvalidConfig, "merton policy needs a < 1, a != 0");
    return {"merton", [market, a](double t, double) { return Vec(market.eta(market.index(t)) / (1.0 - a)); }};
}

nlohmann::json to_json(const MarketSpec& m) {
    nlohmann::json j;
    j["n"] = m.n();
    j["d"] = m.d();
    j["dt"] = m.dt();
    auto r = nlohmann::json::array(), b = nlohmann::json::array(), s = nlohmann::json::array();
    for (int k = 0; k < m.n_entries(); ++k) {
        r.push_back(m.r(k));
        b.push_back(std::vector<double>(m.b(k).data(), m.b(k).data() + m.d()));
        auto rows = nlohmann::json::array();
        for (int i = 0; i < m.n(); ++i) {
            auto row = nlohmann::json::array();
            for (int c = 0; c < m.d(); ++c) row.push_back(m.sigma(k)(i, c));
            rows.push_back(row);
        }
        s.push_back(rows);
    }
    j["r"] = r;
    j["b"] = b;
    j["sigma"] = s;
    return j;
}

MarketSpec market_from_json(const nlohmann::json& j, double dt) {
    try {
        const int n = j.at("n").get<int>(), d = j.at("d").get<int>();
        if (j.contains("dt")) dt = j.at("dt").get<double>();
        std::vector<double> r = j.at("r").get<std::vector<double>>();
        std::vector<Vec> b;
        std::vector<Mat> s;
        for (const auto& bk : j.at("b")) {
            auto vals = bk.get<std::vector<double>>();
            if (static_cast<int>(vals.size()) != d) throw Error(ErrorKind::InvalidConfig, "b entry must have d values");
            b.push_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), d));
        }
        for (const auto& sk : j.at("sigma")) {
            if (static_cast<int>(sk.size()) != n) throw Error(ErrorKind::InvalidConfig, "sigma entry must have n rows");
            Mat m(n, d);
            for (int i = 0; i < n; ++i) {
                auto row = sk.at(i).get<std::vector<double>>();
                if (static_cast<int>(row.size()) != d) throw Error(ErrorKind::InvalidConfig, "sigma row must have d values");
                for (int c = 0; c < d; ++c) m(i, c) = row[c];
            }
            s.push_back(m);
        }
        return MarketSpec(n, d, dt, std::move(r), std::move(b), std::move(s));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("market JSON: ") + e.what());
    }
}

std::string market_hash(const MarketSpec& market) { return fnv1a_hex(to_json(market).dump()); }

} // namespace fwd
