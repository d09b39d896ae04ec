#include "fwd/paths.hpp"
#include "fwd/error.hpp"

#include <cmath>
#include <random>

namespace fwd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::string where(int path, int step) {
    return " at path " + std::to_string(path) + ", step " + std::to_string(step);
}

FlowBundle make_bundle(Role role, const BrownianLattice& lattice, const std::vector<double>& grid,
                       PathRange r, std::string policy_ref) {
    FlowBundle b;
    b.role = role;
    b.grid = grid;
    b.lattice = lattice.ref();
    b.path_begin = r.begin;
    b.policy_ref = std::move(policy_ref);
    b.values = Plane(r.count, lattice.n_steps() + 1, static_cast<int>(grid.size()));
    return b;
}

void check_grid(const std::vector<double>& g, const char* what) {
    if (g.empty()) throw Error(ErrorKind::InvalidConfig, std::string(what) + " grid is empty");
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(g[i] > 0.0) || !std::isfinite(g[i]))
            throw Error(ErrorKind::InvalidConfig, std::string(what) + " grid must be positive");
        if (i > 0 && !(g[i] > g[i - 1]))
            throw Error(ErrorKind::InvalidConfig, std::string(what) + " grid must be strictly increasing");
    }
}

} // namespace

BrownianLattice::BrownianLattice(LatticeRef ref, std::vector<double> increments)
    : ref_(ref), inc_(std::move(increments)) {
    if (inc_.size() != static_cast<std::size_t>(ref.n_paths) * ref.n_steps * ref.dim)
        throw Error(ErrorKind::InvalidInput, "lattice increments do not match its shape");
}

Vec BrownianLattice::W(int path, int k) const {
    Vec w = Vec::Zero(ref_.dim);
    for (int s = 0; s < k; ++s) w += dw(path, s);
    return w;
}

BrownianLattice generate_lattice(int n_paths, int n_steps, double dt, int dim, std::uint64_t seed) {
    if (n_paths < 1 || n_steps < 1 || dim < 1 || dim > kMaxDim)
        throw Error(ErrorKind::InvalidConfig, "lattice counts must be >= 1 and dim <= 8");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorKind::InvalidConfig, "lattice dt must be positive");
    const std::size_t per_path = static_cast<std::size_t>(n_steps) * dim;
    std::vector<double> inc(per_path * n_paths);
    const double sd = std::sqrt(dt);
    for (int p = 0; p < n_paths; ++p) {
        std::mt19937_64 gen(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(p) + 1)));
        std::normal_distribution<double> normal(0.0, sd);
        double* out = inc.data() + per_path * p;
        for (std::size_t i = 0; i < per_path; ++i) out[i] = normal(gen);
    }
    return BrownianLattice({seed, n_paths, n_steps, dim, dt}, std::move(inc));
}

const char* to_string(Role role) {
    switch (role) {
    case Role::Wealth: return "wealth";
    case Role::Spd: return "spd";
    case Role::Scalar: return "scalar";
    case Role::Inverse: return "inverse";
    case Role::Utility: return "utility";
    case Role::Dual: return "dual";
    }
    return "unknown";
}

Role role_from_string(const std::string& s) {
    for (int i = 0; i <= 5; ++i)
        if (s == to_string(static_cast<Role>(i))) return static_cast<Role>(i);
    throw Error(ErrorKind::InvalidInput, "unknown role '" + s + "'");
}

PathRange resolve(const BrownianLattice& lattice, PathRange r) {
    if (r.count < 0) r.count = lattice.n_paths() - r.begin;
    if (r.begin < 0 || r.count < 1 || r.begin + r.count > lattice.n_paths())
        throw Error(ErrorKind::InvalidInput, "path range outside the lattice");
    return r;
}

void require_coupled(const LatticeRef& a, int begin_a, int paths_a, const LatticeRef& b, int begin_b,
                     int paths_b, const char* what) {
    if (!(a == b) || begin_a != begin_b || paths_a != paths_b)
        throw Error(ErrorKind::Coupling, std::string(what) + ": objects were not generated on the same lattice block");
}

Vec ScalarFlow::vol_at(int p, int k) const {
    const int dim = bundle.lattice.dim;
    const std::size_t off = (static_cast<std::size_t>(p) * (bundle.n_times() - 1) + k) * dim;
    return Eigen::Map<const Eigen::VectorXd>(vol.data() + off, dim);
}

FlowBundle simulate_wealth_flow(const BrownianLattice& lattice, const MarketSpec& market,
                                const PolicyField& kappa, const std::vector<double>& x_grid, PathRange range) {
    check_grid(x_grid, "wealth");
    if (market.n() != lattice.dim()) throw Error(ErrorKind::Coupling, "market dimension differs from lattice");
    const PathRange r = resolve(lattice, range);
    FlowBundle b = make_bundle(Role::Wealth, lattice, x_grid, r, kappa.id);
    const int K = lattice.n_steps(), G = static_cast<int>(x_grid.size());
    const double dt = lattice.dt();
    for (int p = 0; p < r.count; ++p) {
        double* row0 = b.values.row(p, 0);
        for (int j = 0; j < G; ++j) row0[j] = x_grid[j];
        for (int k = 0; k < K; ++k) {
            const double t = k * dt;
            const int mk = market.index(t);
            const Eigen::Map<const Eigen::VectorXd> dW = lattice.dw(r.begin + p, k);
            const double* cur = b.values.row(p, k);
            double* next = b.values.row(p, k + 1);
            for (int j = 0; j < G; ++j) {
                const Vec kap = kappa.kappa(t, cur[j]);
                if (!kap.allFinite() || kap.size() != market.n())
                    throw Error(ErrorKind::SimulationBlowup, "kappa not finite" + where(r.begin + p, k));
                market.require_in_range(kap, mk, "kappa");
                const double step = (market.r(mk) + kap.dot(market.eta(mk)) - 0.5 * kap.squaredNorm()) * dt +
                                    kap.dot(dW);
                next[j] = cur[j] * std::exp(step);
                if (!(next[j] > 0.0) || !std::isfinite(next[j]))
                    throw Error(ErrorKind::SimulationBlowup, "wealth left (0, inf)" + where(r.begin + p, k));
            }
        }
    }
    return b;
}

FlowBundle simulate_spd_flow(const BrownianLattice& lattice, const MarketSpec& market, const DualPolicyField& nu,
                             const std::vector<double>& y_grid, PathRange range) {
    check_grid(y_grid, "spd");
    if (market.n() != lattice.dim()) throw Error(ErrorKind::Coupling, "market dimension differs from lattice");
    const PathRange r = resolve(lattice, range);
    FlowBundle b = make_bundle(Role::Spd, lattice, y_grid, r, nu.id);
    const int K = lattice.n_steps(), G = static_cast<int>(y_grid.size());
    const double dt = lattice.dt();
    for (int p = 0; p < r.count; ++p) {
        double* row0 = b.values.row(p, 0);
        for (int j = 0; j < G; ++j) row0[j] = y_grid[j];
        for (int k = 0; k < K; ++k) {
            const double t = k * dt;
            const int mk = market.index(t);
            const Eigen::Map<const Eigen::VectorXd> dW = lattice.dw(r.begin + p, k);
            const double* cur = b.values.row(p, k);
            double* next = b.values.row(p, k + 1);
            for (int j = 0; j < G; ++j) {
                const Vec n = nu.nu(t, cur[j]);
                if (!n.allFinite() || n.size() != market.n())
                    throw Error(ErrorKind::SimulationBlowup, "nu not finite" + where(r.begin + p, k));
                market.require_orthogonal(n, mk, "nu");
                const Vec v = n - market.eta(mk);
                const double step = (-market.r(mk) - 0.5 * v.squaredNorm()) * dt + v.dot(dW);
                next[j] = cur[j] * std::exp(step);
                if (!(next[j] > 0.0) || !std::isfinite(next[j]))
                    throw Error(ErrorKind::SimulationBlowup, "density left (0, inf)" + where(r.begin + p, k));
            }
        }
    }
    return b;
}

ScalarFlow simulate_scalar(const BrownianLattice& lattice, const ScalarDrift& mu, const ScalarVol& vol, double init,
                           PathRange range, std::string id) {
    if (!(init > 0.0)) throw Error(ErrorKind::InvalidConfig, "scalar flow needs a positive initial value");
    const PathRange r = resolve(lattice, range);
    ScalarFlow s;
    s.bundle = make_bundle(Role::Scalar, lattice, {init}, r, std::move(id));
    const int K = lattice.n_steps(), D = lattice.dim();
    const double dt = lattice.dt();
    s.mu.resize(static_cast<std::size_t>(r.count) * K);
    s.vol.resize(static_cast<std::size_t>(r.count) * K * D);
    for (int p = 0; p < r.count; ++p) {
        s.bundle.values(p, 0, 0) = init;
        for (int k = 0; k < K; ++k) {
            const double t = k * dt, cur = s.bundle.values(p, k, 0);
            const double m = mu(t, cur);
            const Vec v = vol(t, cur);
            if (!std::isfinite(m) || v.size() != D || !v.allFinite())
                throw Error(ErrorKind::SimulationBlowup, "scalar coefficients not finite" + where(r.begin + p, k));
            const double next = cur * std::exp((m - 0.5 * v.squaredNorm()) * dt + v.dot(lattice.dw(r.begin + p, k)));
            if (!(next > 0.0) || !std::isfinite(next))
                throw Error(ErrorKind::SimulationBlowup, "scalar flow left (0, inf)" + where(r.begin + p, k));
            s.bundle.values(p, k + 1, 0) = next;
            s.mu[static_cast<std::size_t>(p) * K + k] = m;
            for (int i = 0; i < D; ++i) s.vol[(static_cast<std::size_t>(p) * K + k) * D + i] = v(i);
        }
    }
    return s;
}

ScalarFlow minimal_density(const BrownianLattice& lattice, const MarketSpec& market, PathRange range) {
    return simulate_scalar(
        lattice, [&market](double t, double) { return -market.r(market.index(t)); },
        [&market](double t, double) { return Vec(-market.eta(market.index(t))); }, 1.0, range, "Y0");
}

} // namespace fwd
