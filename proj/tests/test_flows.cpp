#include "doctest.h"

#include "fwd/error.hpp"
#include "fwd/flows.hpp"

#include <cmath>

using namespace fwd;

namespace {

MarketSpec merton() {
    Vec b(1);
    b << 0.07;
    Mat sig(1, 1);
    sig << 0.2;
    return MarketSpec::constant(1, 1, 0.02, b, sig);
}

double growth(const BrownianLattice& l, int p, int k, double kap) {
    return std::exp((0.02 + kap * 0.25 - 0.5 * kap * kap) * k * l.dt() + kap * l.W(p, k)(0));
}

// Wealth-like flow x -> x + s x^2 W_t, non-linear in x and monotone while s W_t > -1/(2 x_max).
FlowBundle quadratic_bundle(const BrownianLattice& l, const std::vector<double>& grid, double s) {
    FlowBundle b;
    b.grid = grid;
    b.lattice = l.ref();
    b.values = Plane(l.n_paths(), l.n_steps() + 1, static_cast<int>(grid.size()));
    for (int p = 0; p < l.n_paths(); ++p)
        for (int k = 0; k <= l.n_steps(); ++k)
            for (std::size_t j = 0; j < grid.size(); ++j)
                b.values(p, k, static_cast<int>(j)) = grid[j] * std::exp(s * grid[j] * l.W(p, k)(0));
    return b;
}

} // namespace

TEST_CASE("linear flow inverts to x / growth") {
    const MarketSpec m = merton();
    const BrownianLattice l = generate_lattice(20, 30, 0.01, 1, 4);
    const auto grid = log_grid(0.05, 20.0, 32);
    const FlowBundle X = simulate_wealth_flow(l, m, merton_policy(m, 0.5), grid);
    CHECK(audit_monotone(X).pass);
    const std::vector<double> z = log_grid(0.01, 100.0, 40);
    const InverseFlowField inv = invert_flow(X, z);
    for (int p = 0; p < 20; ++p)
        for (int k = 0; k <= 30; ++k) {
            const double g = growth(l, p, k, 0.5);
            for (int j = 0; j < 40; ++j) {
                CHECK(inv.values(p, k, j) == doctest::Approx(z[j] / g).epsilon(1e-11));
                const double lo = X.values(p, k, 0), hi = X.values(p, k, 31);
                const std::uint8_t want = z[j] < lo ? kBelow : z[j] > hi ? kAbove : kInterior;
                CHECK(inv.flag(p, k, j) == want);
            }
        }
    const Plane dX = flow_initial_derivative(X);
    CHECK(dX(3, 10, 7) == doctest::Approx(growth(l, 3, 10, 0.5)).epsilon(1e-11));
}

TEST_CASE("flow composed with its inverse is the identity") {
    const BrownianLattice l = generate_lattice(10, 20, 0.01, 1, 6);
    const auto grid = log_grid(0.2, 5.0, 80);
    const FlowBundle X = quadratic_bundle(l, grid, 0.05);
    REQUIRE(audit_monotone(X).pass);
    const std::vector<double> z = log_grid(0.3, 3.0, 15);
    const InverseFlowField inv = invert_flow(X, z);
    const Plane id = compose_flows(X, inv);
    for (int p = 0; p < 10; ++p)
        for (int k = 0; k <= 20; ++k)
            for (int j = 0; j < 15; ++j) {
                if (inv.flag(p, k, j) != kInterior) continue;
                CHECK(id(p, k, j) == doctest::Approx(z[j]).epsilon(1e-10));
            }
    // d/dx of x exp(s x W) = exp(s x W) (1 + s x W), up to interpolation error.
    const Plane dX = flow_initial_derivative(X);
    for (int j = 5; j < 75; j += 10) {
        const double x = grid[j], w = l.W(2, 20)(0);
        CHECK(dX(2, 20, j) == doctest::Approx(std::exp(0.05 * x * w) * (1.0 + 0.05 * x * w)).epsilon(1e-4));
    }
}

TEST_CASE("non-monotone flow is reported and refused") {
    const BrownianLattice l = generate_lattice(3, 4, 0.01, 1, 1);
    FlowBundle b;
    b.grid = {1.0, 2.0, 3.0};
    b.lattice = l.ref();
    b.values = Plane(3, 5, 3);
    for (int p = 0; p < 3; ++p)
        for (int k = 0; k < 5; ++k)
            for (int j = 0; j < 3; ++j) b.values(p, k, j) = b.grid[j];
    b.values(1, 2, 2) = 1.5;  // crosses the middle node
    b.values(2, 4, 1) = 1.0;  // tie
    const MonotonicityAudit a = audit_monotone(b);
    CHECK_FALSE(a.pass);
    CHECK(a.total == 2);
    CHECK(a.violations[1 * 5 + 2] == 1);
    CHECK(a.offending_paths == std::vector<int>{1, 2});
    CHECK(a.worst_ratio == doctest::Approx(0.75));
    try {
        invert_flow(b, {1.5});
        FAIL("expected NonInvertibleFlow");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonInvertibleFlow);
    }
}

TEST_CASE("inverse-flow drift and volatility residuals are small for the correct dynamics") {
    const MarketSpec m = merton();
    const PolicyField kappa = merton_policy(m, 0.5);
    const BrownianLattice l = generate_lattice(2000, 50, 0.01, 1, 21);
    const auto grid = log_grid(0.05, 20.0, 48);
    const FlowBundle X = simulate_wealth_flow(l, m, kappa, grid);
    const InverseFlowField inv = invert_flow(X, log_grid(0.2, 5.0, 24));
    const InverseFlowResidual good = inverse_flow_dynamics_residual(X, inv, l, wealth_dynamics(m, kappa));
    // Leading bias of the discrete residual for a linear flow: (v^2 - mu)^2 dt / 2 with v = 0.5, mu = 0.145.
    const double bias = 0.5 * 0.105 * 0.105 * 0.01;
    CHECK(good.drift_residual < bias + 4.0 * good.drift_stderr);
    CHECK(good.vol_residual < 0.02);
    CHECK(good.n_paths == 2000);
    // A wrong policy in the model dynamics shows up as a drift excess.
    const InverseFlowResidual bad =
        inverse_flow_dynamics_residual(X, inv, l, wealth_dynamics(m, constant_policy(Vec::Constant(1, 0.3))));
    CHECK(bad.drift_residual > 10.0 * good.drift_residual);
    CHECK(bad.vol_residual > 0.1);
}
