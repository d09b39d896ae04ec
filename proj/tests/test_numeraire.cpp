#include "doctest.h"

#include "fwd/error.hpp"
#include "fwd/numeraire.hpp"

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

struct Setup {
    MarketSpec market = merton();
    BrownianLattice lattice = generate_lattice(30, 40, 0.01, 1, 19);
    std::vector<double> grid = log_grid(0.05, 20.0, 64);
    PolicyField kappa = merton_policy(market, 0.5);
    FlowBundle X;
    UtilityField U;

    Setup() {
        const InitialUtility u = InitialUtility::power(0.5);
        const DualPolicyField nu = constant_dual_policy(Vec::Zero(1));
        X = simulate_wealth_flow(lattice, market, kappa, grid);
        const FlowBundle Y = simulate_spd_flow(lattice, market, nu, dual_grid_for(u, grid));
        U = build_utility_field(X, invert_flow(X, grid), Y, u, {&market, &kappa, &nu});
    }
};

} // namespace

TEST_CASE("numeraire portfolio is the reciprocal minimal density") {
    const MarketSpec m = merton();
    const BrownianLattice l = generate_lattice(10, 20, 0.01, 1, 3);
    const NumeraireSpec N = numeraire_portfolio(l, m);
    const ScalarFlow Y0 = minimal_density(l, m);
    for (int p = 0; p < 10; ++p)
        for (int k = 0; k <= 20; ++k) CHECK(N.N(p, k) * Y0.value(p, k) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(N.mu(0, 0) == doctest::Approx(0.02 + 0.0625));
    CHECK(N.delta(0, 20)(0) == doctest::Approx(0.25));
    CHECK(N.delta_in_range);
}

TEST_CASE("hatted market coefficients") {
    const MarketSpec m = merton();
    const BrownianLattice l = generate_lattice(5, 10, 0.01, 1, 3);
    // In units of the numeraire portfolio the market is a martingale market.
    const HattedMarket h = change_numeraire_market(m, numeraire_portfolio(l, m));
    CHECK(std::abs(h.market.r(0)) < 1e-15);
    CHECK(h.market.eta(0).norm() < 1e-15);
    CHECK_FALSE(h.translated);
    const HattedMarket bank = change_numeraire_market(m, bank_account(l, m));
    CHECK(std::abs(bank.market.r(3)) < 1e-15);
    CHECK(bank.market.eta(3)(0) == doctest::Approx(0.25));
    const HattedMarket unit = change_numeraire_market(m, unit_numeraire(l, m));
    CHECK(unit.market.r(0) == doctest::Approx(0.02));
    CHECK(unit.market.eta(0)(0) == doctest::Approx(0.25));
}

TEST_CASE("numeraire volatility outside range(sigma) translates the admissible set") {
    Vec b(1);
    b << 0.07;
    Mat sig(2, 1);
    sig << 0.2, 0.0;
    const MarketSpec m = MarketSpec::constant(2, 1, 0.02, b, sig);
    const BrownianLattice l = generate_lattice(5, 10, 0.01, 2, 3);
    Vec d(2);
    d << 0.1, 0.3;
    const ScalarFlow f = simulate_scalar(l, [](double, double) { return 0.05; }, [&](double, double) { return d; }, 1.0);
    const NumeraireSpec N = make_numeraire("mixed", f, m);
    CHECK_FALSE(N.delta_in_range);
    const HattedMarket h = change_numeraire_market(m, N);
    CHECK(h.translated);
    CHECK(h.translation[0](1) == doctest::Approx(-0.3));
    // r^ = r - mu^N + delta^sigma . eta = 0.02 - 0.05 + 0.1 * 0.25.
    CHECK(h.market.r(0) == doctest::Approx(-0.005));
    CHECK(h.market.eta(0)(0) == doctest::Approx(0.15));
    const HattedCoefficients c = hatted_coefficients(m, N, 2, 4);
    CHECK(c.eta(1) == doctest::Approx(-0.3));
}

TEST_CASE("path-dependent numeraire coefficients need per-path hatting") {
    const MarketSpec m = merton();
    const BrownianLattice l = generate_lattice(5, 10, 0.01, 1, 3);
    const ScalarFlow f = simulate_scalar(l, [](double, double v) { return 0.1 * v; },
                                         [](double, double) { return Vec::Constant(1, 0.2); }, 1.0);
    const NumeraireSpec N = make_numeraire("state", f, m);
    CHECK_THROWS_AS(change_numeraire_market(m, N), Error);
    CHECK_NOTHROW(hatted_coefficients(m, N, 1, 1));
    ScalarFlow zero = f;
    zero.bundle.values(2, 3, 0) = 0.0;
    CHECK_THROWS_AS(make_numeraire("zero", zero, m), Error);
}

TEST_CASE("utility in numeraire units is invariant along optimal wealth") {
    const Setup s;
    const NumeraireSpec N = numeraire_portfolio(s.lattice, s.market);
    const FlowBundle Xhat = transform_wealth(s.X, N);
    for (int p = 0; p < 30; p += 7)
        CHECK(Xhat.values(p, 25, 10) == doctest::Approx(s.X.values(p, 25, 10) / N.N(p, 25)).epsilon(1e-15));
    const NumeraireView V(s.U, N);
    CHECK(invariance_gap(s.U, V, s.X, Xhat) <= 1e-10);
    // V(t, x) = U(t, x N_t), so V_x = N U_x.
    const double x = 0.9, n = N.N(4, 12);
    const UtilitySlice sl = s.U.slice(4, 12);
    CHECK(V.value(4, 12, x) == doctest::Approx(sl.value(x * n)).epsilon(1e-14));
    CHECK(V.marginal(4, 12, x) == doctest::Approx(n * sl.marginal(x * n)).epsilon(1e-14));
    CHECK(V.curvature(4, 12, x) == doctest::Approx(n * n * sl.curvature(x * n)).epsilon(1e-12));

    const NumeraireSpec one = unit_numeraire(s.lattice, s.market);
    const NumeraireView unit(s.U, one);
    CHECK(unit.value(3, 7, 1.7) == doctest::Approx(s.U.slice(3, 7).value(1.7)).epsilon(1e-15));
}

TEST_CASE("hatted policy in numeraire-portfolio units is kappa - eta") {
    const Setup s;
    const NumeraireSpec N = numeraire_portfolio(s.lattice, s.market);
    const NumeraireView V(s.U, N);
    for (int p = 0; p < 30; p += 5)
        for (double x : {0.5, 1.0, 2.0}) {
            const HattedCoefficients h = hatted_coefficients(s.market, N, p, 20);
            const Vec xk = hatted_policy(V, h, s.market, p, 20, x);
            CHECK(xk(0) / x == doctest::Approx(0.25).epsilon(1e-2));
        }
}

TEST_CASE("sampled transform refuses grids leaving the base utility grid") {
    const Setup s;
    const NumeraireSpec N = numeraire_portfolio(s.lattice, s.market);
    CHECK_NOTHROW(transform_utility(s.U, N, log_grid(0.2, 5.0, 16)));
    const UtilityField T = transform_utility(s.U, N, log_grid(0.2, 5.0, 16));
    CHECK(T.U(2, 30, 4) == doctest::Approx(NumeraireView(s.U, N).value(2, 30, T.x_grid[4])).epsilon(1e-12));
    CHECK_THROWS_AS(transform_utility(s.U, N, log_grid(0.01, 5.0, 16)), Error);
}
