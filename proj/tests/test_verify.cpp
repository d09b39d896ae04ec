#include "doctest.h"

#include "fwd/error.hpp"
#include "fwd/verify.hpp"

#include <cmath>
#include <random>

using namespace fwd;

namespace {

MarketSpec merton() {
    Vec b(1);
    b << 0.07;
    Mat sig(1, 1);
    sig << 0.2;
    return MarketSpec::constant(1, 1, 0.02, b, sig);
}

// exp(mu t + s W_t - s^2 t / 2) sampled on a lattice.
PathSamples gbm(const BrownianLattice& l, double mu, double s) {
    PathSamples out(l.n_paths(), l.n_steps() + 1);
    for (int p = 0; p < l.n_paths(); ++p)
        for (int k = 0; k <= l.n_steps(); ++k)
            out(p, k) = std::exp((mu - 0.5 * s * s) * k * l.dt() + s * l.W(p, k)(0));
    return out;
}

struct MertonSetup {
    MarketSpec market = merton();
    BrownianLattice lattice;
    UtilityField U;
    std::vector<double> grid = log_grid(0.05, 20.0, 48);

    explicit MertonSetup(int paths, std::uint64_t seed) : lattice(generate_lattice(paths, 50, 0.01, 1, seed)) {
        const InitialUtility u = InitialUtility::power(0.5);
        const PolicyField kappa = merton_policy(market, 0.5);
        const DualPolicyField nu = constant_dual_policy(Vec::Zero(1));
        const FlowBundle X = simulate_wealth_flow(lattice, market, kappa, grid);
        const FlowBundle Y = simulate_spd_flow(lattice, market, nu, dual_grid_for(u, grid));
        U = build_utility_field(X, invert_flow(X, grid), Y, u, {&market, &kappa, &nu});
    }
};

} // namespace

TEST_CASE("Bonferroni critical values") {
    const BrownianLattice l = generate_lattice(200, 10, 0.1, 1, 1);
    const MartingaleVerdict v = martingale_test(gbm(l, 0.0, 0.2), MartingaleMode::Martingale);
    CHECK(v.n_tests == 19);
    CHECK(v.critical == doctest::Approx(3.0077865564732638).epsilon(1e-6));
    const BrownianLattice l2 = generate_lattice(200, 100, 0.01, 1, 1);
    CHECK(martingale_test(gbm(l2, 0.0, 0.2), MartingaleMode::Martingale).critical ==
          doctest::Approx(3.660976015372297).epsilon(1e-6));
    CHECK(martingale_test(gbm(l2, 0.0, 0.2), MartingaleMode::Supermartingale).critical ==
          doctest::Approx(3.4794135007254057).epsilon(1e-6));
}

TEST_CASE("martingale test separates drifts") {
    const BrownianLattice l = generate_lattice(2000, 50, 0.01, 1, 5);
    MartingaleOptions opt;
    opt.controls = &l;
    CHECK(martingale_test(gbm(l, 0.0, 0.3), MartingaleMode::Martingale, opt).verdict == Verdict::Pass);
    CHECK(martingale_test(gbm(l, 0.3, 0.3), MartingaleMode::Martingale, opt).verdict == Verdict::Fail);
    const PathSamples down = gbm(l, -0.3, 0.3);
    CHECK(martingale_test(down, MartingaleMode::Supermartingale, opt).verdict == Verdict::Pass);
    CHECK(martingale_test(down, MartingaleMode::Submartingale, opt).verdict == Verdict::Fail);
    const MartingaleVerdict up = martingale_test(gbm(l, 0.3, 0.3), MartingaleMode::Submartingale, opt);
    CHECK(up.verdict == Verdict::Pass);
    CHECK(up.final_drift == doctest::Approx(std::exp(0.15) - 1.0).epsilon(0.1));
    // Too few paths to decide.
    const BrownianLattice small = generate_lattice(50, 10, 0.01, 1, 5);
    CHECK(martingale_test(gbm(small, 0.0, 0.3), MartingaleMode::Martingale).verdict == Verdict::Inconclusive);
    PathSamples nan = gbm(small, 0.0, 0.3);
    nan(3, 4) = std::nan("");
    CHECK_THROWS_AS(martingale_test(nan, MartingaleMode::Martingale), Error);
}

TEST_CASE("martingale test holds its size under the null") {
    // 40 independent nulls at 95% confidence: more than 7 rejections has probability below 1e-3.
    int rejects = 0;
    for (std::uint64_t seed = 100; seed < 140; ++seed) {
        const BrownianLattice l = generate_lattice(500, 20, 0.05, 1, seed);
        MartingaleOptions opt;
        opt.controls = &l;
        rejects += martingale_test(gbm(l, 0.0, 0.25), MartingaleMode::Martingale, opt).verdict == Verdict::Fail;
    }
    CHECK(rejects <= 7);
}

TEST_CASE("cell regression recovers intercept and slopes") {
    const BrownianLattice l = generate_lattice(4000, 1, 0.01, 2, 3);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> noise(0.0, 0.05);
    CellRegression reg(1, 1, 2);
    for (int p = 0; p < 4000; ++p) {
        const double* dw = l.dW(p, 0);
        const double q = (dw[0] * dw[0] - 0.01) / 0.01;
        reg.add(0, 0, 0.3 + 2.0 * dw[0] - 1.0 * dw[1] + 0.7 * q + noise(rng), dw, 1.0, 0.01);
    }
    const CellRegression::Cell c = reg.solve(0, 0);
    CHECK(c.n == 4000);
    REQUIRE(c.slope.size() == 2);
    CHECK(std::abs(c.intercept - 0.3) < 4.0 * c.stderr_);
    CHECK(c.stderr_ == doctest::Approx(0.05 / std::sqrt(4000.0)).epsilon(0.1));
    CHECK(c.slope[0] == doctest::Approx(2.0).epsilon(0.02));
    CHECK(c.slope[1] == doctest::Approx(-1.0).epsilon(0.02));
    CHECK(reg.solve(0, 0).scale == doctest::Approx(1.0));
}

TEST_CASE("HJB and dual drift formulas at hand-computed points") {
    const MarketSpec m = merton();
    // Power a = 0.5 at x = 1, t = 0: U_x = 1, U_xx = -1/2; U_t = c U with c = -0.04125 and U = 2.
    CHECK(hjb_beta(1.0, 1.0, -0.5, Vec::Zero(1), m, 0) == doctest::Approx(-0.0825).epsilon(1e-14));
    // With gamma_x = 0.1: -0.02 + (0.1 + 0.25)^2 / (2 * -0.5).
    CHECK(hjb_beta(1.0, 1.0, -0.5, Vec::Constant(1, 0.1), m, 0) == doctest::Approx(-0.02 - 0.1225));
    // Dual of the same utility: V = 1/y, V_y = -1/y^2, V_yy = 2/y^3; at y = 1 the drift is -r - eta^2 = -0.0825.
    CHECK(dual_beta(1.0, -1.0, 2.0, Vec::Zero(1), m, 0) == doctest::Approx(-0.0825).epsilon(1e-14));
    const MeasureMixture atom = MeasureMixture::normalized({0.5}, {1.0});
    const DualPoint d = mixture_dual(atom, 1.0, 0.0, 0.0, 0.0625, 0.02);
    CHECK(d.Vt == doctest::Approx(-0.0825).epsilon(1e-12));
}

TEST_CASE("HJB drift residual: flow-built field passes, shifted drift fails") {
    const MertonSetup s(2000, 31);
    DriftOptions opt;
    opt.x_lo = 0.2;
    opt.x_hi = 5.0;
    const ResidualReport good = hjb_drift_residual(s.U, s.market, s.lattice, opt);
    CHECK(good.verdict == Verdict::Pass);
    CHECK(good.residual < good.threshold);
    CHECK(good.n_paths == 2000);
    opt.beta_shift = 0.1;
    const ResidualReport bad = hjb_drift_residual(s.U, s.market, s.lattice, opt);
    CHECK(bad.verdict == Verdict::Fail);
    CHECK(bad.residual > 3.0 * bad.threshold);
    opt.beta_shift = 0.0;
    opt.min_paths = 5000;
    CHECK(hjb_drift_residual(s.U, s.market, s.lattice, opt).verdict == Verdict::Inconclusive);

    const DualField D = conjugate_field(s.U, dual_grid_for(InitialUtility::power(0.5), s.grid), &s.market);
    DriftOptions dopt;
    dopt.x_lo = 0.2;
    dopt.x_hi = 5.0;
    CHECK(dual_drift_residual(D, s.market, s.lattice, dopt).verdict == Verdict::Pass);
}

TEST_CASE("decreasing mixture meets its analytic dual drift") {
    Vec b(1);
    b << 0.07;
    Mat sig(1, 1);
    sig << 0.2;
    const MarketSpec market = MarketSpec::constant(1, 1, 0.02, b, sig);
    const MeasureMixture m = MeasureMixture::normalized({0.3, 0.5, 0.8}, {0.2, 0.5, 0.3});
    const auto xg = log_grid(0.05, 20.0, 32);
    const DecreasingUtility f = decreasing_utility(m, market, 40, 0.01, dual_grid_for(InitialUtility::mixture(m), xg), xg);
    const ResidualReport r = decreasing_dual_residual(m, f, market);
    CHECK(r.residual < 1e-10);
    CHECK(r.verdict == Verdict::Pass);
}

TEST_CASE("Ito-Ventzel cross term is needed") {
    const BrownianLattice l = generate_lattice(4000, 40, 0.01, 1, 12);
    const Vec s = Vec::Constant(1, 0.3);
    const ScalarFlow M = simulate_scalar(l, [](double, double) { return 1.0; }, [&](double, double) { return s; }, 1.0);
    const ScalarFlow X = simulate_scalar(l, [](double, double) { return 0.05; }, [&](double, double) { return s; }, 1.0);
    const ItoVentzelReport r = ito_ventzel_residual(product_field(M), X, l);
    // Omitting gamma_x . sigma^X = 0.09 x M biases the relative drift by 0.09.
    CHECK(r.without_correction.residual == doctest::Approx(0.09).epsilon(0.15));
    CHECK(r.with_correction.residual < r.without_correction.residual / 5.0);
}

TEST_CASE("convergence ratios and slopes") {
    std::vector<ResidualReport> levels(3);
    levels[0].residual = 0.4;
    levels[1].residual = 0.2;
    levels[2].residual = 0.1;
    CHECK(convergence_ratios(levels) == std::vector<double>{2.0, 2.0});
    attach_convergence(levels);
    REQUIRE(levels[1].slope);
    CHECK(*levels[1].slope == doctest::Approx(1.0));
    std::vector<ResidualReport> one(1);
    attach_convergence(one);
    CHECK_FALSE(one[0].slope);
}

TEST_CASE("risk tolerance of a flow-built field follows the flow") {
    const MertonSetup s(50, 8);
    const InitialUtility u = InitialUtility::power(0.5);
    const MarketSpec& m = s.market;
    const FlowBundle X = simulate_wealth_flow(s.lattice, m, merton_policy(m, 0.5), s.grid);
    const FlowBundle Y = simulate_spd_flow(s.lattice, m, constant_dual_policy(Vec::Zero(1)), dual_grid_for(u, s.grid));
    DriftOptions opt;
    opt.x_lo = 0.2;
    opt.x_hi = 5.0;
    const RiskToleranceCheck r = risk_tolerance_check(s.U, X, Y, u, 1.0, opt);
    CHECK(r.cells > 0);
    CHECK(r.mean_rel_error() < 1e-2);
}

TEST_CASE("verification report JSON round trip") {
    VerificationReport rep;
    rep.experiment = "demo";
    rep.config_hash = "0123456789abcdef";
    rep.entries.push_back({"a", "tag-a", 0.1, 0.2, Verdict::Pass, 100, 0.01});
    rep.entries.push_back({"b", "tag-b", 0.3, 0.2, Verdict::Fail, 100, 0.01});
    const VerificationReport back = VerificationReport::from_json(rep.to_json());
    CHECK_FALSE(back.all_pass());
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[1].verdict == Verdict::Fail);
    CHECK(back.entries[0].paper_ref == "tag-a");
    CHECK(back.to_json().dump() == rep.to_json().dump());
    CHECK(rep.to_json().contains("caveat"));
    CHECK_THROWS_AS(VerificationReport::from_json(nlohmann::json::object()), Error);
}

TEST_CASE("drift of U(t, X^kappa) is maximal at the optimal policy") {
    // Ito-Ventzel drift of U(t, X^kappa): beta + U_x x (r + kappa.eta) + U_xx x^2 |kappa|^2 / 2 + x kappa.gamma_x,
    // with beta from the HJB constraint; it vanishes at kappa* and is negative elsewhere.
    const MertonSetup s(20, 41);
    const MarketSpec& m = s.market;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> pick(-2.0, 2.0);
    for (int p = 0; p < 20; p += 3)
        for (int k = 0; k < 50; k += 7)
            for (int j = 10; j < 40; j += 3) {
                if (!s.U.interior(p, k, j)) continue;
                const double x = s.grid[j], ux = s.U.Ux(p, k, j), uxx = s.U.Uxx(p, k, j);
                const Vec gx = s.U.gamma_at(p, k, j);
                const double beta = hjb_beta(x, ux, uxx, gx, m, 0);
                auto drift = [&](double kap) {
                    const Vec kv = Vec::Constant(1, kap);
                    return beta + ux * x * (m.r(0) + kv.dot(m.eta(0))) + 0.5 * uxx * x * x * kv.squaredNorm() +
                           x * kv.dot(gx);
                };
                const double kstar = -(ux * m.eta(0)(0) + gx(0)) / (x * uxx);
                CHECK(std::abs(drift(kstar)) < 1e-12 * (1.0 + std::abs(beta)));
                for (int trial = 0; trial < 5; ++trial) CHECK(drift(pick(rng)) <= 1e-12);
            }
}
