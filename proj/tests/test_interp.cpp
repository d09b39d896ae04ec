#include "doctest.h"

#include "fwd/error.hpp"
#include "fwd/interp.hpp"
#include "fwd/types.hpp"

#include <cmath>
#include <random>

using namespace fwd;

namespace {

std::vector<double> power_values(const std::vector<double>& x, double c, double p) {
    std::vector<double> y;
    for (double v : x) y.push_back(c * std::pow(v, p));
    return y;
}

} // namespace

TEST_CASE("power laws are reproduced inside and outside the nodes") {
    const auto x = log_grid(0.1, 10.0, 12);
    for (double p : {-1.5, -0.5, 0.5, 2.0}) {
        const auto y = power_values(x, 3.0, p);
        const LogLogCurve c(x.data(), y.data(), static_cast<int>(x.size()));
        for (double q : {0.01, 0.1, 0.37, 1.0, 4.2, 10.0, 50.0}) {
            bool ext = false;
            CHECK(c.eval(q, &ext) == doctest::Approx(3.0 * std::pow(q, p)).epsilon(1e-12));
            CHECK(ext == (q < 0.1 - 1e-12 || q > 10.0 + 1e-12));
            CHECK(c.elasticity(q) == doctest::Approx(p).epsilon(1e-12));
            CHECK(c.deriv(q) == doctest::Approx(3.0 * p * std::pow(q, p - 1)).epsilon(1e-10));
        }
    }
}

TEST_CASE("integrals of power laws are exact") {
    const auto x = log_grid(0.1, 10.0, 9);
    const double p = -0.5;
    const auto y = power_values(x, 2.0, p);
    const LogLogCurve c(x.data(), y.data(), 9);
    auto exact = [&](double a, double b) { return 2.0 * (std::pow(b, p + 1) - std::pow(a, p + 1)) / (p + 1); };
    CHECK(c.integral(0.2, 7.0) == doctest::Approx(exact(0.2, 7.0)).epsilon(1e-12));
    CHECK(c.integral(0.01, 30.0) == doctest::Approx(exact(0.01, 30.0)).epsilon(1e-12));
    CHECK(c.cell_integral(3) == doctest::Approx(exact(x[3], x[4])).epsilon(1e-12));
    CHECK(c.left_tail_integral() == doctest::Approx(exact(0.0, 0.1)).epsilon(1e-12));
    // Log-elasticity exactly -1 integrates to a logarithm.
    const auto y1 = power_values(x, 1.0, -1.0);
    const LogLogCurve c1(x.data(), y1.data(), 9);
    CHECK(c1.integral(0.5, 4.0) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
    CHECK(std::isinf(c1.left_tail_integral()));
    CHECK_THROWS_AS(c.integral(2.0, 1.0), Error);
}

TEST_CASE("monotone data stays monotone between nodes") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.05, 1.5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = log_grid(0.05, 20.0, 15);
        std::vector<double> y(x.size());
        double acc = 1.0;
        for (auto& v : y) v = (acc *= std::exp(-u(rng)));  // decreasing with uneven steps
        const LogLogCurve c(x.data(), y.data(), static_cast<int>(x.size()));
        CHECK_FALSE(c.increasing());
        double prev = c.eval(x.front());
        for (int i = 1; i <= 2000; ++i) {
            const double q = x.front() * std::pow(x.back() / x.front(), i / 2000.0);
            const double v = c.eval(q);
            CHECK(v <= prev * (1.0 + 1e-14));
            prev = v;
        }
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(c.eval(x[i]) == doctest::Approx(y[i]).epsilon(1e-13));
    }
}

TEST_CASE("inverse undoes eval") {
    const auto x = log_grid(0.05, 20.0, 20);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * (1.0 + 0.3 * std::sin(std::log(x[i]))) + 0.01;
    const LogLogCurve c(x.data(), y.data(), 20);
    REQUIRE(c.increasing());
    for (double q : {0.06, 0.3, 1.0, 3.3, 19.0}) {
        bool ext = true;
        CHECK(c.inverse(c.eval(q), &ext) == doctest::Approx(q).epsilon(1e-10));
        CHECK_FALSE(ext);
    }
    bool ext = false;
    const double far = c.inverse(c.eval(40.0), &ext);
    CHECK(ext);
    CHECK(far == doctest::Approx(40.0).epsilon(1e-10));
}

TEST_CASE("invalid nodes are rejected") {
    const std::vector<double> x{1.0, 2.0, 3.0}, bad{1.0, -2.0, 3.0};
    CHECK_THROWS_AS(LogLogCurve(x.data(), bad.data(), 3), Error);
    CHECK_THROWS_AS(LogLogCurve(x.data(), x.data(), 1), Error);
}

TEST_CASE("three-point power fit") {
    const std::vector<double> x{0.5, 1.0, 2.0};
    const auto y = power_values(x, 1.7, -2.5);
    const PowerFit f = fit_power(x.data(), y.data());
    CHECK(f.c == doctest::Approx(1.7).epsilon(1e-12));
    CHECK(f.p == doctest::Approx(-2.5).epsilon(1e-12));
}
