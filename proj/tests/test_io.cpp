#include "doctest.h"

#include "fwd/config.hpp"
#include "fwd/error.hpp"
#include "fwd/experiment.hpp"
#include "fwd/io.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace fwd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "fwd-unit" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const char* kMinimal = R"(
schema_version = 1
name = "mini"
kind = "flow"

[market]
n = 1
d = 1
r = 0.02
b = [0.07]
sigma = [[0.2]]

[utility]
kind = "power"
a = 0.5
)";

} // namespace

TEST_CASE("FNV-1a reference digests") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("doubles format in shortest round-trip form") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(2.0) == "2");
    CHECK(format_double(std::nan("")) == "nan");
}

TEST_CASE("CSV quoting") {
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
    std::ostringstream os;
    write_csv_row(os, {"x", "1,2", ""});
    CHECK(os.str() == "x,\"1,2\",\r\n");
}

TEST_CASE("TOML subset parser") {
    const nlohmann::json j = parse_toml(R"(
# comment
title = "t # not a comment"
n = -3
x = 1.5e-2
flag = true
nested = [[1, 2],
          [3, 4]]  # trailing
[a.b]
s = 'single'
)");
    CHECK(j["title"] == "t # not a comment");
    CHECK(j["n"] == -3);
    CHECK(j["x"].get<double>() == doctest::Approx(0.015));
    CHECK(j["flag"] == true);
    CHECK(j["nested"][1][0] == 3);
    CHECK(j["a"]["b"]["s"] == "single");
    CHECK_THROWS_AS(parse_toml("x = "), Error);
    CHECK_THROWS_AS(parse_toml("x = [1, 2"), Error);
    CHECK_THROWS_AS(parse_toml("x = 1\nx = 2"), Error);
}

TEST_CASE("config defaults, validation and overrides") {
    ExperimentConfig c = config_from_json(parse_toml(kMinimal));
    CHECK(c.lattice.n_paths == 2000);
    CHECK(c.grid.n == 64);
    CHECK(c.verify.checks == default_checks("flow"));
    CHECK(c.market.eta(0)(0) == doctest::Approx(0.25));
    CHECK(c.hash.size() == 16);
    const std::string h0 = c.hash;
    apply_overrides(c, 99u, 500, std::nullopt);
    CHECK(c.lattice.seed == 99u);
    CHECK(c.lattice.n_paths == 500);
    CHECK(c.hash != h0);
    CHECK(config_from_json(c.raw).hash == c.hash);

    auto bad = [](const std::string& extra) {
        return parse_toml(std::string(kMinimal) + extra);
    };
    CHECK_THROWS_AS(config_from_json(bad("[lattice]\nn_paths = 0\n")), Error);
    CHECK_THROWS_AS(config_from_json(bad("[lattice]\ncolour = 1\n")), Error);
    CHECK_THROWS_AS(config_from_json(bad("[verify]\nchecks = [\"condition\"]\n")), Error);
    CHECK_THROWS_AS(config_from_json(bad("[policy]\nnu = \"merton\"\n")), Error);
    nlohmann::json v2 = parse_toml(kMinimal);
    v2["schema_version"] = 2;
    CHECK_THROWS_AS(config_from_json(v2), Error);
    nlohmann::json singular = parse_toml(kMinimal);
    singular["market"]["sigma"] = nlohmann::json::array({nlohmann::json::array({0.0})});
    try {
        config_from_json(singular);
        FAIL("expected a singular market");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SingularMarket);
    }
}

TEST_CASE("bundled configs load") {
    for (const char* f : {"merton-power.toml", "negative-control.toml", "decreasing-eta0.toml"}) {
        CAPTURE(f);
        CHECK_NOTHROW(load_config(fs::path(FWD_CONFIG_DIR) / f));
    }
    CHECK_THROWS_AS(load_config(fs::path(FWD_CONFIG_DIR) / "missing.toml"), Error);
}

TEST_CASE("plane files round trip") {
    const fs::path dir = scratch("planes");
    const BrownianLattice l = generate_lattice(3, 4, 0.01, 1, 0xfedcba9876543210ull);
    Plane p(3, 5, 2);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = 0.1 * static_cast<double>(i) + 1.0 / 3.0;
    write_plane(dir / "x", Role::Utility, p, {0.5, 2.0}, l.ref(), {{"config_hash", "abc"}});
    const StoredPlane s = read_plane(dir / "x");
    CHECK(s.role == Role::Utility);
    CHECK(s.plane.v == p.v);
    CHECK(s.grid == std::vector<double>{0.5, 2.0});
    CHECK(s.lattice == l.ref());
    CHECK(s.sidecar["config_hash"] == "abc");
    CHECK_THROWS_AS(read_plane(dir / "nothing"), Error);
}

TEST_CASE("report summary over a directory") {
    const fs::path dir = scratch("reports");
    VerificationReport a;
    a.experiment = "b-exp";
    a.config_hash = "h1";
    a.entries.push_back({"x", "t", 0.1, 0.2, Verdict::Pass, 10, 0.01});
    VerificationReport b;
    b.experiment = "a-exp";
    b.entries.push_back({"y", "t", 0.3, 0.2, Verdict::Fail, 10, 0.01});
    b.entries.push_back({"z", "t", 0.3, 0.2, Verdict::Inconclusive, 10, 0.01});
    fs::create_directories(dir / "one");
    fs::create_directories(dir / "two");
    fs::create_directories(dir / "broken");
    write_json(dir / "one" / "report.json", a.to_json());
    write_json(dir / "two" / "report.json", b.to_json());
    write_text(dir / "broken" / "report.json", "{not json");
    const ReportSummary s = summarize_reports(dir);
    CHECK(s.pass == 1);
    CHECK(s.fail == 1);
    CHECK(s.inconclusive == 1);
    CHECK(s.absent == 1);
    CHECK(s.exit_code != 0);
    REQUIRE(s.rows.size() == 4);
    CHECK(s.rows[0].experiment == "a-exp");
    CHECK(fs::exists(dir / "summary.csv"));
    CHECK(s.table.find("4 rows: 1 pass, 1 fail, 1 inconclusive, 1 absent") != std::string::npos);

    const fs::path ok = scratch("reports-ok");
    write_json(ok / "report.json", a.to_json());
    CHECK(summarize_reports(ok, false).exit_code == 0);
    CHECK_FALSE(fs::exists(ok / "summary.csv"));
    const fs::path empty = scratch("reports-empty");
    CHECK(summarize_reports(empty, false).exit_code != 0);
}

TEST_CASE("stage errors carry a hint") {
    const StageError e("simulate", Error(ErrorKind::SimulationBlowup, "wealth left (0, inf)"));
    CHECK(e.stage() == "simulate");
    CHECK(std::string(e.what()).find("stage simulate") != std::string::npos);
    CHECK_FALSE(e.hint().empty());
    CHECK(e.kind() == ErrorKind::SimulationBlowup);
}
