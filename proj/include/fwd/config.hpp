#pragma once

#include "fwd/market.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fwd {

/// Parses the TOML subset used by experiment configs into a JSON tree:
/// [table] and [a.b] headers, bare keys, strings, integers, floats, booleans,
/// and (possibly nested, possibly multi-line) arrays. Comments start with '#'.
nlohmann::json parse_toml(const std::string& text, const std::string& source = "<config>");
nlohmann::json load_toml(const std::filesystem::path& path);

constexpr int kSchemaVersion = 1;

struct LatticeSettings {
    int n_paths = 2000;
    int n_steps = 100;
    double dt = 0.01;
    std::uint64_t seed = 1;
};

struct GridSettings {
    double x_min = 0.05;
    double x_max = 20.0;
    int n = 64;
};

/// Policy generators picked from the registry {constant, merton, from-closed-form, user-table}.
struct PolicySettings {
    std::string kappa = "merton";
    std::vector<double> kappa_value;
    std::string nu = "constant";
    std::vector<double> nu_value;
    std::vector<double> table_t;                  ///< user-table breakpoints (piecewise constant in t)
    std::vector<std::vector<double>> table_kappa;
};

/// Z v(x/N) family with constant per-unit coefficients. Drifts default to the
/// values that satisfy the family's sufficient condition; mu_Z_shift perturbs them.
struct FamilySettings {
    std::string v = "exponential";
    double param = 1.0;
    std::vector<double> sigma_N;
    std::vector<double> sigma_Z;
    std::optional<double> mu_N;
    std::optional<double> mu_Z;
    double mu_Z_shift = 0.0;
};

struct MixtureSettings {
    std::vector<double> alphas;
    std::vector<double> weights;
    bool log_limit = false;
};

struct VerifySettings {
    double confidence = 0.95;
    std::set<std::string> checks;
    int dt_levels = 1;
    double x_lo = 0.2;
    double x_hi = 5.0;
    double allowance = 1.0;
    int chunk = 1000;
    double x0 = 1.0;
};

struct OutputSettings {
    std::string dir;
    bool bundles = false;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string name;
    std::string kind;  ///< flow | zn | decreasing
    MarketSpec market;
    LatticeSettings lattice;
    GridSettings grid;
    std::string utility_kind;
    nlohmann::json utility;
    PolicySettings policy;
    FamilySettings family;
    MixtureSettings mixture;
    VerifySettings verify;
    OutputSettings output;

    nlohmann::json raw;  ///< parsed document after overrides
    std::string hash;    ///< FNV-1a of the canonical JSON dump of raw

    bool enabled(const std::string& check) const { return verify.checks.count(check) > 0; }
};

/// Checks enabled when a config lists none, per experiment kind.
std::set<std::string> default_checks(const std::string& kind);

ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies CLI overrides and recomputes the hash.
void apply_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> seed, std::optional<int> paths,
                     std::optional<int> dt_levels);

} // namespace fwd
