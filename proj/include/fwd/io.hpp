#pragma once

#include "fwd/paths.hpp"
#include "fwd/types.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fwd {

/// 64-bit FNV-1a digest as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& data);

/// Shortest round-trip decimal form of a double (dot decimal, locale independent).
std::string format_double(double v);

/// Binary plane container: a little-endian header of six doubles
/// {role code, n_paths, n_times, n_grid, dt, seed} followed by the values in
/// (path, time, grid) order. The JSON sidecar next to it carries the grid and
/// provenance (lattice, config hash, identifiers); the exact 64-bit seed lives there.
struct StoredPlane {
    Role role = Role::Scalar;
    Plane plane;
    std::vector<double> grid;
    LatticeRef lattice;
    nlohmann::json sidecar;
};

void write_plane(const std::filesystem::path& base, Role role, const Plane& plane, const std::vector<double>& grid,
                 const LatticeRef& lattice, const nlohmann::json& extra);
StoredPlane read_plane(const std::filesystem::path& base);

/// Writes a flow bundle with its policy reference in the sidecar.
void write_bundle(const std::filesystem::path& base, const FlowBundle& bundle, const nlohmann::json& extra);

/// RFC-4180 quoting of one field.
std::string csv_field(const std::string& s);
void write_csv_row(std::ostream& os, const std::vector<std::string>& fields);

/// Per-(time, grid) summary over paths: t, x, mean, stderr, min, max, config_hash.
void write_plane_summary_csv(const std::filesystem::path& path, const Plane& plane, const std::vector<double>& grid,
                             double dt, const std::string& config_hash);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

} // namespace fwd
