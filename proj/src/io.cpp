#include "fwd/io.hpp"
#include "fwd/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace fwd {

namespace fs = std::filesystem;

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

void put_le(std::ostream& os, double v) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_le(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error(ErrorKind::Io, "truncated plane container");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw Error(ErrorKind::Io, "cannot create directory " + p.parent_path().string() + ": " + ec.message());
    }
}

fs::path with_suffix(const fs::path& base, const char* ext) { return fs::path(base.string() + ext); }

} // namespace

void write_plane(const fs::path& base, Role role, const Plane& plane, const std::vector<double>& grid,
                 const LatticeRef& lattice, const nlohmann::json& extra) {
    ensure_parent(base);
    const fs::path bin = with_suffix(base, ".bin");
    std::ofstream os(bin, std::ios::binary);
    if (!os) throw Error(ErrorKind::Io, "cannot write " + bin.string());
    put_le(os, static_cast<double>(static_cast<int>(role)));
    put_le(os, plane.n_paths);
    put_le(os, plane.n_times);
    put_le(os, plane.n_grid);
    put_le(os, lattice.dt);
    put_le(os, static_cast<double>(lattice.seed));
    for (double v : plane.v) put_le(os, v);
    if (!os) throw Error(ErrorKind::Io, "write failed for " + bin.string());

    nlohmann::json side = extra;
    side["role"] = to_string(role);
    side["grid"] = grid;
    side["lattice"] = {{"seed", lattice.seed},   {"n_paths", lattice.n_paths}, {"n_steps", lattice.n_steps},
                       {"dim", lattice.dim},     {"dt", lattice.dt}};
    write_json(with_suffix(base, ".json"), side);
}

StoredPlane read_plane(const fs::path& base) {
    const fs::path bin = with_suffix(base, ".bin");
    std::ifstream is(bin, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + bin.string());
    StoredPlane s;
    const double role = get_le(is), P = get_le(is), T = get_le(is), G = get_le(is);
    const double dt = get_le(is);
    get_le(is);  // seed, approximate; the sidecar holds the exact value
    if (!(role >= 0 && role <= 5) || !(P >= 0 && T >= 0 && G >= 0) || P * T * G > 1e10)
        throw Error(ErrorKind::Io, "corrupt plane header in " + bin.string());
    s.role = static_cast<Role>(static_cast<int>(role));
    s.plane = Plane(static_cast<int>(P), static_cast<int>(T), static_cast<int>(G));
    for (double& v : s.plane.v) v = get_le(is);
    s.sidecar = read_json(with_suffix(base, ".json"));
    try {
        s.grid = s.sidecar.at("grid").get<std::vector<double>>();
        const auto& l = s.sidecar.at("lattice");
        s.lattice = {l.at("seed").get<std::uint64_t>(), l.at("n_paths").get<int>(), l.at("n_steps").get<int>(),
                     l.at("dim").get<int>(), l.at("dt").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Io, "corrupt sidecar for " + bin.string() + ": " + e.what());
    }
    if (s.lattice.dt != dt || static_cast<int>(s.grid.size()) != s.plane.n_grid)
        throw Error(ErrorKind::Io, "sidecar does not match container " + bin.string());
    return s;
}

void write_bundle(const fs::path& base, const FlowBundle& bundle, const nlohmann::json& extra) {
    nlohmann::json side = extra;
    side["policy_ref"] = bundle.policy_ref;
    side["path_begin"] = bundle.path_begin;
    write_plane(base, bundle.role, bundle.values, bundle.grid, bundle.lattice, side);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

void write_csv_row(std::ostream& os, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) os << ',';
        os << csv_field(fields[i]);
    }
    os << "\r\n";
}

void write_plane_summary_csv(const fs::path& path, const Plane& plane, const std::vector<double>& grid, double dt,
                             const std::string& config_hash) {
    std::ostringstream os;
    write_csv_row(os, {"t", "x", "mean", "stderr", "min", "max", "config_hash"});
    const int P = plane.n_paths;
    for (int k = 0; k < plane.n_times; ++k)
        for (int j = 0; j < plane.n_grid; ++j) {
            double s = 0.0, s2 = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (int p = 0; p < P; ++p) {
                const double v = plane(p, k, j);
                s += v;
                s2 += v * v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            const double m = s / P;
            const double se = P > 1 ? std::sqrt(std::max(0.0, (s2 - P * m * m) / (P - 1)) / P) : 0.0;
            write_csv_row(os, {format_double(k * dt), format_double(grid[j]), format_double(m), format_double(se),
                               format_double(lo), format_double(hi), config_hash});
        }
    write_text(path, os.str());
}

void write_text(const fs::path& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
    os << text;
    if (!os) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Io, "invalid JSON in " + path.string() + ": " + e.what());
    }
}

} // namespace fwd
