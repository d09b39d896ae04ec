#include "fwd/config.hpp"
#include "fwd/error.hpp"
#include "fwd/io.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace fwd {

namespace {

class TomlParser {
public:
    TomlParser(const std::string& text, std::string source) : src_(std::move(source)) {
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) lines_.push_back(line);
    }

    nlohmann::json parse() {
        nlohmann::json root = nlohmann::json::object();
        nlohmann::json* table = &root;
        for (line_ = 0; line_ < lines_.size(); ++line_) {
            std::string s = strip(lines_[line_]);
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']' || s.size() < 3) fail("malformed table header");
                table = &open_table(root, s.substr(1, s.size() - 2));
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos) fail("expected key = value");
            const std::string key = trim(s.substr(0, eq));
            check_key(key);
            if (table->contains(key)) fail("duplicate key '" + key + "'");
            std::string value = trim(s.substr(eq + 1));
            // Multi-line arrays: keep reading until brackets balance.
            while (depth(value) > 0) {
                if (++line_ >= lines_.size()) fail("unterminated array");
                value += " " + strip(lines_[line_]);
            }
            pos_ = 0;
            text_ = value;
            (*table)[key] = parse_value();
            skip_ws();
            if (pos_ != text_.size()) fail("trailing characters after value");
        }
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw Error(ErrorKind::InvalidConfig, src_ + ":" + std::to_string(line_ + 1) + ": " + msg);
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    // Tracks the open quote character: basic ("...") and literal ('...') strings.
    static char toggle(char quote, char c) {
        if (quote) return c == quote ? 0 : quote;
        return c == '"' || c == '\'' ? c : 0;
    }

    // Drops a trailing comment that is not inside a string.
    static std::string strip(const std::string& s) {
        char quote = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '\\' && quote == '"') {
                ++i;
                continue;
            }
            quote = toggle(quote, s[i]);
            if (s[i] == '#' && !quote) return trim(s.substr(0, i));
        }
        return trim(s);
    }

    static int depth(const std::string& s) {
        int d = 0;
        char quote = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '\\' && quote == '"') {
                ++i;
                continue;
            }
            quote = toggle(quote, s[i]);
            if (!quote && s[i] == '[') ++d;
            if (!quote && s[i] == ']') --d;
        }
        return d;
    }

    void check_key(const std::string& key) const {
        if (key.empty()) fail("empty key");
        for (char c : key)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) fail("invalid key '" + key + "'");
    }

    nlohmann::json& open_table(nlohmann::json& root, const std::string& name) {
        nlohmann::json* t = &root;
        std::string part;
        std::istringstream is(name);
        while (std::getline(is, part, '.')) {
            part = trim(part);
            check_key(part);
            nlohmann::json& next = (*t)[part];
            if (next.is_null()) next = nlohmann::json::object();
            if (!next.is_object()) fail("'" + part + "' is not a table");
            t = &next;
        }
        return *t;
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    nlohmann::json parse_value() {
        skip_ws();
        if (pos_ >= text_.size()) fail("missing value");
        const char c = text_[pos_];
        if (c == '"') return parse_string();
        if (c == '\'') return parse_literal();
        if (c == '[') return parse_array();
        std::size_t end = pos_;
        while (end < text_.size() && text_[end] != ',' && text_[end] != ']' &&
               !std::isspace(static_cast<unsigned char>(text_[end])))
            ++end;
        const std::string tok = text_.substr(pos_, end - pos_);
        pos_ = end;
        if (tok == "true") return true;
        if (tok == "false") return false;
        return parse_number(tok);
    }

    nlohmann::json parse_number(const std::string& tok) {
        std::string t;
        for (char c : tok)
            if (c != '_') t += c;
        if (t.empty()) fail("missing value");
        const bool is_float = t.find_first_of(".eE") != std::string::npos || t == "inf" || t == "nan";
        try {
            std::size_t used = 0;
            if (is_float) {
                const double v = std::stod(t, &used);
                if (used == t.size()) return v;
            } else {
                const long long v = std::stoll(t, &used);
                if (used == t.size()) return v;
            }
        } catch (const std::exception&) {
        }
        fail("invalid value '" + tok + "'");
    }

    nlohmann::json parse_string() {
        ++pos_;
        std::string out;
        while (pos_ < text_.size() && text_[pos_] != '"') {
            char c = text_[pos_++];
            if (c == '\\') {
                if (pos_ >= text_.size()) break;
                const char e = text_[pos_++];
                switch (e) {
                case 'n': c = '\n'; break;
                case 't': c = '\t'; break;
                case '"': c = '"'; break;
                case '\\': c = '\\'; break;
                default: fail(std::string("unsupported escape \\") + e);
                }
            }
            out += c;
        }
        if (pos_ >= text_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    nlohmann::json parse_literal() {
        const std::size_t end = text_.find('\'', ++pos_);
        if (end == std::string::npos) fail("unterminated string");
        std::string out = text_.substr(pos_, end - pos_);
        pos_ = end + 1;
        return out;
    }

    nlohmann::json parse_array() {
        ++pos_;
        nlohmann::json arr = nlohmann::json::array();
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ']') {
            ++pos_;
            return arr;
        }
        while (true) {
            arr.push_back(parse_value());
            skip_ws();
            if (pos_ >= text_.size()) fail("unterminated array");
            if (text_[pos_] == ',') {
                ++pos_;
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ']') {
                    ++pos_;
                    return arr;
                }
                continue;
            }
            if (text_[pos_] == ']') {
                ++pos_;
                return arr;
            }
            fail("expected ',' or ']' in array");
        }
    }

    std::string src_;
    std::vector<std::string> lines_;
    std::size_t line_ = 0;
    std::string text_;
    std::size_t pos_ = 0;
};

const nlohmann::json& section(const nlohmann::json& doc, const char* name) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!doc.contains(name)) return empty;
    const auto& s = doc.at(name);
    if (!s.is_object()) throw Error(ErrorKind::InvalidConfig, std::string("[") + name + "] must be a table");
    return s;
}

template <class T>
T get_or(const nlohmann::json& t, const char* key, T def) {
    return t.contains(key) ? t.at(key).get<T>() : def;
}

void check_known(const nlohmann::json& t, const char* where, std::initializer_list<const char*> keys) {
    for (auto it = t.begin(); it != t.end(); ++it) {
        bool ok = false;
        for (const char* k : keys) ok = ok || it.key() == k;
        if (!ok) throw Error(ErrorKind::InvalidConfig, std::string("unknown key '") + it.key() + "' in " + where);
    }
}

MarketSpec market_from_config(const nlohmann::json& m, double dt) {
    check_known(m, "[market]", {"n", "d", "r", "b", "sigma"});
    nlohmann::json j = m;
    if (!j.contains("n") || !j.contains("d") || !j.contains("r") || !j.contains("b") || !j.contains("sigma"))
        throw Error(ErrorKind::InvalidConfig, "[market] needs n, d, r, b and sigma");
    // Constant markets may give a scalar r, a vector b and a single sigma matrix.
    if (j["r"].is_number()) j["r"] = nlohmann::json::array({j["r"]});
    if (!j["b"].empty() && j["b"][0].is_number()) j["b"] = nlohmann::json::array({j["b"]});
    if (!j["sigma"].empty() && !j["sigma"][0].empty() && j["sigma"][0][0].is_number())
        j["sigma"] = nlohmann::json::array({j["sigma"]});
    return market_from_json(j, dt);
}

} // namespace

nlohmann::json parse_toml(const std::string& text, const std::string& source) {
    return TomlParser(text, source).parse();
}

nlohmann::json load_toml(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::InvalidConfig, "cannot open config " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return parse_toml(os.str(), path.filename().string());
}

std::set<std::string> default_checks(const std::string& kind) {
    if (kind == "flow")
        return {"monotone", "inverse_flow", "martingale", "supermartingale", "hjb",     "conjugacy",
                "dual",     "marginal",     "risk_tolerance", "numeraire"};
    if (kind == "zn") return {"condition", "hjb"};
    if (kind == "decreasing") return {"dual_decreasing", "time_monotone"};
    throw Error(ErrorKind::InvalidConfig, "unknown experiment kind '" + kind + "'");
}

ExperimentConfig config_from_json(const nlohmann::json& doc) {
    ExperimentConfig c;
    try {
        check_known(doc, "config", {"schema_version", "name", "kind", "market", "lattice", "grid", "utility", "policy",
                                    "family", "mixture", "verify", "output"});
        c.schema_version = get_or<int>(doc, "schema_version", -1);
        if (c.schema_version != kSchemaVersion)
            throw Error(ErrorKind::InvalidConfig,
                        "schema_version must be " + std::to_string(kSchemaVersion) + " (got " +
                            std::to_string(c.schema_version) + ")");
        c.name = get_or<std::string>(doc, "name", "");
        if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos)
            throw Error(ErrorKind::InvalidConfig, "name must be a nonempty plain identifier");
        c.kind = get_or<std::string>(doc, "kind", "flow");

        const auto& lat = section(doc, "lattice");
        check_known(lat, "[lattice]", {"n_paths", "n_steps", "dt", "seed"});
        c.lattice.n_paths = get_or(lat, "n_paths", c.lattice.n_paths);
        c.lattice.n_steps = get_or(lat, "n_steps", c.lattice.n_steps);
        c.lattice.dt = get_or(lat, "dt", c.lattice.dt);
        c.lattice.seed = get_or<std::uint64_t>(lat, "seed", c.lattice.seed);
        if (c.lattice.n_paths < 1 || c.lattice.n_steps < 1 || !(c.lattice.dt > 0.0))
            throw Error(ErrorKind::InvalidConfig, "[lattice] needs n_paths >= 1, n_steps >= 1 and dt > 0");

        c.market = market_from_config(section(doc, "market"), c.lattice.dt);

        const auto& g = section(doc, "grid");
        check_known(g, "[grid]", {"x_min", "x_max", "n"});
        c.grid.x_min = get_or(g, "x_min", c.grid.x_min);
        c.grid.x_max = get_or(g, "x_max", c.grid.x_max);
        c.grid.n = get_or(g, "n", c.grid.n);
        if (!(c.grid.x_min > 0.0) || !(c.grid.x_max > c.grid.x_min) || c.grid.n < 3)
            throw Error(ErrorKind::InvalidConfig, "[grid] must be strictly increasing with x_min > 0 and n >= 3");

        const auto& u = section(doc, "utility");
        c.utility_kind = get_or<std::string>(u, "kind", "power");
        c.utility = u;

        const auto& p = section(doc, "policy");
        check_known(p, "[policy]", {"kappa", "kappa_value", "nu", "nu_value", "table_t", "table_kappa"});
        c.policy.kappa = get_or<std::string>(p, "kappa", c.policy.kappa);
        c.policy.kappa_value = get_or(p, "kappa_value", c.policy.kappa_value);
        c.policy.nu = get_or<std::string>(p, "nu", c.policy.nu);
        c.policy.nu_value = get_or(p, "nu_value", c.policy.nu_value);
        c.policy.table_t = get_or(p, "table_t", c.policy.table_t);
        c.policy.table_kappa = get_or(p, "table_kappa", c.policy.table_kappa);
        for (const auto* name : {&c.policy.kappa, &c.policy.nu})
            if (*name != "constant" && *name != "merton" && *name != "from-closed-form" && *name != "user-table")
                throw Error(ErrorKind::InvalidConfig, "unknown policy generator '" + *name + "'");
        if (c.policy.nu == "merton") throw Error(ErrorKind::InvalidConfig, "nu cannot use the merton generator");
        if (c.policy.kappa == "user-table" && (c.policy.table_t.empty() || c.policy.table_t.size() != c.policy.table_kappa.size()))
            throw Error(ErrorKind::InvalidConfig, "user-table needs matching table_t and table_kappa");
        for (std::size_t i = 1; i < c.policy.table_t.size(); ++i)
            if (!(c.policy.table_t[i] > c.policy.table_t[i - 1]))
                throw Error(ErrorKind::InvalidConfig, "table_t must be strictly increasing");

        const auto& f = section(doc, "family");
        check_known(f, "[family]", {"v", "a", "c", "sigma_N", "sigma_Z", "mu_N", "mu_Z", "mu_Z_shift"});
        c.family.v = get_or<std::string>(f, "v", c.family.v);
        c.family.param = c.family.v == "power" ? get_or(f, "a", 0.5) : get_or(f, "c", 1.0);
        c.family.sigma_N = get_or(f, "sigma_N", std::vector<double>(c.market.n(), 0.0));
        c.family.sigma_Z = get_or(f, "sigma_Z", std::vector<double>(c.market.n(), 0.0));
        if (f.contains("mu_N")) c.family.mu_N = f.at("mu_N").get<double>();
        if (f.contains("mu_Z")) c.family.mu_Z = f.at("mu_Z").get<double>();
        c.family.mu_Z_shift = get_or(f, "mu_Z_shift", 0.0);

        const auto& m = section(doc, "mixture");
        check_known(m, "[mixture]", {"alphas", "weights", "log_limit"});
        c.mixture.alphas = get_or(m, "alphas", c.mixture.alphas);
        c.mixture.weights = get_or(m, "weights", c.mixture.weights);
        c.mixture.log_limit = get_or(m, "log_limit", false);
        if (c.mixture.alphas.empty() && c.utility_kind == "mixture") {
            c.mixture.alphas = get_or(u, "alphas", c.mixture.alphas);
            c.mixture.weights = get_or(u, "weights", c.mixture.weights);
            c.mixture.log_limit = get_or(u, "log_limit", false);
        }

        const auto& v = section(doc, "verify");
        check_known(v, "[verify]", {"confidence", "checks", "dt_levels", "x_lo", "x_hi", "allowance", "chunk", "x0"});
        c.verify.confidence = get_or(v, "confidence", c.verify.confidence);
        if (v.contains("checks")) {
            for (const auto& s : v.at("checks")) c.verify.checks.insert(s.get<std::string>());
            const auto known = default_checks(c.kind);
            for (const auto& s : c.verify.checks)
                if (!known.count(s) && s != "constant_in_time")
                    throw Error(ErrorKind::InvalidConfig, "check '" + s + "' is not available for kind " + c.kind);
        } else {
            c.verify.checks = default_checks(c.kind);
        }
        c.verify.dt_levels = get_or(v, "dt_levels", c.verify.dt_levels);
        c.verify.x_lo = get_or(v, "x_lo", c.verify.x_lo);
        c.verify.x_hi = get_or(v, "x_hi", c.verify.x_hi);
        c.verify.allowance = get_or(v, "allowance", c.verify.allowance);
        c.verify.chunk = get_or(v, "chunk", c.verify.chunk);
        c.verify.x0 = get_or(v, "x0", c.verify.x0);
        if (!(c.verify.confidence > 0.0 && c.verify.confidence < 1.0) || c.verify.dt_levels < 1 || c.verify.chunk < 1)
            throw Error(ErrorKind::InvalidConfig, "[verify] needs confidence in (0,1), dt_levels >= 1, chunk >= 1");

        const auto& o = section(doc, "output");
        check_known(o, "[output]", {"dir", "bundles"});
        c.output.dir = get_or<std::string>(o, "dir", c.name);
        c.output.bundles = get_or(o, "bundles", false);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("config value has the wrong type: ") + e.what());
    }
    c.raw = doc;
    c.hash = fnv1a_hex(doc.dump());
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return config_from_json(load_toml(path)); }

void apply_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> seed, std::optional<int> paths,
                     std::optional<int> dt_levels) {
    nlohmann::json doc = cfg.raw;
    if (seed) doc["lattice"]["seed"] = *seed;
    if (paths) doc["lattice"]["n_paths"] = *paths;
    if (dt_levels) doc["verify"]["dt_levels"] = *dt_levels;
    cfg = config_from_json(doc);
}

} // namespace fwd
