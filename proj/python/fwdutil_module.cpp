#include "fwd/experiment.hpp"
#include "fwd/io.hpp"
#include "fwd/market.hpp"
#include "fwd/paths.hpp"
#include "fwd/utility.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

namespace py = pybind11;
using namespace fwd;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Vec to_vec(const std::vector<double>& v) {
    if (v.size() > kMaxDim) throw Error(ErrorKind::InvalidInput, "vector longer than 8");
    Vec out(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<int>(i)) = v[i];
    return out;
}

std::vector<double> from_vec(const Vec& v) { return {v.data(), v.data() + v.size()}; }

MarketSpec market_of(int n, int d, double r, const std::vector<double>& b, const std::vector<std::vector<double>>& s) {
    if (static_cast<int>(s.size()) != n) throw Error(ErrorKind::InvalidConfig, "sigma needs n rows");
    Mat m(n, d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(s[i].size()) != d) throw Error(ErrorKind::InvalidConfig, "sigma rows need d values");
        for (int c = 0; c < d; ++c) m(i, c) = s[i][c];
    }
    return MarketSpec::constant(n, d, r, to_vec(b), m);
}

py::array_t<double> plane_array(const Plane& p) {
    py::array_t<double> a({p.n_paths, p.n_times, p.n_grid});
    std::copy(p.v.begin(), p.v.end(), a.mutable_data());
    return a;
}

} // namespace

PYBIND11_MODULE(_fwdutil, m) {
    m.doc() = "Forward utility flows: markets, flow-built utilities and verification runs";

    py::register_exception<Error>(m, "FwdError", PyExc_RuntimeError);

    py::class_<MarketSpec>(m, "Market")
        .def(py::init(&market_of), py::arg("n"), py::arg("d"), py::arg("r"), py::arg("b"), py::arg("sigma"))
        .def_property_readonly("n", &MarketSpec::n)
        .def_property_readonly("d", &MarketSpec::d)
        .def_property_readonly("eta", [](const MarketSpec& s) { return from_vec(s.eta(0)); })
        .def("project", [](const MarketSpec& s, const std::vector<double>& v) {
            const Projection p = project_sigma(to_vec(v), 0.0, s);
            return py::make_tuple(from_vec(p.v_sigma), from_vec(p.v_perp));
        })
        .def("hash", &market_hash);

    m.def("log_grid", &log_grid, py::arg("lo"), py::arg("hi"), py::arg("n"));

    py::class_<InitialUtility>(m, "InitialUtility")
        .def_static("power", &InitialUtility::power, py::arg("a"), py::arg("allow_negative") = false)
        .def_static("exponential", &InitialUtility::exponential, py::arg("c"))
        .def_static("log", &InitialUtility::log)
        .def_static("mixture", [](std::vector<double> alphas, std::vector<double> weights, bool log_limit) {
            return InitialUtility::mixture(MeasureMixture::normalized(std::move(alphas), std::move(weights), log_limit));
        }, py::arg("alphas"), py::arg("weights"), py::arg("log_limit") = false)
        .def("u", &InitialUtility::u)
        .def("ux", &InitialUtility::ux)
        .def("uxx", &InitialUtility::uxx)
        .def("conj", &InitialUtility::conj)
        .def("conj_y", &InitialUtility::conj_y)
        .def("risk_tolerance", &InitialUtility::risk_tolerance)
        .def("__repr__", &InitialUtility::describe);

    m.def("mixture_primal", [](std::vector<double> alphas, std::vector<double> weights, double x, double A, double R) {
        const PrimalPoint p = mixture_primal(MeasureMixture::normalized(std::move(alphas), std::move(weights)), x, A, R);
        return py::make_tuple(p.U, p.Ux, p.Uxx);
    }, py::arg("alphas"), py::arg("weights"), py::arg("x"), py::arg("A"), py::arg("R"),
          "(U, U_x, U_xx) of the normalized mixture at accumulated ||eta||^2 A and rate R");

    m.def("merton_utility_field", [](const MarketSpec& market, double a, int n_paths, int n_steps, double dt,
                                     std::uint64_t seed, const std::vector<double>& grid) {
        const BrownianLattice l = generate_lattice(n_paths, n_steps, dt, market.n(), seed);
        const MarketSpec mk = market.resampled(n_steps, dt);
        const InitialUtility u = InitialUtility::power(a);
        const PolicyField kappa = merton_policy(mk, a);
        const DualPolicyField nu = constant_dual_policy(Vec::Zero(mk.n()));
        const FlowBundle X = simulate_wealth_flow(l, mk, kappa, grid);
        const FlowBundle Y = simulate_spd_flow(l, mk, nu, dual_grid_for(u, grid));
        const UtilityField U = build_utility_field(X, invert_flow(X, grid), Y, u, {&mk, &kappa, &nu});
        return py::make_tuple(plane_array(U.U), plane_array(U.Ux));
    }, py::arg("market"), py::arg("a"), py::arg("n_paths"), py::arg("n_steps"), py::arg("dt"), py::arg("seed"),
          py::arg("grid"), "Flow-built U and U_x under the Merton policy, shaped (path, time, grid)");

    m.def("load_config", [](const std::filesystem::path& p) { return to_py(load_config(p).raw); });

    m.def("run", [](const std::filesystem::path& config, const std::filesystem::path& out,
                    std::optional<std::uint64_t> seed, std::optional<int> paths) {
        ExperimentConfig cfg = load_config(config);
        apply_overrides(cfg, seed, paths, std::nullopt);
        RunResult r;
        {
            py::gil_scoped_release release;
            r = run_experiment(cfg, out);
        }
        return py::make_tuple(r.exit_code, to_py(r.report.to_json()), r.dir);
    }, py::arg("config"), py::arg("out"), py::arg("seed") = py::none(), py::arg("paths") = py::none(),
          "Runs one experiment; returns (exit_code, report dict, output dir)");

    m.def("summarize", [](const std::filesystem::path& dir) {
        const ReportSummary s = summarize_reports(dir, false);
        py::dict d;
        d["pass"] = s.pass;
        d["fail"] = s.fail;
        d["inconclusive"] = s.inconclusive;
        d["absent"] = s.absent;
        d["exit_code"] = s.exit_code;
        d["table"] = s.table;
        return d;
    });
}
