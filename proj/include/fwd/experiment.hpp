#pragma once

#include "fwd/config.hpp"
#include "fwd/error.hpp"
#include "fwd/verify.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fwd {

/// Module error annotated with the pipeline stage and a remediation hint.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& cause);
    const std::string& stage() const { return stage_; }
    const std::string& hint() const { return hint_; }

private:
    std::string stage_;
    std::string hint_;
};

/// Output root: $FWDLAB_OUT when set, else "fwdlab-out" in the working directory.
std::filesystem::path default_output_root();

PolicyField make_kappa(const ExperimentConfig& cfg);
DualPolicyField make_nu(const ExperimentConfig& cfg);

/// Inverse-flow drift residual at dt, dt/2, ..., dt/2^(levels-1) on independent lattices
/// (same seed), chunked over paths; slopes attached.
std::vector<ResidualReport> inverse_flow_convergence(const MarketSpec& market, const PolicyField& kappa,
                                                    const std::vector<double>& grid, int n_paths, int n_steps,
                                                    double dt, int levels, std::uint64_t seed, int chunk);

struct RunResult {
    VerificationReport report;
    std::filesystem::path dir;
    int exit_code = 1;
};

/// simulate -> audit -> invert -> build -> conjugate -> verify (-> numeraire round trip).
/// Writes report.json, CSV tables and, when enabled, the binary bundles under out_root/<output.dir>.
RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_root, std::ostream* log = nullptr);

struct SummaryRow {
    std::string experiment;
    std::string identity;
    std::string paper_ref;
    std::string residual;
    std::string threshold;
    std::string verdict;  ///< pass | fail | inconclusive | absent
    std::string n_paths;
    std::string dt;
    std::string config_hash;
};

struct ReportSummary {
    std::vector<SummaryRow> rows;
    int pass = 0, fail = 0, inconclusive = 0, absent = 0;
    int exit_code = 1;
    std::string csv;
    std::string table;
};

/// Collects <dir>/report.json and <dir>/*/report.json; subdirectories without a
/// readable report are listed as absent. Writes <dir>/summary.csv.
ReportSummary summarize_reports(const std::filesystem::path& dir, bool write_csv = true);

} // namespace fwd
