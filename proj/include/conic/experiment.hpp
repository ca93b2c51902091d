#pragma once

// Experiment orchestration over a run directory:
//
//   config.toml        effective configuration
//   model.cric/.meta   background fields (v, R0, dA0, e^{-2v}), 4 x n
//   gauge.cric         gauge potential psi (gauged runs)
//   f0.cric            potential at t = 0 (tracked runs)
//   snap_NNNN.cric     conformal factor at snapshot N, with a .meta sidecar
//   pot_NNNN.cric      potential f at snapshot N (tracked runs)
//   series.csv         per-step scalar series
//   oracle.cric        uniformizer (when the convergence check runs)
//   diagnostics.txt    one line per check; diag_<name>.csv holds check series
//   MANIFEST           checksums of everything above
//
// Exit codes: 0 all checks passed, 1 a check failed, 2 an error stopped the run.

#include "conic/config.hpp"
#include "conic/diagnostics.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace conic {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitError = 2;

inline const std::vector<std::string> kSeriesColumns{
    "time", "min_u", "max_u", "min_R", "max_R", "total_curvature", "newton_iters"};

int run_experiment(const ExperimentConfig& cfg, std::ostream& log);

/// Continues from the last snapshot. Overrides are "section.key=value"; only
/// flow.t_end and the diagnostics and output.csv_every keys may change.
int resume_experiment(const std::filesystem::path& dir, const std::vector<std::string>& overrides,
                      std::ostream& log);

/// Re-runs the diagnostics on stored snapshots and prints the report.
int check_run(const std::filesystem::path& dir, std::ostream& log);

/// Solves for the uniformizer only and writes oracle.cric and oracle_report.txt.
int run_oracle(const ExperimentConfig& cfg, std::ostream& log);

struct StoredRun {
  ExperimentConfig config;
  RunData data;
};

/// Reads a run directory after verifying its MANIFEST.
StoredRun load_run(const std::filesystem::path& dir);

/// Evaluates the configured checks on stored data.
DiagnosticsReport evaluate_checks(const SurfaceModel& model, const ExperimentConfig& cfg,
                                  const RunData& data, const Field* oracle);

/// Lowers one mid-trajectory flat-core value by six orders of magnitude.
void inject_fault(const SurfaceModel& model, RunData& data);

/// Raw flow from u = 1 to t = 1, returned as the rescaled state at tau = 0.
ConformalState rescaled_start(const SurfaceModel& model, const FlowConfig& config,
                              const ConformalState& raw_initial);

}  // namespace conic
