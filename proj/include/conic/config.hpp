#pragma once

// Experiment configuration: a TOML subset with four sections.
//
//   [model]        fixture, punctures, alpha, positions, resolution,
//                  theta_resolution, rho_min, rho_max, perturbation_amp,
//                  perturbation_tau, r_in, r_out, r_cut
//   [flow]         mode, dt_initial, dt_max, safety_factor, newton_tol,
//                  newton_max_iter, t_end, boundary, gauge, track_potential
//   [diagnostics]  checks, harnack_pairs, harnack_seed, harnack_tau_min,
//                  kappa_samples, kappa_radius, kappa_seed, conservation_tol,
//                  error_threshold, curvature_threshold, monotone_from,
//                  area_low, area_high, inject_fault
//   [output]       directory, snapshot_schedule, csv_every
//
// Values are numbers, true/false, double-quoted strings or one-line lists of
// numbers or strings. '#' starts a comment.

#include "conic/flow.hpp"
#include "conic/surface.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace conic {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  [[nodiscard]] int line() const { return line_; }

 private:
  int line_;
};

struct ModelSection {
  std::string fixture = "none";  // none | exact-cone | flat-torus
  int punctures = 1;
  std::vector<double> alpha{0.5};   // one value, or one per puncture
  std::vector<double> positions;    // x1, y1, x2, y2, ...; empty for the default layout
  int resolution = 96;
  int theta_resolution = 0;         // 0: same as resolution
  double rho_min = 3.0;             // exact-cone fixture only
  double rho_max = 0.0;             // 0: 12 / alpha
  double perturbation_amp = 0.0;
  double perturbation_tau = 1.0;
  double r_in = 0.1;
  double r_out = 0.2;
  double r_cut = 0.05;
  bool operator==(const ModelSection&) const = default;
};

struct FlowSection {
  std::string mode = "raw";  // raw | rescaled
  double dt_initial = 0.01;
  double dt_max = 0.5;
  double safety_factor = 0.9;
  double newton_tol = 1e-9;
  int newton_max_iter = 12;
  double t_end = 50.0;       // tau_end in rescaled mode
  std::string boundary = "dirichlet-one";
  bool gauge = false;
  bool track_potential = false;
  bool operator==(const FlowSection&) const = default;
};

struct DiagnosticsSection {
  std::vector<std::string> checks{"auto"};
  int harnack_pairs = 64;
  std::uint64_t harnack_seed = 1;
  double harnack_tau_min = 1.0;
  int kappa_samples = 8;
  double kappa_radius = 0.25;
  std::uint64_t kappa_seed = 7;
  double conservation_tol = 0.01;
  double error_threshold = 0.02;
  double curvature_threshold = 0.05;
  double monotone_from = 4.0;
  double area_low = 0.8;
  double area_high = 1.0;
  bool inject_fault = false;
  bool operator==(const DiagnosticsSection&) const = default;
};

struct OutputSection {
  std::string directory = "run";
  std::vector<double> snapshot_schedule;  // empty: automatic
  int csv_every = 1;
  bool operator==(const OutputSection&) const = default;
};

struct ExperimentConfig {
  ModelSection model;
  FlowSection flow;
  DiagnosticsSection diagnostics;
  OutputSection output;
  bool operator==(const ExperimentConfig&) const = default;
};

inline const std::vector<std::string> kCheckNames{
    "bounds",  "aronson_benilan", "rescaled",         "harnack",
    "convergence", "curvature_decay", "sign_conservation"};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

/// Applies "section.key=value" overrides, validating as parse_config does.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// Throws ConfigError (line 0) on invariant violations.
void validate(const ExperimentConfig& cfg);

ModelDescription model_description(const ExperimentConfig& cfg);
SurfaceModel build_model(const ExperimentConfig& cfg);
FlowConfig flow_config(const ExperimentConfig& cfg);
FlowMode flow_mode(const ExperimentConfig& cfg);

/// Snapshot times: the configured list clipped to [0, t_end], or the automatic
/// schedule (raw: 0.25, 0.5, 1, 2, 3, ...; rescaled: every 0.5).
std::vector<double> snapshot_times(const ExperimentConfig& cfg);

/// Checks to run, with "auto" expanded for the flow mode.
std::vector<std::string> selected_checks(const ExperimentConfig& cfg);

}  // namespace conic
