#pragma once

// Quantified checks over stored trajectories. Every check reads snapshots
// only, so re-running it on saved data reproduces the report exactly.

#include "conic/flow.hpp"
#include "conic/surface.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace conic {

enum class CheckStatus { pass, fail, info };
std::string to_string(CheckStatus s);

struct CheckLocation {
  NodeId node = 0;
  double time = 0.0;
};

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::info;
  double worst_value = 0.0;
  std::optional<CheckLocation> location;
  double tolerance = 0.0;
  std::string statement;  // the inequality or limit being tested
};

struct Series {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct DiagnosticsReport {
  std::vector<CheckResult> checks;
  std::vector<Series> series;

  [[nodiscard]] bool passed() const;
  [[nodiscard]] const CheckResult* find(const std::string& name) const;
  [[nodiscard]] const Series* find_series(const std::string& name) const;
  void merge(DiagnosticsReport other);
  /// One line per check: name,status,worst_value,node,time,tolerance.
  [[nodiscard]] std::string to_text() const;
};

/// Everything the checks need from one run.
struct RunData {
  FlowMode mode = FlowMode::raw;
  std::vector<ConformalState> snapshots;
  std::vector<Field> potentials;  // f at each snapshot, empty when not tracked
  Field f0;
  bool gauged = false;
  double newton_tol = 1e-9;
};

class DiagnosticsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat part of the core chart: at least r_out from every puncture.
bool in_flat_core(const SurfaceModel& model, NodeId n);

/// 10 newton_tol + 2 dt max|q''| with q'' from second differences of
/// consecutive snapshots (dt the largest snapshot spacing).
double solver_slack(const std::vector<double>& times, const std::vector<Field>& q,
                    double newton_tol, const std::vector<NodeId>& nodes);

struct BoundsOptions {
  double min_t_end = 10.0;
};
DiagnosticsReport check_bounds(const SurfaceModel& model, const RunData& run,
                               const BoundsOptions& opt = {});

DiagnosticsReport check_aronson_benilan(const SurfaceModel& model, const RunData& run);

/// Monotonicity of w, the floor R >= -1, a point where inf_tau w stays
/// positive, and a uniform bound for R on the core.
DiagnosticsReport check_rescaled(const SurfaceModel& model, const RunData& run);

struct HarnackPair {
  Point2 x1;
  Point2 x2;
  std::size_t s1 = 0;  // snapshot indices, s2 later than s1
  std::size_t s2 = 0;
};

/// Seeded pairs of flat-core points and snapshot indices with time >= tau_min.
std::vector<HarnackPair> sample_harnack_pairs(const SurfaceModel& model, const RunData& run,
                                              int count, std::uint64_t seed,
                                              double tau_min = 1.0);

/// Required constant C for each pair:
///   R2 + 1 = exp(-D/4 - C (tau2 - tau1)) (R1 + 1),  D = d(x1, x2, tau1)^2 / (tau2 - tau1).
double harnack_constant(double r1, double r2, double dist, double tau1, double tau2);

DiagnosticsReport check_harnack(const SurfaceModel& model, const RunData& run,
                                const std::vector<HarnackPair>& pairs);

struct ConvergenceOptions {
  double error_threshold = 0.02;
  double curvature_threshold = 0.05;
  double monotone_from = 4.0;  // tau where the monotone window starts
  double area_low = 0.8;       // fraction of 4 pi k
  double area_high = 1.0;
  double ball_radius = 0.25;
  int ball_samples = 8;
  std::uint64_t seed = 7;
};

/// Distance from the uniformizer on the core region (rho <= rho_max / 2) and,
/// as info, on the flat core.
DiagnosticsReport check_convergence(const SurfaceModel& model, const RunData& run,
                                    const Field& oracle, const ConvergenceOptions& opt = {});

struct CurvatureDecayOptions {
  double order_tau = 1.0;
  double growth_factor = 3.0;  // allowed growth of the envelope along rho
};
DiagnosticsReport check_curvature_decay(const SurfaceModel& model, const RunData& run,
                                        const CurvatureDecayOptions& opt = {});

struct SignConservationOptions {
  double conservation_tol = 0.01;  // relative
};
/// Sign of R (gauged runs), conservation of total curvature, and, when
/// potentials are stored, monotonicity of max h and R <= max h(0).
DiagnosticsReport check_sign_and_conservation(const SurfaceModel& model, const RunData& run,
                                              const SignConservationOptions& opt = {});

/// sup |log u - (f0 - f)| per snapshot; requires stored potentials.
std::vector<double> potential_identity_deviation(const SurfaceModel& model, const RunData& run);

/// Area of w g0 over the core region (rho <= rho_max / 2).
double core_area(const SurfaceModel& model, const Field& u);

/// Area of balls of radius r around flat-core samples divided by r^2, minimum.
double kappa_ratio(const SurfaceModel& model, const Field& u, double radius, int samples,
                   std::uint64_t seed);

}  // namespace conic
