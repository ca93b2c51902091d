#pragma once

// Backward-Euler integration of the conformal Ricci flow, in raw time
//   du/dt = Lap0 log u - R0
// and in log-rescaled time (tau = log t, w = u / t)
//   dw/dtau = Lap0 log w - R0 - w.

#include "conic/surface.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace conic {

enum class FlowMode { raw, rescaled };
enum class BoundaryMode { dirichlet_one, asymptotic_decay };

std::string to_string(FlowMode m);
std::string to_string(BoundaryMode m);
FlowMode parse_flow_mode(const std::string& s);
BoundaryMode parse_boundary_mode(const std::string& s);

struct ConformalState {
  FlowMode mode = FlowMode::raw;
  double time = 0.0;  // t, or tau in rescaled mode
  Field u;
  long step_count = 0;
  double last_dt = 0.0;  // step size the integrator proposes next (0: dt_initial)
};

struct FlowConfig {
  double dt_initial = 0.01;
  double dt_max = 0.5;
  double safety_factor = 0.9;   // steps are split evenly when a schedule time is just out of reach
  double newton_tol = 1e-9;     // max-norm of the backward-Euler residual
  int newton_max_iter = 12;
  double t_end = 50.0;          // tau_end in rescaled mode
  std::vector<double> snapshot_schedule;
  BoundaryMode boundary_mode = BoundaryMode::dirichlet_one;

  void validate() const;
};

class NewtonFailure : public std::runtime_error {
 public:
  NewtonFailure(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  [[nodiscard]] double residual() const { return residual_; }

 private:
  double residual_;
};

class PositivityLoss : public std::runtime_error {
 public:
  PositivityLoss(const std::string& what, NodeId node)
      : std::runtime_error(what), node_(node) {}
  [[nodiscard]] NodeId node() const { return node_; }

 private:
  NodeId node_;
};

struct StepReport {
  int newton_iters = 0;
  double residual = 0.0;
};

ConformalState step_raw(const SurfaceModel& model, const ConformalState& state, double dt,
                        const FlowConfig& config, StepReport* report = nullptr);
ConformalState step_rescaled(const SurfaceModel& model, const ConformalState& state,
                             double dtau, const FlowConfig& config,
                             StepReport* report = nullptr);

/// Adapts the proposal state.last_dt after a step. An iteration count at
/// or above newton_max_iter means the step had to be retried.
double adaptive_dt(const ConformalState& state, int last_newton_iters, const FlowConfig& config);

struct SeriesRecord {
  double time = 0.0;
  double min_u = 0.0;
  double max_u = 0.0;
  double min_R = 0.0;
  double max_R = 0.0;
  double total_curvature = 0.0;
  int newton_iters = 0;
};

SeriesRecord series_record(const SurfaceModel& model, const ConformalState& state,
                           int newton_iters);

struct Trajectory {
  FlowMode mode = FlowMode::raw;
  std::vector<ConformalState> snapshots;
  std::vector<SeriesRecord> series;
};

/// Called after every accepted step with the states before and after it.
using StepObserver = std::function<void(const ConformalState& before,
                                        const ConformalState& after, int newton_iters,
                                        bool at_snapshot)>;

class FlowError : public std::runtime_error {
 public:
  FlowError(const std::string& what, Trajectory partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  [[nodiscard]] const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

/// Integrates from `initial` to config.t_end. The initial state is always the
/// first snapshot; steps are shortened to land exactly on schedule times and on
/// t_end.
Trajectory run(const SurfaceModel& model, const FlowConfig& config,
               const ConformalState& initial, const StepObserver& observer = {});

/// u == 1 (raw, t = 0).
ConformalState initial_state(const SurfaceModel& model, FlowMode mode = FlowMode::raw);

}  // namespace conic
