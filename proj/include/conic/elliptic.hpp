#pragma once

// Linear and semilinear elliptic solves on a SurfaceModel: potentials with
// prescribed end asymptotics, the heat-flow potential, a gauge making the
// initial curvature nonpositive, and the hyperbolic uniformizer.

#include "conic/flow.hpp"
#include "conic/surface.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace conic {

class EllipticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// f ~ beta_j log r + gamma_j on end j, log r = alpha_j * rho - log alpha_j.
struct EndAsymptotics {
  std::vector<double> beta;
  std::vector<double> gamma;
  double source_integral = 0.0;  // sum source * dA0
  double flux_total = 0.0;       // sum 2 pi alpha_j beta_j
};

struct PotentialSolution {
  Field f;
  EndAsymptotics ends;
  double residual = 0.0;  // max |Lap0 f - source| over interior nodes
  NodeId anchor = 0;
};

/// Solves Lap0 f = source with zero-flux-split Neumann closure on the ends and
/// f = 0 at an anchor node of the flat core.
PotentialSolution solve_potential(const SurfaceModel& model, const Field& source);

struct PotentialState {
  Field f;
  Field f0;
  Field h;  // Lap_g f + |grad f|_g^2
  double grad_norm_max = 0.0;
};

/// Potential tracking state at t = 0 from f0 and the initial conformal factor.
PotentialState make_potential_state(const SurfaceModel& model, const Field& f0,
                                    const Field& u);

/// One backward-Euler step of df/dt = (1/u) Lap0 f. `state` is the flow state
/// at the end of the step; at the rim f = f0 - log u.
PotentialState evolve_potential(const SurfaceModel& model, const PotentialState& pot,
                                const ConformalState& state, double dt);

/// h = Lap_g f + |grad f|_g^2 and sup |grad f|_g for g = u g0.
void potential_fields(const SurfaceModel& model, const Field& f, const Field& u, Field& h,
                      double& grad_norm_max);

struct GaugeResult {
  Field psi;
  double bump_mass = 0.0;       // m in Q = R0/2 + m * bump
  double q_integral = 0.0;      // sum Q dA0 (zero by construction)
  double min_margin = 0.0;      // min over nodes of Lap0 psi - R0/2
  double max_abs_psi = 0.0;
};

/// Bounded psi with Lap0 psi >= R0/2, so e^{2 psi} g0 has R <= 0.
GaugeResult gauge_nonpositive(const SurfaceModel& model);

struct OracleResult {
  Field U;    // e^{2 phi}
  Field phi;
  double residual = 0.0;  // max |R(U g0) + 1| over interior nodes
  int iterations = 0;
  bool retried = false;
  std::vector<double> history;  // residual after each Newton iteration
};

class OracleError : public EllipticError {
 public:
  OracleError(const std::string& what, std::vector<double> history)
      : EllipticError(what), history_(std::move(history)) {}
  [[nodiscard]] const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

/// Complete metric U g0 with R == -1 and cusp ends.
OracleResult uniformize_oracle(const SurfaceModel& model, double tol = 1e-8);

/// Smooth bump on the flat core, supported away from every puncture.
Field core_bump(const SurfaceModel& model);

}  // namespace conic
