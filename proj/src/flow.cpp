#include "conic/flow.hpp"

#include "conic/linear_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace conic {

std::string to_string(FlowMode m) { return m == FlowMode::raw ? "raw" : "rescaled"; }

std::string to_string(BoundaryMode m) {
  return m == BoundaryMode::dirichlet_one ? "dirichlet-one" : "asymptotic-decay";
}

FlowMode parse_flow_mode(const std::string& s) {
  if (s == "raw") return FlowMode::raw;
  if (s == "rescaled") return FlowMode::rescaled;
  throw std::invalid_argument("unknown flow mode '" + s + "'");
}

BoundaryMode parse_boundary_mode(const std::string& s) {
  if (s == "dirichlet-one") return BoundaryMode::dirichlet_one;
  if (s == "asymptotic-decay") return BoundaryMode::asymptotic_decay;
  throw std::invalid_argument("unknown boundary mode '" + s + "'");
}

void FlowConfig::validate() const {
  if (!(dt_initial > 0.0)) throw std::invalid_argument("dt_initial must be positive");
  if (!(dt_max >= dt_initial)) throw std::invalid_argument("dt_max must be >= dt_initial");
  if (!(safety_factor > 0.0 && safety_factor < 1.0))
    throw std::invalid_argument("safety_factor must lie in (0,1)");
  if (!(newton_tol > 0.0)) throw std::invalid_argument("newton_tol must be positive");
  if (newton_max_iter < 1) throw std::invalid_argument("newton_max_iter must be >= 1");
  if (!std::isfinite(t_end) || t_end < 0.0) throw std::invalid_argument("t_end must be finite");
}

namespace {

std::string describe_node(const SurfaceModel& m, NodeId n) {
  const NodeInfo& info = m.nodes[n];
  std::ostringstream os;
  os << "node " << n << " (chart " << info.chart << ", i=" << info.i << ", j=" << info.j
     << ", coord " << info.coord.x << "," << info.coord.y << ")";
  return os.str();
}

// Truncation closure of one node: Dirichlet, or log-linear decay towards the
// row inside it.
struct Closure {
  bool decay = false;
  NodeId inner = 0;
  double factor = 0.0;
};

Closure closure_of(const SurfaceModel& m, NodeId n, BoundaryMode mode) {
  Closure c;
  if (mode != BoundaryMode::asymptotic_decay) return c;
  const NodeInfo& info = m.nodes[n];
  const ChartGrid& g = m.charts[info.chart];
  if (g.kind != ChartKind::cylinder_end || info.i == 0) return c;
  const std::int64_t in = g.at(info.i - 1, info.j);
  if (in < 0) return c;
  const ConeEnd& end = m.ends[static_cast<std::size_t>(g.end_index)];
  c.decay = true;
  c.inner = static_cast<NodeId>(in);
  c.factor = std::exp(-end.angle_alpha * end.order_tau * g.spacing[0]);
  return c;
}

// One backward-Euler system. `shift` is 0 in raw mode and 1 in rescaled mode
// (the implicit -w term); `log_offset` is the additive constant that turns
// log w into log u at the rim (tau in rescaled mode).
struct BEProblem {
  const SurfaceModel& m;
  const Field& old;
  double dt;
  double shift;
  double rim_value;
  double log_offset;
  BoundaryMode mode;
  std::vector<Closure> closures;

  BEProblem(const SurfaceModel& model, const Field& prev, double step, double s, double rim,
            double off, BoundaryMode bm)
      : m(model), old(prev), dt(step), shift(s), rim_value(rim), log_offset(off), mode(bm) {
    closures.resize(m.size());
    for (NodeId n = 0; n < m.size(); ++n)
      if (m.nodes[n].tag == NodeTag::truncation) closures[n] = closure_of(m, n, mode);
  }

  Eigen::VectorXd residual(const Field& u) const {
    Eigen::VectorXd f(static_cast<Eigen::Index>(m.size()));
    for (NodeId n = 0; n < m.size(); ++n) {
      const NodeInfo& info = m.nodes[n];
      double r = 0.0;
      if (info.tag == NodeTag::overlap) {
        const InterpStencil& st = m.interp[static_cast<std::size_t>(info.interp)];
        r = u[n];
        for (std::size_t k = 0; k < 4; ++k) r -= st.weight[k] * u[st.source[k]];
      } else if (info.tag == NodeTag::truncation) {
        const Closure& c = closures[n];
        if (c.decay)
          r = std::log(u[n]) + log_offset - c.factor * (std::log(u[c.inner]) + log_offset);
        else
          r = u[n] - rim_value;
      } else {
        const FlatStencil st = m.flat_stencil(n);
        double lap = 0.0;
        for (int s = 0; s < st.size; ++s) {
          const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
          lap += e.coeff * std::log(u[e.node]);
        }
        r = u[n] - dt * (m.laplacian_scale[n] * lap - m.background_curvature[n] - shift * u[n]) -
            old[n];
      }
      f[static_cast<Eigen::Index>(n)] = r;
    }
    return f;
  }

  SparseMatrix jacobian(const Field& u) const {
    Triplets t;
    t.reserve(m.size() * 5);
    for (NodeId n = 0; n < m.size(); ++n) {
      const NodeInfo& info = m.nodes[n];
      const auto row = static_cast<int>(n);
      if (info.tag == NodeTag::overlap) {
        const InterpStencil& st = m.interp[static_cast<std::size_t>(info.interp)];
        t.emplace_back(row, row, 1.0);
        for (std::size_t k = 0; k < 4; ++k)
          t.emplace_back(row, static_cast<int>(st.source[k]), -st.weight[k]);
      } else if (info.tag == NodeTag::truncation) {
        const Closure& c = closures[n];
        if (c.decay) {
          t.emplace_back(row, row, 1.0 / u[n]);
          t.emplace_back(row, static_cast<int>(c.inner), -c.factor / u[c.inner]);
        } else {
          t.emplace_back(row, row, 1.0);
        }
      } else {
        const FlatStencil st = m.flat_stencil(n);
        t.emplace_back(row, row, 1.0 + dt * shift);
        for (int s = 0; s < st.size; ++s) {
          const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
          t.emplace_back(row, static_cast<int>(e.node),
                         -dt * m.laplacian_scale[n] * e.coeff / u[e.node]);
        }
      }
    }
    return assemble(m.size(), m.size(), t);
  }
};

ConformalState newton_step(const SurfaceModel& model, const ConformalState& state,
                           const BEProblem& prob, double new_time, const FlowConfig& config,
                           StepReport* report) {
  Field u = state.u;
  // Start from a state that already satisfies the rim closure.
  for (NodeId n = 0; n < model.size(); ++n)
    if (model.nodes[n].tag == NodeTag::truncation && !prob.closures[n].decay)
      u[n] = prob.rim_value;

  IterativeSolver solver(1e-11);
  Eigen::VectorXd f = prob.residual(u);
  double norm = f.lpNorm<Eigen::Infinity>();
  int iters = 0;
  while (!(norm <= config.newton_tol)) {
    if (iters >= config.newton_max_iter)
      throw NewtonFailure("Newton did not converge in " + std::to_string(iters) +
                              " iterations (residual " + std::to_string(norm) + ")",
                          norm);
    const SparseMatrix j = prob.jacobian(u);
    Eigen::VectorXd delta;
    try {
      delta = solver.solve(j, -f);
    } catch (const LinearSolveError& e) {
      throw NewtonFailure(std::string("linear solve failed: ") + e.what(), norm);
    }
    ++iters;
    double lambda = 1.0;
    bool accepted = false;
    Field trial(u.size());
    for (int halving = 0; halving < 30; ++halving, lambda *= 0.5) {
      bool positive = true;
      for (NodeId n = 0; n < u.size(); ++n) {
        trial[n] = u[n] + lambda * delta[static_cast<Eigen::Index>(n)];
        if (!(trial[n] > 0.0)) {
          positive = false;
          break;
        }
      }
      if (!positive) continue;
      const Eigen::VectorXd ft = prob.residual(trial);
      const double nt = ft.lpNorm<Eigen::Infinity>();
      if (nt < norm || nt <= config.newton_tol) {
        u.swap(trial);
        f = ft;
        norm = nt;
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw NewtonFailure("line search stalled (residual " + std::to_string(norm) + ")", norm);
  }
  for (NodeId n = 0; n < u.size(); ++n)
    if (!(u[n] > 0.0) || !std::isfinite(u[n]))
      throw PositivityLoss("conformal factor lost positivity at " + describe_node(model, n), n);

  ConformalState out;
  out.mode = state.mode;
  out.time = new_time;
  out.u = std::move(u);
  out.step_count = state.step_count + 1;
  out.last_dt = state.last_dt;
  if (report != nullptr) {
    report->newton_iters = iters;
    report->residual = norm;
  }
  return out;
}

void check_state(const SurfaceModel& model, const ConformalState& state, FlowMode mode,
                 double dt) {
  if (state.mode != mode)
    throw std::invalid_argument("step: state is in " + to_string(state.mode) + " mode");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("step: dt must be positive");
  if (state.u.size() != model.size()) throw std::invalid_argument("step: field size mismatch");
  for (NodeId n = 0; n < model.size(); ++n)
    if (!(state.u[n] > 0.0))
      throw PositivityLoss("input state is not positive at " + describe_node(model, n), n);
}

}  // namespace

ConformalState step_raw(const SurfaceModel& model, const ConformalState& state, double dt,
                        const FlowConfig& config, StepReport* report) {
  check_state(model, state, FlowMode::raw, dt);
  const BEProblem prob(model, state.u, dt, 0.0, 1.0, 0.0, config.boundary_mode);
  return newton_step(model, state, prob, state.time + dt, config, report);
}

ConformalState step_rescaled(const SurfaceModel& model, const ConformalState& state,
                             double dtau, const FlowConfig& config, StepReport* report) {
  check_state(model, state, FlowMode::rescaled, dtau);
  const double tau = state.time + dtau;
  // u = 1 at the rim means w = e^{-tau}.
  const BEProblem prob(model, state.u, dtau, 1.0, std::exp(-tau), tau, config.boundary_mode);
  return newton_step(model, state, prob, tau, config, report);
}

double adaptive_dt(const ConformalState& state, int last_newton_iters, const FlowConfig& config) {
  double dt = state.last_dt > 0.0 ? state.last_dt : config.dt_initial;
  if (last_newton_iters >= config.newton_max_iter)
    dt *= 0.5;
  else if (last_newton_iters <= 4)
    dt *= 1.25;
  return std::clamp(dt, config.dt_initial * 1e-4, config.dt_max);
}

SeriesRecord series_record(const SurfaceModel& model, const ConformalState& state,
                           int newton_iters) {
  SeriesRecord rec;
  rec.time = state.time;
  rec.newton_iters = newton_iters;
  const auto [umin, umax] = std::minmax_element(state.u.begin(), state.u.end());
  rec.min_u = *umin;
  rec.max_u = *umax;
  const Field r = scalar_curvature(model, state.u);
  const auto [rmin, rmax] = std::minmax_element(r.begin(), r.end());
  rec.min_R = *rmin;
  rec.max_R = *rmax;
  double total = 0.0;
  for (NodeId n = 0; n < model.size(); ++n) total += r[n] * state.u[n] * model.area_weights[n];
  rec.total_curvature = total;
  return rec;
}

ConformalState initial_state(const SurfaceModel& model, FlowMode mode) {
  ConformalState s;
  s.mode = mode;
  s.u.assign(model.size(), 1.0);
  return s;
}

Trajectory run(const SurfaceModel& model, const FlowConfig& config,
               const ConformalState& initial, const StepObserver& observer) {
  config.validate();
  Trajectory traj;
  traj.mode = initial.mode;
  for (double s : config.snapshot_schedule)
    if (!(s >= 0.0 && s <= config.t_end))
      throw FlowError("snapshot time " + std::to_string(s) + " lies outside [0, t_end]", traj);

  std::vector<double> schedule = config.snapshot_schedule;
  std::sort(schedule.begin(), schedule.end());
  schedule.erase(std::unique(schedule.begin(), schedule.end()), schedule.end());

  traj.snapshots.push_back(initial);
  traj.series.push_back(series_record(model, initial, 0));

  const double eps = 1e-12 * std::max(1.0, std::abs(config.t_end));
  const double floor = config.dt_initial * 1e-4;
  ConformalState state = initial;
  std::size_t next = 0;
  while (next < schedule.size() && schedule[next] <= state.time + eps) ++next;

  while (state.time < config.t_end - eps) {
    const double target = next < schedule.size() ? schedule[next] : config.t_end;
    double proposal = state.last_dt > 0.0 ? state.last_dt : config.dt_initial;
    for (;;) {
      const double remaining = target - state.time;
      double h = proposal;
      bool lands = false;
      if (h >= remaining - eps) {
        h = remaining;
        lands = true;
      } else if (remaining < h * (1.0 + config.safety_factor)) {
        h = 0.5 * remaining;
      }
      StepReport rep;
      ConformalState attempt = state;
      attempt.last_dt = proposal;
      try {
        ConformalState after = state.mode == FlowMode::raw
                                   ? step_raw(model, attempt, h, config, &rep)
                                   : step_rescaled(model, attempt, h, config, &rep);
        if (lands) after.time = target;
        after.last_dt = adaptive_dt(after, rep.newton_iters, config);
        const bool at_snapshot = lands && next < schedule.size();
        if (observer) observer(state, after, rep.newton_iters, at_snapshot);
        state = std::move(after);
        traj.series.push_back(series_record(model, state, rep.newton_iters));
        if (at_snapshot) {
          traj.snapshots.push_back(state);
          ++next;
        }
        break;
      } catch (const NewtonFailure& e) {
        if (proposal <= floor * (1.0 + 1e-12))
          throw FlowError(std::string("step size at its floor and Newton still fails: ") +
                              e.what(),
                          std::move(traj));
        attempt.last_dt = proposal;
        proposal = adaptive_dt(attempt, config.newton_max_iter, config);
      } catch (const PositivityLoss& e) {
        throw FlowError(e.what(), std::move(traj));
      }
    }
  }
  if (traj.snapshots.back().time != state.time) traj.snapshots.push_back(state);
  return traj;
}

}  // namespace conic
