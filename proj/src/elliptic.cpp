#include "conic/elliptic.hpp"

#include "conic/linear_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace conic {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool has_core(const SurfaceModel& m) {
  return !m.charts.empty() && m.charts.front().kind == ChartKind::torus_core;
}

double weighted_sum(const SurfaceModel& m, const Field& f) {
  double s = 0.0;
  for (NodeId n = 0; n < m.size(); ++n) s += f[n] * m.area_weights[n];
  return s;
}

// Core point farthest from all punctures.
Point2 bump_center(const SurfaceModel& m, double& clearance) {
  const ChartGrid& g = m.charts.front();
  Point2 best{0.0, 0.0};
  clearance = m.ends.empty() ? 1.0 : -1.0;
  if (m.ends.empty()) return best;
  for (int i = 0; i < g.resolution[0]; ++i) {
    for (int j = 0; j < g.resolution[1]; ++j) {
      const Point2 z = g.coordinate(i, j);
      double d = std::numeric_limits<double>::infinity();
      for (const ConeEnd& e : m.ends) d = std::min(d, torus_distance(z, e.puncture));
      if (d > clearance + 1e-14) {
        clearance = d;
        best = z;
      }
    }
  }
  return best;
}

NodeId anchor_node(const SurfaceModel& m) {
  if (!has_core(m)) return 0;
  double clearance = 0.0;
  return m.nearest_core_node(bump_center(m, clearance));
}

// Inner neighbor of a rim node of a cylinder chart (-1 when there is none).
std::int64_t inner_neighbor(const SurfaceModel& m, NodeId n) {
  const NodeInfo& info = m.nodes[n];
  const ChartGrid& g = m.charts[info.chart];
  if (g.kind != ChartKind::cylinder_end) return -1;
  if (info.i == g.resolution[0] - 1) return g.at(info.i - 1, info.j);
  return -1;
}

void push_overlap(const SurfaceModel& m, NodeId n, Triplets& t) {
  const InterpStencil& st = m.interp[static_cast<std::size_t>(m.nodes[n].interp)];
  const auto row = static_cast<int>(n);
  t.emplace_back(row, row, 1.0);
  for (std::size_t k = 0; k < 4; ++k)
    t.emplace_back(row, static_cast<int>(st.source[k]), -st.weight[k]);
}

double interior_residual(const SurfaceModel& m, const Field& f, const Field& source) {
  double worst = 0.0;
  for (NodeId n = 0; n < m.size(); ++n) {
    if (m.nodes[n].tag != NodeTag::interior) continue;
    const FlatStencil st = m.flat_stencil(n);
    double lap = 0.0;
    for (int s = 0; s < st.size; ++s)
      lap += st.entries[static_cast<std::size_t>(s)].coeff * f[st.entries[static_cast<std::size_t>(s)].node];
    worst = std::max(worst, std::abs(m.laplacian_scale[n] * lap - source[n]));
  }
  return worst;
}

}  // namespace

Field core_bump(const SurfaceModel& model) {
  Field b(model.size(), 0.0);
  if (!has_core(model)) return b;
  double clearance = 0.0;
  const Point2 c = bump_center(model, clearance);
  const double radius = std::min(0.25, 0.9 * (clearance - model.r_out));
  if (!(radius > 0.0)) throw EllipticError("no room for a core bump between the punctures");
  for (NodeId n = 0; n < model.size(); ++n) {
    if (model.nodes[n].chart != 0) continue;
    const double d = torus_distance(model.nodes[n].coord, c) / radius;
    if (d < 1.0) b[n] = std::pow(1.0 - d * d, 3);
  }
  return b;
}

PotentialSolution solve_potential(const SurfaceModel& model, const Field& source) {
  const std::size_t n = model.size();
  if (source.size() != n) throw EllipticError("solve_potential: source size mismatch");
  for (double s : source)
    if (!std::isfinite(s)) throw EllipticError("solve_potential: source is not finite");
  const double total = weighted_sum(model, source);
  if (!std::isfinite(total)) throw EllipticError("solve_potential: source is not integrable");

  double alpha_sum = 0.0;
  for (const ConeEnd& e : model.ends) alpha_sum += e.angle_alpha;

  // Unknowns: f at every node plus one scalar (the shared flux coefficient
  // beta, or a compatibility shift on closed fixtures).
  const auto lam = static_cast<int>(n);
  const NodeId anchor = anchor_node(model);
  const bool cone_fixture = model.exact_fixture && !model.ends.empty();
  const bool closed = model.ends.empty();
  Triplets t;
  t.reserve(n * 5 + 8);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n + 1));
  for (NodeId k = 0; k < n; ++k) {
    const NodeInfo& info = model.nodes[k];
    const auto row = static_cast<int>(k);
    if (info.tag == NodeTag::overlap) {
      push_overlap(model, k, t);
      continue;
    }
    if (info.tag == NodeTag::truncation) {
      const std::int64_t in = inner_neighbor(model, k);
      if (in < 0) {
        t.emplace_back(row, row, 1.0);  // inner rim of a fixture
        continue;
      }
      const ChartGrid& g = model.chart_of(k);
      const double alpha = model.ends[static_cast<std::size_t>(g.end_index)].angle_alpha;
      t.emplace_back(row, row, 1.0 / g.spacing[0]);
      t.emplace_back(row, static_cast<int>(in), -1.0 / g.spacing[0]);
      t.emplace_back(row, lam, -alpha);
      continue;
    }
    if (!cone_fixture && !closed && k == anchor) continue;  // replaced below
    const FlatStencil st = model.flat_stencil(k);
    for (int s = 0; s < st.size; ++s) {
      const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
      t.emplace_back(row, static_cast<int>(e.node), e.coeff);
    }
    if (closed) t.emplace_back(row, lam, -1.0 / model.laplacian_scale[k]);
    rhs[row] = source[k] / model.laplacian_scale[k];
  }
  if (cone_fixture) {
    t.emplace_back(lam, lam, 1.0);
    rhs[lam] = total / (kTwoPi * alpha_sum);
  } else if (closed) {
    t.emplace_back(lam, static_cast<int>(anchor), 1.0);
  } else {
    // The anchor's own equation becomes f = 0; the extra row carries it
    // instead, so every interior equation is still enforced.
    const FlatStencil st = model.flat_stencil(anchor);
    for (int s = 0; s < st.size; ++s) {
      const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
      t.emplace_back(lam, static_cast<int>(e.node), e.coeff);
    }
    rhs[lam] = source[anchor] / model.laplacian_scale[anchor];
    t.emplace_back(static_cast<int>(anchor), static_cast<int>(anchor), 1.0);
  }

  const SparseMatrix a = assemble(n + 1, n + 1, t);
  Eigen::VectorXd x;
  try {
    x = direct_solve(a, rhs);
  } catch (const LinearSolveError& e) {
    throw EllipticError(std::string("solve_potential: ") + e.what());
  }

  PotentialSolution out;
  out.anchor = anchor;
  out.f.assign(x.data(), x.data() + n);
  if (!closed) {
    // Shift so the anchor sits at zero exactly.
    const double shift = out.f[anchor];
    for (double& v : out.f) v -= shift;
  }
  const double beta = x[lam];
  out.ends.source_integral = total;
  for (std::size_t e = 0; e < model.ends.size(); ++e) {
    const ConeEnd& end = model.ends[e];
    const ChartGrid* g = nullptr;
    for (const ChartGrid& c : model.charts)
      if (c.kind == ChartKind::cylinder_end && c.end_index == static_cast<int>(e)) g = &c;
    double mean = 0.0;
    const int last = g->resolution[0] - 1;
    for (int j = 0; j < g->resolution[1]; ++j)
      mean += out.f[static_cast<NodeId>(g->at(last, j))];
    mean /= g->resolution[1];
    const double rho = g->coordinate(last, 0).x;
    out.ends.beta.push_back(beta);
    out.ends.gamma.push_back(mean - beta * (end.angle_alpha * rho - std::log(end.angle_alpha)));
    out.ends.flux_total += kTwoPi * end.angle_alpha * beta;
  }
  Field shifted = source;
  if (closed)
    for (NodeId k = 0; k < n; ++k) shifted[k] += beta;
  out.residual = interior_residual(model, out.f, shifted);
  return out;
}

void potential_fields(const SurfaceModel& model, const Field& f, const Field& u, Field& h,
                      double& grad_norm_max) {
  const std::size_t n = model.size();
  const Field lap = detail::apply_laplacian(model, f);
  Field grad2(n, 0.0);
  for (NodeId k = 0; k < n; ++k) {
    const NodeInfo& info = model.nodes[k];
    if (info.tag == NodeTag::overlap) continue;
    const ChartGrid& g = model.charts[info.chart];
    double sum = 0.0;
    for (int dir = 0; dir < 2; ++dir) {
      const int di = dir == 0 ? 1 : 0;
      const int dj = dir == 1 ? 1 : 0;
      const std::int64_t p = g.at(info.i + di, info.j + dj);
      const std::int64_t q = g.at(info.i - di, info.j - dj);
      const double hs = g.spacing[static_cast<std::size_t>(dir)];
      double d = 0.0;
      if (p >= 0 && q >= 0)
        d = (f[static_cast<NodeId>(p)] - f[static_cast<NodeId>(q)]) / (2.0 * hs);
      else if (p >= 0)
        d = (f[static_cast<NodeId>(p)] - f[k]) / hs;
      else if (q >= 0)
        d = (f[k] - f[static_cast<NodeId>(q)]) / hs;
      sum += d * d;
    }
    grad2[k] = model.laplacian_scale[k] * sum;
  }
  chart_sync(model, grad2);
  h.assign(n, 0.0);
  grad_norm_max = 0.0;
  for (NodeId k = 0; k < n; ++k) {
    const double g2 = grad2[k] / u[k];
    h[k] = lap[k] / u[k] + g2;
    grad_norm_max = std::max(grad_norm_max, std::sqrt(std::max(g2, 0.0)));
  }
}

PotentialState make_potential_state(const SurfaceModel& model, const Field& f0,
                                    const Field& u) {
  if (f0.size() != model.size() || u.size() != model.size())
    throw EllipticError("make_potential_state: field size mismatch");
  PotentialState p;
  p.f0 = f0;
  p.f.resize(f0.size());
  // f = f0 - log u keeps the identity exact at the start.
  for (NodeId k = 0; k < model.size(); ++k) p.f[k] = f0[k] - std::log(u[k]);
  potential_fields(model, p.f, u, p.h, p.grad_norm_max);
  return p;
}

PotentialState evolve_potential(const SurfaceModel& model, const PotentialState& pot,
                                const ConformalState& state, double dt) {
  const std::size_t n = model.size();
  if (pot.f.size() != n || state.u.size() != n)
    throw EllipticError("evolve_potential: field size mismatch");
  if (!(dt > 0.0)) throw EllipticError("evolve_potential: dt must be positive");
  const Field& u = state.u;
  Triplets t;
  t.reserve(n * 5);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (NodeId k = 0; k < n; ++k) {
    const NodeInfo& info = model.nodes[k];
    const auto row = static_cast<int>(k);
    if (info.tag == NodeTag::overlap) {
      push_overlap(model, k, t);
      rhs[row] = 0.0;
    } else if (info.tag == NodeTag::truncation) {
      t.emplace_back(row, row, 1.0);
      rhs[row] = pot.f0[k] - std::log(u[k]);
    } else {
      const FlatStencil st = model.flat_stencil(k);
      const double c = dt * model.laplacian_scale[k] / u[k];
      for (int s = 0; s < st.size; ++s) {
        const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
        t.emplace_back(row, static_cast<int>(e.node), -c * e.coeff);
      }
      t.emplace_back(row, row, 1.0);
      rhs[row] = pot.f[k];
    }
  }
  const SparseMatrix a = assemble(n, n, t);
  IterativeSolver solver(1e-13);
  Eigen::VectorXd x;
  try {
    x = solver.solve(a, rhs);
  } catch (const LinearSolveError& e) {
    throw EllipticError(std::string("evolve_potential: ") + e.what());
  }
  PotentialState out;
  out.f0 = pot.f0;
  out.f.assign(x.data(), x.data() + n);
  potential_fields(model, out.f, u, out.h, out.grad_norm_max);
  return out;
}

GaugeResult gauge_nonpositive(const SurfaceModel& model) {
  const std::size_t n = model.size();
  GaugeResult out;
  out.psi.assign(n, 0.0);
  const Field& r0 = model.background_curvature;
  // Round-off in the discrete background curvature counts as zero.
  double r0_scale = 1.0;
  for (double r : r0) r0_scale = std::max(r0_scale, std::abs(r));
  if (*std::max_element(r0.begin(), r0.end()) <= 1e-10 * r0_scale) return out;

  const double half_total = 0.5 * weighted_sum(model, r0);
  if (!(half_total < 0.0))
    throw EllipticError("gauge_nonpositive: total curvature must be negative");
  const Field bump = core_bump(model);
  const double bump_total = weighted_sum(model, bump);
  if (!(bump_total > 0.0)) throw EllipticError("gauge_nonpositive: empty core bump");
  out.bump_mass = -half_total / bump_total;
  Field q(n);
  for (NodeId k = 0; k < n; ++k) q[k] = 0.5 * r0[k] + out.bump_mass * bump[k];
  out.q_integral = weighted_sum(model, q);

  // Lap0 psi = Q, psi = 0 on the rims. Q has zero mass, so psi tends to a
  // constant down each end and stays bounded.
  Triplets t;
  t.reserve(n * 5);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (NodeId k = 0; k < n; ++k) {
    const NodeInfo& info = model.nodes[k];
    const auto row = static_cast<int>(k);
    if (info.tag == NodeTag::overlap) {
      push_overlap(model, k, t);
    } else if (info.tag == NodeTag::truncation) {
      t.emplace_back(row, row, 1.0);
    } else {
      const FlatStencil st = model.flat_stencil(k);
      for (int s = 0; s < st.size; ++s) {
        const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
        t.emplace_back(row, static_cast<int>(e.node), e.coeff);
      }
      rhs[row] = q[k] / model.laplacian_scale[k];
    }
  }
  if (model.ends.empty()) throw EllipticError("gauge_nonpositive: model has no ends");
  Eigen::VectorXd x;
  try {
    x = direct_solve(assemble(n, n, t), rhs);
  } catch (const LinearSolveError& e) {
    throw EllipticError(std::string("gauge_nonpositive: ") + e.what());
  }
  out.psi.assign(x.data(), x.data() + n);
  const Field lap = detail::apply_laplacian(model, out.psi);
  out.min_margin = std::numeric_limits<double>::infinity();
  for (NodeId k = 0; k < n; ++k) {
    out.min_margin = std::min(out.min_margin, lap[k] - 0.5 * r0[k]);
    out.max_abs_psi = std::max(out.max_abs_psi, std::abs(out.psi[k]));
  }
  return out;
}

}  // namespace conic
