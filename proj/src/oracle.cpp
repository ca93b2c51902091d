// Hyperbolic uniformizer: Lap0 phi = R0/2 + e^{2 phi}/2, U = e^{2 phi}.
//
// Each end is closed at its rim by the complete-cusp condition. Writing
// W = phi + v for the cylinder log factor, the cusp solution
// W = log(sqrt(2) / (rho + c)) satisfies dW/drho = -e^W / sqrt(2) for every c,
// so the rim carries no fitted constant.

#include "conic/elliptic.hpp"
#include "conic/linear_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace conic {

namespace {

const double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

struct EndProfile {
  double rho0 = 0.0;
  double drho = 0.0;
  std::vector<double> phi;

  [[nodiscard]] double at(double rho) const {
    const double s = std::clamp((rho - rho0) / drho, 0.0, static_cast<double>(phi.size() - 1));
    const auto i = std::min(static_cast<std::size_t>(s), phi.size() - 2);
    const double w = s - static_cast<double>(i);
    return (1.0 - w) * phi[i] + w * phi[i + 1];
  }
};

const ChartGrid& end_chart(const SurfaceModel& m, std::size_t e) {
  for (const ChartGrid& g : m.charts)
    if (g.kind == ChartKind::cylinder_end && g.end_index == static_cast<int>(e)) return g;
  throw EllipticError("model has no chart for end " + std::to_string(e));
}

// Theta-averaged problem on one end with phi(rho_min) = inner.
EndProfile radial_profile(const SurfaceModel& m, std::size_t e, double inner) {
  const ChartGrid& g = end_chart(m, e);
  const int nr = g.resolution[0];
  const int nt = g.resolution[1];
  std::vector<double> a(nr, 0.0), b(nr, 0.0), v(nr, 0.0);  // <e^{2v}>, <e^{2v} R0>, <v>
  for (int i = 0; i < nr; ++i) {
    for (int j = 0; j < nt; ++j) {
      const auto k = static_cast<NodeId>(g.at(i, j));
      const double e2v = std::exp(2.0 * m.background_log_factor[k]);
      a[i] += e2v / nt;
      b[i] += e2v * m.background_curvature[k] / nt;
      v[i] += m.background_log_factor[k] / nt;
    }
  }
  const double h = g.spacing[0];
  EndProfile p;
  p.rho0 = g.origin[0];
  p.drho = h;
  // Start from the cusp profile capped by the inner value.
  p.phi.resize(nr);
  for (int i = 0; i < nr; ++i) {
    const double cusp = 0.5 * std::log(2.0) - std::log(g.coordinate(i, 0).x - p.rho0 + 1.0) - v[i];
    p.phi[i] = std::min(inner, cusp);
  }
  p.phi[0] = inner;

  auto residual = [&](const std::vector<double>& x, std::vector<double>& r) {
    r.assign(nr, 0.0);
    for (int i = 1; i < nr - 1; ++i)
      r[i] = (x[i + 1] - 2.0 * x[i] + x[i - 1]) / (h * h) - 0.5 * b[i] -
             0.5 * a[i] * std::exp(2.0 * x[i]);
    const int n = nr - 1;
    r[n] = (x[n] - x[n - 1] + v[n] - v[n - 1]) / h +
           std::exp(0.5 * (x[n] + x[n - 1] + v[n] + v[n - 1])) * kInvSqrt2;
  };
  auto norm = [](const std::vector<double>& r) {
    double s = 0.0;
    for (double x : r) s = std::max(s, std::abs(x));
    return s;
  };

  std::vector<double> r;
  residual(p.phi, r);
  double rn = norm(r);
  for (int it = 0; it < 400 && rn > 1e-12; ++it) {
    // Tridiagonal Jacobian; unknowns 1..nr-1.
    const int n = nr - 1;
    std::vector<double> lo(nr, 0.0), di(nr, 0.0), up(nr, 0.0), rhs(nr, 0.0);
    for (int i = 1; i < n; ++i) {
      lo[i] = 1.0 / (h * h);
      up[i] = 1.0 / (h * h);
      di[i] = -2.0 / (h * h) - a[i] * std::exp(2.0 * p.phi[i]);
      rhs[i] = -r[i];
    }
    const double ex = std::exp(0.5 * (p.phi[n] + p.phi[n - 1] + v[n] + v[n - 1])) * kInvSqrt2;
    lo[n] = -1.0 / h + 0.5 * ex;
    di[n] = 1.0 / h + 0.5 * ex;
    rhs[n] = -r[n];
    lo[1] = 0.0;  // phi[0] is fixed
    // Thomas algorithm.
    for (int i = 2; i <= n; ++i) {
      const double w = lo[i] / di[i - 1];
      di[i] -= w * up[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    std::vector<double> d(nr, 0.0);
    d[n] = rhs[n] / di[n];
    for (int i = n - 1; i >= 1; --i) d[i] = (rhs[i] - up[i] * d[i + 1]) / di[i];

    double lambda = 1.0;
    bool ok = false;
    for (int k = 0; k < 40; ++k, lambda *= 0.5) {
      std::vector<double> trial = p.phi;
      for (int i = 1; i <= n; ++i) trial[i] += lambda * d[i];
      std::vector<double> rt;
      residual(trial, rt);
      const double nt = norm(rt);
      if (std::isfinite(nt) && nt < rn) {
        p.phi.swap(trial);
        r.swap(rt);
        rn = nt;
        ok = true;
        break;
      }
    }
    if (!ok) break;
  }
  return p;
}

struct OracleSystem {
  const SurfaceModel& m;
  std::vector<std::int64_t> inner;  // rim node -> inner neighbor

  explicit OracleSystem(const SurfaceModel& model) : m(model), inner(model.size(), -1) {
    for (NodeId k = 0; k < m.size(); ++k) {
      const NodeInfo& info = m.nodes[k];
      if (info.tag != NodeTag::truncation) continue;
      const ChartGrid& g = m.charts[info.chart];
      inner[k] = g.at(info.i - 1, info.j);
    }
  }

  // Rows: interior Lap_flat phi - e^{2v}(R0 + e^{2 phi})/2, overlap
  // interpolation, rim cusp condition. `curv` receives max |R + 1| on
  // interior nodes.
  Eigen::VectorXd residual(const Field& phi, double& curv, double& other) const {
    Eigen::VectorXd f(static_cast<Eigen::Index>(m.size()));
    curv = 0.0;
    other = 0.0;
    for (NodeId k = 0; k < m.size(); ++k) {
      const NodeInfo& info = m.nodes[k];
      double r = 0.0;
      if (info.tag == NodeTag::overlap) {
        const InterpStencil& st = m.interp[static_cast<std::size_t>(info.interp)];
        // Interpolate U rather than phi, matching the flow's overlap rows.
        double sum = 0.0;
        for (std::size_t s = 0; s < 4; ++s) sum += st.weight[s] * std::exp(2.0 * phi[st.source[s]]);
        r = phi[k] - 0.5 * std::log(sum);
        other = std::max(other, std::abs(r));
      } else if (info.tag == NodeTag::truncation) {
        const auto in = static_cast<NodeId>(inner[k]);
        const double h = m.chart_of(k).spacing[0];
        const double wk = phi[k] + m.background_log_factor[k];
        const double wi = phi[in] + m.background_log_factor[in];
        r = (wk - wi) / h + std::exp(0.5 * (wk + wi)) * kInvSqrt2;
        other = std::max(other, std::abs(r) * h);
      } else {
        const FlatStencil st = m.flat_stencil(k);
        double lap = 0.0;
        for (int s = 0; s < st.size; ++s)
          lap += st.entries[static_cast<std::size_t>(s)].coeff *
                 phi[st.entries[static_cast<std::size_t>(s)].node];
        const double e2v = 1.0 / m.laplacian_scale[k];
        r = lap - 0.5 * e2v * (m.background_curvature[k] + std::exp(2.0 * phi[k]));
        // R + 1 = -2 r e^{-2v - 2 phi}
        curv = std::max(curv, std::abs(2.0 * r * m.laplacian_scale[k] * std::exp(-2.0 * phi[k])));
      }
      f[static_cast<Eigen::Index>(k)] = r;
    }
    return f;
  }

  SparseMatrix jacobian(const Field& phi) const {
    Triplets t;
    t.reserve(m.size() * 5);
    for (NodeId k = 0; k < m.size(); ++k) {
      const NodeInfo& info = m.nodes[k];
      const auto row = static_cast<int>(k);
      if (info.tag == NodeTag::overlap) {
        const InterpStencil& st = m.interp[static_cast<std::size_t>(info.interp)];
        double sum = 0.0;
        for (std::size_t s = 0; s < 4; ++s) sum += st.weight[s] * std::exp(2.0 * phi[st.source[s]]);
        t.emplace_back(row, row, 1.0);
        for (std::size_t s = 0; s < 4; ++s)
          t.emplace_back(row, static_cast<int>(st.source[s]),
                         -st.weight[s] * std::exp(2.0 * phi[st.source[s]]) / sum);
      } else if (info.tag == NodeTag::truncation) {
        const auto in = static_cast<NodeId>(inner[k]);
        const double h = m.chart_of(k).spacing[0];
        const double ex = std::exp(0.5 * (phi[k] + m.background_log_factor[k] + phi[in] +
                                          m.background_log_factor[in])) *
                          kInvSqrt2;
        t.emplace_back(row, row, 1.0 / h + 0.5 * ex);
        t.emplace_back(row, static_cast<int>(in), -1.0 / h + 0.5 * ex);
      } else {
        const FlatStencil st = m.flat_stencil(k);
        const double e2v = 1.0 / m.laplacian_scale[k];
        for (int s = 0; s < st.size; ++s) {
          const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
          double c = e.coeff;
          if (e.node == k) c -= e2v * std::exp(2.0 * phi[k]);
          t.emplace_back(row, static_cast<int>(e.node), c);
        }
      }
    }
    return assemble(m.size(), m.size(), t);
  }
};

bool newton(const OracleSystem& sys, Field& phi, double tol, std::vector<double>& history,
            int& iterations, double& final_curv) {
  double curv = 0.0, other = 0.0;
  Eigen::VectorXd f = sys.residual(phi, curv, other);
  double norm = f.lpNorm<Eigen::Infinity>();
  IterativeSolver solver(1e-12, 4000);
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 60; ++it) {
    // Polish until roundoff stops further progress.
    const bool within = curv <= tol && other <= tol;
    if (within && (curv > 0.5 * previous || curv <= 1e-13)) {
      final_curv = curv;
      return true;
    }
    previous = curv;
    Eigen::VectorXd d;
    try {
      solver.refresh();
      d = solver.solve(sys.jacobian(phi), -f);
    } catch (const LinearSolveError&) {
      d = direct_solve(sys.jacobian(phi), -f);
    }
    ++iterations;
    double lambda = 1.0;
    bool ok = false;
    Field trial(phi.size());
    for (int k = 0; k < 40; ++k, lambda *= 0.5) {
      for (NodeId n = 0; n < phi.size(); ++n)
        trial[n] = phi[n] + lambda * d[static_cast<Eigen::Index>(n)];
      double c2 = 0.0, o2 = 0.0;
      Eigen::VectorXd ft = sys.residual(trial, c2, o2);
      const double nt = ft.lpNorm<Eigen::Infinity>();
      if (std::isfinite(nt) && (nt < norm || (c2 < curv && o2 <= std::max(other, tol)))) {
        phi.swap(trial);
        f = std::move(ft);
        norm = nt;
        curv = c2;
        other = o2;
        ok = true;
        break;
      }
    }
    history.push_back(curv);
    if (!ok) break;
  }
  final_curv = curv;
  return curv <= tol && other <= tol;
}

}  // namespace

OracleResult uniformize_oracle(const SurfaceModel& model, double tol) {
  if (model.exact_fixture || model.ends.empty() || model.euler_char >= 0)
    throw EllipticError("uniformize_oracle: needs a punctured model with negative Euler characteristic");
  const std::size_t n = model.size();
  const GaugeResult gauge = gauge_nonpositive(model);
  Field guess(n);
  for (NodeId k = 0; k < n; ++k) guess[k] = gauge.psi[k] - 1.0;

  // Radial profiles, seeded by the theta-average of the guess on the inner
  // ring of each end.
  std::vector<EndProfile> profiles;
  for (std::size_t e = 0; e < model.ends.size(); ++e) {
    const ChartGrid& g = end_chart(model, e);
    double inner = 0.0;
    for (int j = 0; j < g.resolution[1]; ++j)
      inner += guess[static_cast<NodeId>(g.at(0, j))] / g.resolution[1];
    profiles.push_back(radial_profile(model, e, inner));
  }
  auto seeded = [&](bool keep_core) {
    Field phi(n);
    for (NodeId k = 0; k < n; ++k) {
      const NodeInfo& info = model.nodes[k];
      const ChartGrid& g = model.charts[info.chart];
      if (g.kind == ChartKind::cylinder_end) {
        phi[k] = profiles[static_cast<std::size_t>(g.end_index)].at(info.coord.x);
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      std::size_t end = 0;
      for (std::size_t e = 0; e < model.ends.size(); ++e) {
        const double d = torus_distance(info.coord, model.ends[e].puncture);
        if (d < best) {
          best = d;
          end = e;
        }
      }
      const EndProfile& p = profiles[end];
      if (best < model.r_out)
        phi[k] = p.at(-std::log(best));
      else
        phi[k] = keep_core ? guess[k] : p.phi.front();
    }
    Field u(n);
    for (NodeId k = 0; k < n; ++k) u[k] = std::exp(2.0 * phi[k]);
    chart_sync(model, u);
    for (NodeId k = 0; k < n; ++k) phi[k] = 0.5 * std::log(u[k]);
    return phi;
  };

  const OracleSystem sys(model);
  OracleResult out;
  Field phi = seeded(true);
  double curv = 0.0;
  bool ok = newton(sys, phi, tol, out.history, out.iterations, curv);
  if (!ok) {
    out.retried = true;
    phi = seeded(false);
    ok = newton(sys, phi, tol, out.history, out.iterations, curv);
  }
  if (!ok)
    throw OracleError("uniformize_oracle: Newton did not reach the tolerance (residual " +
                          std::to_string(curv) + ")",
                      out.history);
  out.residual = curv;
  out.phi = phi;
  out.U.resize(n);
  for (NodeId k = 0; k < n; ++k) out.U[k] = std::exp(2.0 * phi[k]);
  return out;
}

}  // namespace conic
