#include "conic/diagnostics.hpp"

#include "conic/elliptic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace conic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFourPi = 4.0 * std::numbers::pi;

CheckResult make(const std::string& name, bool ok, double worst, double tol,
                 const std::string& statement) {
  CheckResult c;
  c.name = name;
  c.status = ok ? CheckStatus::pass : CheckStatus::fail;
  c.worst_value = worst;
  c.tolerance = tol;
  c.statement = statement;
  return c;
}

CheckResult info(const std::string& name, double value, const std::string& statement) {
  CheckResult c;
  c.name = name;
  c.status = CheckStatus::info;
  c.worst_value = value;
  c.statement = statement;
  return c;
}

void require_mode(const RunData& run, FlowMode mode, const char* who) {
  if (run.mode != mode)
    throw DiagnosticsError(std::string(who) + ": needs a " + to_string(mode) + " trajectory");
  if (run.snapshots.empty()) throw DiagnosticsError(std::string(who) + ": no snapshots");
}


std::vector<NodeId> core_nodes(const SurfaceModel& m) {
  std::vector<NodeId> out;
  for (NodeId n = 0; n < m.size(); ++n)
    if (m.in_core(n)) out.push_back(n);
  return out;
}

std::vector<NodeId> flat_nodes(const SurfaceModel& m) {
  std::vector<NodeId> out;
  for (NodeId n = 0; n < m.size(); ++n)
    if (in_flat_core(m, n)) out.push_back(n);
  return out;
}

std::vector<double> times_of(const RunData& run) {
  std::vector<double> t;
  for (const ConformalState& s : run.snapshots) t.push_back(s.time);
  return t;
}

// |q''| at node n around snapshot i from the nearest available triple.
double second_derivative(const std::vector<double>& t, const std::vector<Field>& q,
                         std::size_t i, NodeId n) {
  if (t.size() < 3) return 0.0;
  const std::size_t mid = std::clamp<std::size_t>(i, 1, t.size() - 2);
  const double d1 = (q[mid][n] - q[mid - 1][n]) / (t[mid] - t[mid - 1]);
  const double d2 = (q[mid + 1][n] - q[mid][n]) / (t[mid + 1] - t[mid]);
  return std::abs(d2 - d1) / (0.5 * (t[mid + 1] - t[mid - 1]));
}

// Slack for a pair (i, i+1) at one node: 10 newton_tol + 2 dt |q''|.
double local_slack(const std::vector<double>& t, const std::vector<Field>& q, std::size_t i,
                   NodeId n, double newton_tol) {
  const double dt = t[i + 1] - t[i];
  const double qpp = std::max(second_derivative(t, q, i, n), second_derivative(t, q, i + 1, n));
  return 10.0 * newton_tol + 2.0 * dt * qpp;
}

double series_slack(const std::vector<double>& t, const std::vector<double>& q, std::size_t i,
                    double newton_tol) {
  std::vector<Field> wrap;
  wrap.reserve(q.size());
  for (double v : q) wrap.push_back(Field{v});
  return local_slack(t, wrap, i, 0, newton_tol);
}

std::vector<Field> curvatures(const SurfaceModel& m, const RunData& run) {
  std::vector<Field> r;
  r.reserve(run.snapshots.size());
  for (const ConformalState& s : run.snapshots) r.push_back(scalar_curvature(m, s.u));
  return r;
}

std::vector<Field> fields(const RunData& run) {
  std::vector<Field> u;
  u.reserve(run.snapshots.size());
  for (const ConformalState& s : run.snapshots) u.push_back(s.u);
  return u;
}

std::vector<Point2> sample_flat_points(const SurfaceModel& m, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Point2> pts;
  int guard = 0;
  while (static_cast<int>(pts.size()) < count) {
    if (++guard > 100000) throw DiagnosticsError("could not sample points in the flat core");
    const Point2 z{uni(rng), uni(rng)};
    bool ok = true;
    for (const ConeEnd& e : m.ends)
      if (torus_distance(z, e.puncture) < m.r_out) ok = false;
    if (ok) pts.push_back(z);
  }
  return pts;
}

}  // namespace

std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass:
      return "pass";
    case CheckStatus::fail:
      return "fail";
    default:
      return "info";
  }
}

bool DiagnosticsReport::passed() const {
  return std::none_of(checks.begin(), checks.end(),
                      [](const CheckResult& c) { return c.status == CheckStatus::fail; });
}

const CheckResult* DiagnosticsReport::find(const std::string& name) const {
  for (const CheckResult& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

const Series* DiagnosticsReport::find_series(const std::string& name) const {
  for (const Series& s : series)
    if (s.name == name) return &s;
  return nullptr;
}

void DiagnosticsReport::merge(DiagnosticsReport other) {
  for (CheckResult& c : other.checks) checks.push_back(std::move(c));
  for (Series& s : other.series) series.push_back(std::move(s));
  std::stable_sort(checks.begin(), checks.end(),
                   [](const CheckResult& a, const CheckResult& b) { return a.name < b.name; });
}

std::string DiagnosticsReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(10);
  for (const CheckResult& c : checks) {
    os << c.name << ',' << to_string(c.status) << ',' << c.worst_value << ',';
    if (c.location)
      os << c.location->node << ',' << c.location->time;
    else
      os << ',';
    os << ',' << c.tolerance << '\n';
  }
  return os.str();
}

bool in_flat_core(const SurfaceModel& model, NodeId n) {
  if (model.chart_of(n).kind != ChartKind::torus_core) return false;
  if (model.nodes[n].tag != NodeTag::interior) return false;
  for (const ConeEnd& e : model.ends)
    if (torus_distance(model.nodes[n].coord, e.puncture) < model.r_out) return false;
  return true;
}

double solver_slack(const std::vector<double>& times, const std::vector<Field>& q,
                    double newton_tol, const std::vector<NodeId>& nodes) {
  double dt = 0.0;
  for (std::size_t i = 1; i < times.size(); ++i) dt = std::max(dt, times[i] - times[i - 1]);
  double qpp = 0.0;
  for (std::size_t i = 1; i + 1 < times.size(); ++i)
    for (NodeId n : nodes) qpp = std::max(qpp, second_derivative(times, q, i, n));
  return 10.0 * newton_tol + 2.0 * dt * qpp;
}

DiagnosticsReport check_bounds(const SurfaceModel& model, const RunData& run,
                               const BoundsOptions& opt) {
  require_mode(run, FlowMode::raw, "check_bounds");
  if (run.snapshots.back().time < opt.min_t_end)
    throw DiagnosticsError("check_bounds: trajectory too short (t_end " +
                           std::to_string(run.snapshots.back().time) + ")");
  const std::vector<NodeId> core = core_nodes(model);
  const std::vector<NodeId> flat = flat_nodes(model);

  double c1 = kInf, c2 = 0.0;
  for (const ConformalState& s : run.snapshots) {
    if (s.time > 1.0) continue;
    for (NodeId n : core) {
      c1 = std::min(c1, s.u[n]);
      c2 = std::max(c2, s.u[n] / (1.0 + s.time));
    }
  }
  c1 *= 0.5;
  c2 *= 2.0;

  Series ser{"bounds", {"time", "min_core_u", "max_core_u", "min_flat_u"}, {}};
  double worst_low = kInf, worst_high = 0.0;
  CheckLocation loc_low, loc_high;
  std::vector<double> ts, mins;
  for (const ConformalState& s : run.snapshots) {
    double lo = kInf, hi = 0.0, fl = kInf;
    NodeId nlo = 0, nhi = 0;
    for (NodeId n : core) {
      if (s.u[n] < lo) {
        lo = s.u[n];
        nlo = n;
      }
      if (s.u[n] > hi) {
        hi = s.u[n];
        nhi = n;
      }
    }
    for (NodeId n : flat) fl = std::min(fl, s.u[n]);
    ser.rows.push_back({s.time, lo, hi, flat.empty() ? lo : fl});
    if (s.time >= 1.0 && !flat.empty()) {
      ts.push_back(s.time);
      mins.push_back(fl);
    }
    if (s.time <= 1.0) continue;
    if (lo < worst_low) {
      worst_low = lo;
      loc_low = {nlo, s.time};
    }
    if (hi / (1.0 + s.time) > worst_high) {
      worst_high = hi / (1.0 + s.time);
      loc_high = {nhi, s.time};
    }
  }
  DiagnosticsReport rep;
  CheckResult low = make("bounds.lower", worst_low >= c1, worst_low, c1, "u >= C1");
  if (std::isfinite(worst_low)) low.location = loc_low;
  rep.checks.push_back(low);
  CheckResult high = make("bounds.upper", worst_high <= c2, worst_high, c2, "u <= C2 (1 + t)");
  high.location = loc_high;
  rep.checks.push_back(high);

  if (ts.size() >= 2) {
    double mt = 0.0, mu = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      mt += ts[i];
      mu += mins[i];
    }
    mt /= static_cast<double>(ts.size());
    mu /= static_cast<double>(ts.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      num += (ts[i] - mt) * (mins[i] - mu);
      den += (ts[i] - mt) * (ts[i] - mt);
    }
    const double slope = num / den;
    rep.checks.push_back(
        make("bounds.flat_core_slope", slope > 0.0, slope, 0.0, "min_K u >= C_K (1 + t)"));
  } else {
    rep.checks.push_back(info("bounds.flat_core_slope", 0.0, "min_K u >= C_K (1 + t)"));
  }
  rep.series.push_back(std::move(ser));
  return rep;
}

DiagnosticsReport check_aronson_benilan(const SurfaceModel& model, const RunData& run) {
  require_mode(run, FlowMode::raw, "check_aronson_benilan");
  if (run.snapshots.size() < 2)
    throw DiagnosticsError("check_aronson_benilan: needs two snapshots");
  const std::vector<double> t = times_of(run);
  const std::vector<Field> u = fields(run);
  Series ser{"aronson_benilan", {"t1", "t2", "max_excess", "slack"}, {}};
  double worst_excess = -kInf, worst_value = 0.0, worst_tol = 0.0;
  CheckLocation loc;
  long violations = 0;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    const double dt = t[i + 1] - t[i];
    double upp = 0.0;
    for (NodeId n = 0; n < model.size(); ++n)
      upp = std::max({upp, second_derivative(t, u, i, n), second_derivative(t, u, i + 1, n)});
    const double eps = 10.0 * run.newton_tol + 2.0 * dt * upp;
    double pair_excess = -kInf;
    for (NodeId n = 0; n < model.size(); ++n) {
      const double lhs = (u[i + 1][n] - u[i][n]) / dt;
      const double rhs = u[i + 1][n] / t[i + 1];
      const double excess = lhs - rhs;
      pair_excess = std::max(pair_excess, excess);
      if (excess > eps) ++violations;
      if (excess - eps > worst_excess) {
        worst_excess = excess - eps;
        worst_value = excess;
        worst_tol = eps;
        loc = {n, t[i + 1]};
      }
    }
    ser.rows.push_back({t[i], t[i + 1], pair_excess, eps});
  }
  DiagnosticsReport rep;
  CheckResult c = make("aronson_benilan", violations == 0, worst_value, worst_tol,
                       "(u2 - u1)/(t2 - t1) <= u2/t2 + eps");
  c.location = loc;
  rep.checks.push_back(c);
  rep.checks.push_back(info("aronson_benilan.violations", static_cast<double>(violations),
                            "count of node-pairs above slack"));
  rep.series.push_back(std::move(ser));
  return rep;
}

DiagnosticsReport check_rescaled(const SurfaceModel& model, const RunData& run) {
  require_mode(run, FlowMode::rescaled, "check_rescaled");
  const std::vector<double> t = times_of(run);
  const std::vector<Field> u = fields(run);
  const std::vector<Field> r = curvatures(model, run);
  const std::vector<NodeId> core = core_nodes(model);

  Series ser{"rescaled", {"tau", "max_increase", "min_R", "max_core_R"}, {}};
  long mono_viol = 0, floor_viol = 0;
  double mono_worst = -kInf, mono_tol = 0.0, floor_worst = kInf, floor_tol = 0.0;
  CheckLocation mono_loc, floor_loc;
  double max_core_r = -kInf;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double inc = -kInf, rmin = kInf, rcore = -kInf;
    for (NodeId n = 0; n < model.size(); ++n) {
      if (model.nodes[n].tag == NodeTag::truncation) continue;
      const double eps_r = t.size() >= 2 ? local_slack(t, r, std::min(i, t.size() - 2), n,
                                                        run.newton_tol)
                                          : 10.0 * run.newton_tol;
      if (r[i][n] < -1.0 - eps_r) ++floor_viol;
      if (r[i][n] + 1.0 + eps_r < floor_worst + 1.0 + floor_tol) {
        floor_worst = r[i][n];
        floor_tol = eps_r;
        floor_loc = {n, t[i]};
      }
      rmin = std::min(rmin, r[i][n]);
      if (i + 1 < t.size()) {
        const double d = u[i + 1][n] - u[i][n];
        const double eps = local_slack(t, u, i, n, run.newton_tol);
        if (d > eps) ++mono_viol;
        if (d - eps > mono_worst - mono_tol) {
          mono_worst = d;
          mono_tol = eps;
          mono_loc = {n, t[i + 1]};
        }
        inc = std::max(inc, d);
      }
    }
    for (NodeId n : core) rcore = std::max(rcore, r[i][n]);
    max_core_r = std::max(max_core_r, rcore);
    ser.rows.push_back({t[i], i + 1 < t.size() ? inc : 0.0, rmin, rcore});
  }
  DiagnosticsReport rep;
  if (t.size() >= 2) {
    CheckResult m = make("rescaled.monotone", mono_viol == 0, mono_worst, mono_tol,
                         "w(tau2) <= w(tau1) + eps");
    m.location = mono_loc;
    rep.checks.push_back(m);
  }
  CheckResult f = make("rescaled.curvature_floor", floor_viol == 0, floor_worst, -1.0 - floor_tol,
                       "R >= -1 - eps");
  f.location = floor_loc;
  rep.checks.push_back(f);

  // A core point where inf over tau of w stays positive.
  double best = 0.0;
  NodeId best_node = 0;
  for (NodeId n : core) {
    double lo = kInf;
    for (const Field& f2 : u) lo = std::min(lo, f2[n]);
    if (lo > best) {
      best = lo;
      best_node = n;
    }
  }
  CheckResult lb = make("rescaled.pointwise_lower_bound", best > 10.0 * run.newton_tol, best,
                        10.0 * run.newton_tol, "max_x inf_tau w(x, tau) > 0");
  lb.location = CheckLocation{best_node, t.back()};
  rep.checks.push_back(lb);
  rep.checks.push_back(make("rescaled.local_curvature_bound", std::isfinite(max_core_r),
                            max_core_r, kInf, "sup_tau max_core R < infinity"));
  rep.series.push_back(std::move(ser));
  return rep;
}

double harnack_constant(double r1, double r2, double dist, double tau1, double tau2) {
  if (!(tau2 > tau1)) throw DiagnosticsError("harnack: needs tau2 > tau1");
  const double span = tau2 - tau1;
  const double delta = dist * dist / span;
  return (-std::log((r2 + 1.0) / (r1 + 1.0)) - 0.25 * delta) / span;
}

std::vector<HarnackPair> sample_harnack_pairs(const SurfaceModel& model, const RunData& run,
                                              int count, std::uint64_t seed, double tau_min) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < run.snapshots.size(); ++i)
    if (run.snapshots[i].time >= tau_min) eligible.push_back(i);
  if (eligible.size() < 2) throw DiagnosticsError("harnack: fewer than two eligible snapshots");
  const std::vector<Point2> pts = sample_flat_points(model, 2 * count, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<HarnackPair> out;
  for (int k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    std::size_t a = pick(rng), b = pick(rng);
    while (a == b) b = pick(rng);
    if (a > b) std::swap(a, b);
    out.push_back({pts[2 * static_cast<std::size_t>(k)], pts[2 * static_cast<std::size_t>(k) + 1],
                   eligible[a], eligible[b]});
  }
  return out;
}

DiagnosticsReport check_harnack(const SurfaceModel& model, const RunData& run,
                                const std::vector<HarnackPair>& pairs) {
  require_mode(run, FlowMode::rescaled, "check_harnack");
  std::map<std::size_t, Field> curv;
  std::map<std::pair<std::size_t, NodeId>, std::vector<double>> dist_cache;
  auto curvature_at = [&](std::size_t s) -> const Field& {
    auto it = curv.find(s);
    if (it == curv.end()) it = curv.emplace(s, scalar_curvature(model, run.snapshots[s].u)).first;
    return it->second;
  };
  Series ser{"harnack", {"tau1", "tau2", "distance", "constant"}, {}};
  double worst = -kInf;
  CheckLocation loc;
  long skipped_source = 0, skipped_target = 0;
  for (const HarnackPair& p : pairs) {
    if (p.s2 >= run.snapshots.size() || p.s1 >= run.snapshots.size())
      throw DiagnosticsError("harnack: snapshot index out of range");
    const double tau1 = run.snapshots[p.s1].time;
    const double tau2 = run.snapshots[p.s2].time;
    if (!(tau2 > tau1)) throw DiagnosticsError("harnack: needs tau2 > tau1");
    const NodeId n1 = model.nearest_core_node(p.x1);
    const NodeId n2 = model.nearest_core_node(p.x2);
    const double r1 = curvature_at(p.s1)[n1];
    const double r2 = curvature_at(p.s2)[n2];
    if (!(r1 + 1.0 > 0.0)) {
      ++skipped_source;
      continue;
    }
    if (!(r2 + 1.0 > 0.0)) {
      ++skipped_target;
      continue;
    }
    double d = 0.0;
    if (n1 != n2) {
      auto key = std::make_pair(p.s1, n1);
      auto it = dist_cache.find(key);
      if (it == dist_cache.end())
        it = dist_cache.emplace(key, geodesic_distances_from(model, run.snapshots[p.s1].u, n1))
                 .first;
      d = it->second[n2];
    }
    const double c = harnack_constant(r1, r2, d, tau1, tau2);
    ser.rows.push_back({tau1, tau2, d, c});
    if (c > worst) {
      worst = c;
      loc = {n2, tau2};
    }
  }
  DiagnosticsReport rep;
  CheckResult c = make("harnack.max_constant", std::isfinite(worst), worst, kInf,
                       "R2 + 1 >= exp(-D/4 - C (tau2 - tau1)) (R1 + 1)");
  if (std::isfinite(worst)) c.location = loc;
  rep.checks.push_back(c);
  rep.checks.push_back(info("harnack.skipped_source", static_cast<double>(skipped_source),
                            "pairs with R1 + 1 <= 0"));
  rep.checks.push_back(info("harnack.skipped_target", static_cast<double>(skipped_target),
                            "pairs with R2 + 1 <= 0"));
  rep.series.push_back(std::move(ser));
  return rep;
}

double core_area(const SurfaceModel& model, const Field& u) {
  double a = 0.0;
  for (NodeId n = 0; n < model.size(); ++n)
    if (model.in_core(n)) a += u[n] * model.area_weights[n];
  return a;
}

double kappa_ratio(const SurfaceModel& model, const Field& u, double radius, int samples,
                   std::uint64_t seed) {
  const std::vector<Point2> pts = sample_flat_points(model, samples, seed);
  double worst = kInf;
  for (const Point2& z : pts) {
    const NodeId c = model.nearest_core_node(z);
    const std::vector<double> d = geodesic_distances_from(model, u, c);
    double a = 0.0;
    for (NodeId n = 0; n < model.size(); ++n)
      if (d[n] < radius) a += u[n] * model.area_weights[n];
    worst = std::min(worst, a / (radius * radius));
  }
  return worst;
}

DiagnosticsReport check_convergence(const SurfaceModel& model, const RunData& run,
                                    const Field& oracle, const ConvergenceOptions& opt) {
  require_mode(run, FlowMode::rescaled, "check_convergence");
  if (oracle.size() != model.size()) throw DiagnosticsError("check_convergence: oracle missing");
  const std::vector<NodeId> core = core_nodes(model);
  const std::vector<NodeId> flat = flat_nodes(model);
  auto rel_error = [&](const Field& u, const std::vector<NodeId>& nodes) {
    double num = 0.0, den = 0.0;
    for (NodeId n : nodes) {
      num = std::max(num, std::abs(u[n] - oracle[n]));
      den = std::max(den, std::abs(oracle[n]));
    }
    return num / den;
  };
  auto curv_error = [&](const Field& r, const std::vector<NodeId>& nodes) {
    double c = 0.0;
    for (NodeId n : nodes) c = std::max(c, std::abs(r[n] + 1.0));
    return c;
  };
  const double target_area = kFourPi * static_cast<double>(model.ends.size());

  Series ser{"convergence",
             {"tau", "error_core", "curvature_core", "error_flat", "curvature_flat", "kappa",
              "core_area_ratio"},
             {}};
  std::vector<double> taus, errs, curvs, errs_flat, curvs_flat, kappas;
  for (const ConformalState& s : run.snapshots) {
    const Field r = scalar_curvature(model, s.u);
    taus.push_back(s.time);
    errs.push_back(rel_error(s.u, core));
    curvs.push_back(curv_error(r, core));
    errs_flat.push_back(rel_error(s.u, flat));
    curvs_flat.push_back(curv_error(r, flat));
    kappas.push_back(kappa_ratio(model, s.u, opt.ball_radius, opt.ball_samples, opt.seed));
    ser.rows.push_back({s.time, errs.back(), curvs.back(), errs_flat.back(), curvs_flat.back(),
                        kappas.back(), core_area(model, s.u) / target_area});
  }

  auto monotone = [&](const std::vector<double>& q, double& worst_rise) {
    worst_rise = -kInf;
    bool ok = true;
    for (std::size_t i = 0; i + 1 < q.size(); ++i) {
      if (taus[i] < opt.monotone_from - 1e-12) continue;
      const double rise = q[i + 1] - q[i];
      worst_rise = std::max(worst_rise, rise);
      if (rise > 10.0 * run.newton_tol) ok = false;
    }
    if (!std::isfinite(worst_rise)) worst_rise = 0.0;
    return ok;
  };

  DiagnosticsReport rep;
  const double tau_end = taus.back();
  auto at_end = [&](const std::string& name, double v, double tol, const char* st) {
    CheckResult c = make(name, v <= tol, v, tol, st);
    c.location = CheckLocation{0, tau_end};
    rep.checks.push_back(c);
  };
  at_end("convergence.error_final", errs.back(), opt.error_threshold,
         "|w - U|_core / |U|_core at tau_end");
  at_end("convergence.curvature_final", curvs.back(), opt.curvature_threshold,
         "|R + 1|_core at tau_end");
  double rise = 0.0;
  bool ok = monotone(errs, rise);
  rep.checks.push_back(make("convergence.error_monotone", ok, rise, 10.0 * run.newton_tol,
                            "error nonincreasing in tau"));
  ok = monotone(curvs, rise);
  rep.checks.push_back(make("convergence.curvature_monotone", ok, rise,
                            10.0 * run.newton_tol, "curvature error nonincreasing in tau"));
  rep.checks.push_back(info("convergence.error_final_flat", errs_flat.back(),
                            "|w - U| / |U| on the flat core at tau_end"));
  rep.checks.push_back(info("convergence.curvature_final_flat", curvs_flat.back(),
                            "|R + 1| on the flat core at tau_end"));

  const double kappa_floor = 0.25 * kappas.front();
  const double kappa_min = *std::min_element(kappas.begin(), kappas.end());
  rep.checks.push_back(make("convergence.kappa_noncollapsed", kappa_min >= kappa_floor,
                            kappa_min, kappa_floor, "Area(B(x, r)) / r^2 >= kappa'"));
  const double ratio = core_area(model, run.snapshots.back().u) / target_area;
  rep.checks.push_back(make("convergence.core_area", ratio >= opt.area_low && ratio <= opt.area_high,
                            ratio, opt.area_high, "core area / (4 pi k) in [low, high]"));
  rep.series.push_back(std::move(ser));
  return rep;
}

DiagnosticsReport check_curvature_decay(const SurfaceModel& model, const RunData& run,
                                        const CurvatureDecayOptions& opt) {
  require_mode(run, FlowMode::raw, "check_curvature_decay");
  const double rho_cone = -std::log(model.r_in);
  Series ser{"curvature_decay", {"time", "end", "inner_envelope", "outer_envelope", "max_abs_R"},
             {}};
  double worst = 0.0;
  CheckLocation loc;
  bool ok = true;
  for (const ConformalState& s : run.snapshots) {
    const Field r = scalar_curvature(model, s.u);
    for (const ChartGrid& g : model.charts) {
      if (g.kind != ChartKind::cylinder_end) continue;
      const ConeEnd& end = model.ends[static_cast<std::size_t>(g.end_index)];
      std::vector<double> rho, env;
      double max_abs = 0.0;
      for (int i = 0; i < g.resolution[0]; ++i) {
        const double x = g.coordinate(i, 0).x;
        if (x < std::max(rho_cone, end.rho_min)) continue;
        double row = 0.0;
        bool usable = true;
        for (int j = 0; j < g.resolution[1]; ++j) {
          const auto n = static_cast<NodeId>(g.at(i, j));
          if (model.nodes[n].tag != NodeTag::interior) usable = false;
          row = std::max(row, std::abs(r[n]));
        }
        if (!usable) continue;
        max_abs = std::max(max_abs, row);
        rho.push_back(x);
        env.push_back(row * std::exp((2.0 + opt.order_tau) * end.angle_alpha * x));
      }
      if (env.size() < 4) continue;
      const std::size_t half = env.size() / 2;
      const double inner = *std::max_element(env.begin(), env.begin() + static_cast<long>(half));
      const double outer = *std::max_element(env.begin() + static_cast<long>(half), env.end());
      ser.rows.push_back({s.time, static_cast<double>(g.end_index), inner, outer, max_abs});
      const double growth = inner > 0.0 ? outer / inner : (outer > 0.0 ? kInf : 0.0);
      // Envelopes at roundoff level carry no information.
      const bool noise = std::max(inner, outer) * std::exp(-(2.0 + opt.order_tau) * end.angle_alpha * rho.back()) < 1e-12 && max_abs < 1e-10;
      if (!noise && growth > opt.growth_factor) ok = false;
      if (!noise && growth > worst) {
        worst = growth;
        loc = {static_cast<NodeId>(g.at(0, 0)), s.time};
      }
    }
  }
  DiagnosticsReport rep;
  CheckResult c = make("curvature_decay.envelope", ok, worst, opt.growth_factor,
                       "sup_theta |R| e^{(2 + tau) alpha rho} bounded in rho");
  if (worst > 0.0) c.location = loc;
  rep.checks.push_back(c);
  rep.series.push_back(std::move(ser));
  return rep;
}

std::vector<double> potential_identity_deviation(const SurfaceModel& model, const RunData& run) {
  if (run.potentials.size() != run.snapshots.size() || run.f0.size() != model.size())
    throw DiagnosticsError("potential identity: potentials were not stored");
  std::vector<double> out;
  for (std::size_t i = 0; i < run.snapshots.size(); ++i) {
    double d = 0.0;
    for (NodeId n = 0; n < model.size(); ++n)
      d = std::max(d, std::abs(std::log(run.snapshots[i].u[n]) -
                               (run.f0[n] - run.potentials[i][n])));
    out.push_back(d);
  }
  return out;
}

DiagnosticsReport check_sign_and_conservation(const SurfaceModel& model, const RunData& run,
                                              const SignConservationOptions& opt) {
  require_mode(run, FlowMode::raw, "check_sign_and_conservation");
  const std::vector<double> t = times_of(run);
  const std::vector<Field> r = curvatures(model, run);
  DiagnosticsReport rep;

  Series ser{"sign_conservation", {"time", "max_R", "total_curvature"}, {}};
  std::vector<double> totals;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double tot = 0.0;
    for (NodeId n = 0; n < model.size(); ++n)
      tot += r[i][n] * run.snapshots[i].u[n] * model.area_weights[n];
    totals.push_back(tot);
    ser.rows.push_back({t[i], *std::max_element(r[i].begin(), r[i].end()), tot});
  }

  if (run.gauged) {
    long viol = 0;
    double worst = -kInf, worst_tol = 0.0;
    CheckLocation loc;
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (NodeId n = 0; n < model.size(); ++n) {
        const double eps = t.size() >= 2
                               ? local_slack(t, r, std::min(i, t.size() - 2), n, run.newton_tol)
                               : 10.0 * run.newton_tol;
        if (r[i][n] > eps) ++viol;
        if (r[i][n] - eps > worst - worst_tol) {
          worst = r[i][n];
          worst_tol = eps;
          loc = {n, t[i]};
        }
      }
    }
    CheckResult c = make("sign.max_R", viol == 0, worst, worst_tol, "R <= eps");
    c.location = loc;
    rep.checks.push_back(c);
  } else {
    rep.checks.push_back(info("sign.max_R", 0.0, "skipped: initial data not gauged"));
  }

  double drift = 0.0;
  CheckLocation dloc;
  const double base = std::abs(totals.front());
  for (std::size_t i = 0; i < totals.size(); ++i) {
    const double d = base > 0.0 ? std::abs(totals[i] - totals.front()) / base
                                : std::abs(totals[i] - totals.front());
    if (d > drift) {
      drift = d;
      dloc = {0, t[i]};
    }
  }
  CheckResult cons = make("conservation.total_curvature", drift <= opt.conservation_tol, drift,
                          opt.conservation_tol, "|sum R dA(t) - sum R dA(0)| / |sum R dA(0)|");
  cons.location = dloc;
  rep.checks.push_back(cons);

  if (!run.potentials.empty()) {
    if (run.potentials.size() != t.size())
      throw DiagnosticsError("potentials do not match snapshots");
    Series hs{"potential", {"time", "max_h", "grad_norm_max", "identity_deviation"}, {}};
    const std::vector<double> dev = potential_identity_deviation(model, run);
    std::vector<double> max_h;
    for (std::size_t i = 0; i < t.size(); ++i) {
      Field h;
      double gmax = 0.0;
      potential_fields(model, run.potentials[i], run.snapshots[i].u, h, gmax);
      double mh = -kInf;
      for (NodeId n = 0; n < model.size(); ++n)
        if (model.nodes[n].tag != NodeTag::truncation) mh = std::max(mh, h[n]);
      max_h.push_back(mh);
      hs.rows.push_back({t[i], mh, gmax, dev[i]});
    }
    double rise = -kInf, rise_tol = 0.0;
    CheckLocation hloc;
    bool ok = true;
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      const double eps = series_slack(t, max_h, i, run.newton_tol);
      const double d = max_h[i + 1] - max_h[i];
      if (d > eps) ok = false;
      if (d - eps > rise - rise_tol) {
        rise = d;
        rise_tol = eps;
        hloc = {0, t[i + 1]};
      }
    }
    CheckResult hm = make("potential.h_monotone", ok, rise, rise_tol, "max h nonincreasing");
    hm.location = hloc;
    rep.checks.push_back(hm);

    double worst = -kInf;
    CheckLocation rloc;
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (NodeId n = 0; n < model.size(); ++n) {
        if (r[i][n] - max_h.front() > worst) {
          worst = r[i][n] - max_h.front();
          rloc = {n, t[i]};
        }
      }
    }
    const double eps = 10.0 * run.newton_tol;
    CheckResult rb = make("potential.curvature_bound", worst <= eps, worst, eps,
                          "R(t) - max h(0) <= eps");
    rb.location = rloc;
    rep.checks.push_back(rb);
    rep.checks.push_back(info("potential.identity_max", *std::max_element(dev.begin(), dev.end()),
                              "sup |log u - (f0 - f)|"));
    rep.series.push_back(std::move(hs));
  }
  rep.series.push_back(std::move(ser));
  return rep;
}

}  // namespace conic
