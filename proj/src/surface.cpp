#include "conic/surface.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <utility>

namespace conic {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr NodeId kNone = std::numeric_limits<NodeId>::max();

// Quintic smoothstep on [0,1], C2 at both ends.
double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

double wrap_unit(double x) {
  x -= std::floor(x);
  return x >= 1.0 ? 0.0 : x;
}

double wrap_angle(double t) {
  t = std::fmod(t, kTwoPi);
  return t < 0.0 ? t + kTwoPi : t;
}

// Displacement z - p on the unit torus, nearest deck translate.
Point2 torus_delta(Point2 z, Point2 p) {
  double dx = z.x - p.x;
  double dy = z.y - p.y;
  dx -= std::round(dx);
  dy -= std::round(dy);
  return {dx, dy};
}

struct EndShape {
  double alpha;
  double amp;
  double tau;
  double r_in;
  double r_out;

  double cutoff(double r) const { return smoothstep((r_out - r) / (r_out - r_in)); }

  // Contribution of this end to v0 at distance r = e^{-rho}, angle theta.
  double core_term(double rho, double theta) const {
    const double r = std::exp(-rho);
    if (r >= r_out) return 0.0;
    const double bump = r <= r_in ? 1.0 : cutoff(r);
    return bump * ((alpha + 1.0) * rho + amp * std::exp(-alpha * tau * rho) * std::cos(theta));
  }
};

EndShape shape_of(const SurfaceModel& m, int e) {
  const ConeEnd& end = m.ends[static_cast<std::size_t>(e)];
  return {end.angle_alpha, end.perturbation_amp, end.order_tau, m.r_in, m.r_out};
}

double core_log_factor(const SurfaceModel& m, Point2 z) {
  double v = 0.0;
  for (std::size_t e = 0; e < m.ends.size(); ++e) {
    const Point2 d = torus_delta(z, m.ends[e].puncture);
    const double r = std::hypot(d.x, d.y);
    if (r >= m.r_out) continue;
    v += shape_of(m, static_cast<int>(e)).core_term(-std::log(r), std::atan2(d.y, d.x));
  }
  return v;
}

double cylinder_log_factor(const SurfaceModel& m, int e, Point2 c) {
  const double rho = c.x;
  const double theta = c.y;
  const ConeEnd& end = m.ends[static_cast<std::size_t>(e)];
  if (m.exact_fixture) {
    return end.angle_alpha * rho +
           end.perturbation_amp * std::exp(-end.angle_alpha * end.order_tau * rho) *
               std::cos(theta);
  }
  // |dz|^2 = e^{-2 rho}(d rho^2 + d theta^2)
  if (std::exp(-rho) <= m.r_in) return shape_of(m, e).core_term(rho, theta) - rho;
  const Point2 z{end.puncture.x + std::exp(-rho) * std::cos(theta),
                 end.puncture.y + std::exp(-rho) * std::sin(theta)};
  return core_log_factor(m, z) - rho;
}

// Bilinear weights of coordinate c on chart grid; returns false when a source
// cell is missing or not interior.
bool bilinear(const SurfaceModel& m, const ChartGrid& g, Point2 c, InterpStencil& out) {
  const double fx = (c.x - g.origin[0]) / g.spacing[0];
  const double fy = (c.y - g.origin[1]) / g.spacing[1];
  const int i0 = static_cast<int>(std::floor(fx));
  const int j0 = static_cast<int>(std::floor(fy));
  const double tx = fx - i0;
  const double ty = fy - j0;
  const std::array<std::pair<int, int>, 4> offs{{{0, 0}, {1, 0}, {0, 1}, {1, 1}}};
  const std::array<double, 4> w{(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
  for (std::size_t k = 0; k < 4; ++k) {
    const std::int64_t id = g.at(i0 + offs[k].first, j0 + offs[k].second);
    if (id < 0) return false;
    if (m.nodes[static_cast<NodeId>(id)].tag != NodeTag::interior) return false;
    out.source[k] = static_cast<NodeId>(id);
    out.weight[k] = w[k];
  }
  out.partner_coord = c;
  return true;
}

NodeId add_chart_nodes(SurfaceModel& m, std::uint32_t chart_id) {
  ChartGrid& g = m.charts[chart_id];
  g.first = m.nodes.size();
  for (int i = 0; i < g.resolution[0]; ++i) {
    for (int j = 0; j < g.resolution[1]; ++j) {
      auto& slot = g.grid_to_node[static_cast<std::size_t>(i) * g.resolution[1] + j];
      if (slot < 0) continue;
      slot = static_cast<std::int64_t>(m.nodes.size());
      NodeInfo info;
      info.chart = chart_id;
      info.i = i;
      info.j = j;
      info.coord = g.coordinate(i, j);
      m.nodes.push_back(info);
    }
  }
  g.count = m.nodes.size() - g.first;
  return g.count;
}

// Fills v, e^{-2v}, R0 and area weights; overlap R0 is interpolated.
void finish_fields(SurfaceModel& m, double r_a, double r_b) {
  const std::size_t n = m.size();
  m.background_log_factor.assign(n, 0.0);
  m.laplacian_scale.assign(n, 1.0);
  m.background_curvature.assign(n, 0.0);
  m.area_weights.assign(n, 0.0);
  for (NodeId k = 0; k < n; ++k) {
    const double v = m.log_factor_at(m.nodes[k].chart, m.nodes[k].coord);
    m.background_log_factor[k] = v;
    m.laplacian_scale[k] = std::exp(-2.0 * v);
  }
  for (NodeId k = 0; k < n; ++k) {
    if (m.nodes[k].tag == NodeTag::overlap) continue;
    const FlatStencil st = m.flat_stencil(k);
    double lap = 0.0;
    for (int s = 0; s < st.size; ++s)
      lap += st.entries[static_cast<std::size_t>(s)].coeff *
             m.background_log_factor[st.entries[static_cast<std::size_t>(s)].node];
    // R = -2 e^{-2v} Lap_flat v
    m.background_curvature[k] = -2.0 * m.laplacian_scale[k] * lap;
  }
  chart_sync(m, m.background_curvature);

  for (NodeId k = 0; k < n; ++k) {
    const NodeInfo& info = m.nodes[k];
    const ChartGrid& g = m.charts[info.chart];
    double cell = g.spacing[0] * g.spacing[1];
    if (g.kind == ChartKind::cylinder_end && info.tag == NodeTag::truncation) cell *= 0.5;
    double pou = 1.0;
    if (!m.exact_fixture && !m.ends.empty()) {
      // cylinder share: 1 inside r_a, 0 outside r_b
      double r = 0.0;
      if (g.kind == ChartKind::cylinder_end) {
        r = std::exp(-info.coord.x);
      } else {
        r = std::numeric_limits<double>::infinity();
        for (const ConeEnd& e : m.ends) {
          const Point2 d = torus_delta(info.coord, e.puncture);
          r = std::min(r, std::hypot(d.x, d.y));
        }
      }
      const double cyl = 1.0 - smoothstep((r - r_a) / (r_b - r_a));
      pou = g.kind == ChartKind::cylinder_end ? cyl : 1.0 - cyl;
    }
    m.area_weights[k] = std::exp(2.0 * m.background_log_factor[k]) * cell * pou;
  }
}

}  // namespace

std::int64_t ChartGrid::at(int i, int j) const {
  if (periodic[0]) {
    i %= resolution[0];
    if (i < 0) i += resolution[0];
  } else if (i < 0 || i >= resolution[0]) {
    return -1;
  }
  if (periodic[1]) {
    j %= resolution[1];
    if (j < 0) j += resolution[1];
  } else if (j < 0 || j >= resolution[1]) {
    return -1;
  }
  return grid_to_node[static_cast<std::size_t>(i) * resolution[1] + j];
}

FlatStencil SurfaceModel::flat_stencil(NodeId n) const {
  FlatStencil st;
  const NodeInfo& info = nodes[n];
  const ChartGrid& g = charts[info.chart];
  double diag = 0.0;
  auto push = [&st](NodeId id, double c) {
    st.entries[static_cast<std::size_t>(st.size++)] = {id, c};
  };
  for (int dir = 0; dir < 2; ++dir) {
    const int di = dir == 0 ? 1 : 0;
    const int dj = dir == 1 ? 1 : 0;
    const std::int64_t plus = g.at(info.i + di, info.j + dj);
    const std::int64_t minus = g.at(info.i - di, info.j - dj);
    if (plus < 0 || minus < 0) continue;
    const double inv = 1.0 / (g.spacing[static_cast<std::size_t>(dir)] *
                              g.spacing[static_cast<std::size_t>(dir)]);
    push(static_cast<NodeId>(plus), inv);
    push(static_cast<NodeId>(minus), inv);
    diag -= 2.0 * inv;
  }
  push(n, diag);
  return st;
}

double SurfaceModel::log_factor_at(std::uint32_t chart, Point2 c) const {
  const ChartGrid& g = charts[chart];
  if (g.kind == ChartKind::torus_core) return core_log_factor(*this, c);
  return cylinder_log_factor(*this, g.end_index, c);
}

double SurfaceModel::core_spacing() const { return charts.front().spacing[0]; }

bool SurfaceModel::in_core(NodeId n) const {
  const NodeInfo& info = nodes[n];
  const ChartGrid& g = charts[info.chart];
  if (g.kind == ChartKind::torus_core) return true;
  if (info.tag == NodeTag::truncation) return false;
  if (exact_fixture) return true;
  return info.coord.x <= 0.5 * ends[static_cast<std::size_t>(g.end_index)].rho_max + 1e-12;
}

bool SurfaceModel::in_compact(NodeId n, double rho_cap) const {
  const NodeInfo& info = nodes[n];
  const ChartGrid& g = charts[info.chart];
  if (g.kind == ChartKind::torus_core) return true;
  if (info.tag == NodeTag::truncation) return false;
  return info.coord.x <= rho_cap + 1e-12;
}

NodeId SurfaceModel::nearest_core_node(Point2 z) const {
  const ChartGrid& g = charts.front();
  if (g.kind != ChartKind::torus_core) throw ModelError("model has no core chart");
  const int ci = static_cast<int>(std::lround(wrap_unit(z.x) / g.spacing[0]));
  const int cj = static_cast<int>(std::lround(wrap_unit(z.y) / g.spacing[1]));
  for (int radius = 0; radius < g.resolution[0]; ++radius) {
    double best = std::numeric_limits<double>::infinity();
    NodeId best_id = kNone;
    for (int di = -radius; di <= radius; ++di) {
      for (int dj = -radius; dj <= radius; ++dj) {
        const std::int64_t id = g.at(ci + di, cj + dj);
        if (id < 0) continue;
        const double d = torus_distance(nodes[static_cast<NodeId>(id)].coord, z);
        if (d < best) {
          best = d;
          best_id = static_cast<NodeId>(id);
        }
      }
    }
    if (best_id != kNone) return best_id;
  }
  throw ModelError("core chart has no active nodes");
}

SurfaceModel SurfaceModel::with_background_curvature(Field r0) const {
  if (r0.size() != size()) throw ModelError("background curvature size mismatch");
  SurfaceModel copy = *this;
  copy.background_curvature = std::move(r0);
  return copy;
}

double torus_distance(Point2 a, Point2 b) {
  const Point2 d = torus_delta(a, b);
  return std::hypot(d.x, d.y);
}

SurfaceModel build_model(const ModelDescription& desc) {
  const int k = desc.punctures;
  if (k < 1) throw ModelError("punctures: need k >= 1 so that chi(M) = -k < 0");
  std::vector<double> alphas = desc.alphas;
  if (alphas.size() == 1 && k > 1) alphas.assign(static_cast<std::size_t>(k), alphas.front());
  if (alphas.size() != static_cast<std::size_t>(k))
    throw ModelError("alphas: expected one cone angle per puncture");
  for (double a : alphas)
    if (!(a > 0.0)) throw ModelError("alpha: cone angles must be positive");
  if (desc.core_resolution < 16) throw ModelError("resolution: need at least 16 nodes");
  const int n_theta = desc.theta_resolution > 0 ? desc.theta_resolution : desc.core_resolution;
  if (n_theta < 16) throw ModelError("theta_resolution: need at least 16 nodes");
  if (!(desc.r_cut > 0.0 && desc.r_cut < desc.r_in && desc.r_in < desc.r_out &&
        desc.r_out < 0.5))
    throw ModelError("radii: need 0 < r_cut < r_in < r_out < 0.5");
  if (!(desc.perturbation_tau > 0.0)) throw ModelError("perturbation_tau must be positive");

  std::vector<Point2> pos = desc.positions;
  if (pos.empty()) {
    if (k == 1) {
      pos = {{0.5, 0.5}};
    } else if (k == 2) {
      pos = {{0.25, 0.25}, {0.75, 0.75}};
    } else if (k <= 4) {
      const std::vector<Point2> grid{{0.25, 0.25}, {0.75, 0.75}, {0.75, 0.25}, {0.25, 0.75}};
      pos.assign(grid.begin(), grid.begin() + k);
    } else {
      throw ModelError("positions: more than 4 punctures need explicit positions");
    }
  }
  if (pos.size() != static_cast<std::size_t>(k))
    throw ModelError("positions: expected one position per puncture");
  for (std::size_t a = 0; a < pos.size(); ++a)
    for (std::size_t b = a + 1; b < pos.size(); ++b)
      if (torus_distance(pos[a], pos[b]) < 2.0 * desc.r_out)
        throw ModelError("positions: cutoff annuli of distinct punctures overlap");

  SurfaceModel m;
  m.euler_char = -k;
  m.r_in = desc.r_in;
  m.r_out = desc.r_out;
  m.r_cut = desc.r_cut;
  const double rho_min = -std::log(desc.r_out);
  const double rho_cone = -std::log(desc.r_in);
  for (int e = 0; e < k; ++e) {
    ConeEnd end;
    end.angle_alpha = alphas[static_cast<std::size_t>(e)];
    end.order_tau = desc.perturbation_tau;
    end.perturbation_amp = desc.perturbation_amp;
    end.rho_min = rho_min;
    end.rho_max = desc.rho_max > 0.0 ? desc.rho_max : 12.0 / end.angle_alpha;
    end.puncture = {wrap_unit(pos[static_cast<std::size_t>(e)].x),
                    wrap_unit(pos[static_cast<std::size_t>(e)].y)};
    if (end.rho_max <= rho_cone)
      throw ModelError("rho_max: truncation must lie beyond the cutoff radius");
    m.ends.push_back(end);
  }

  // Core chart.
  const int nc = desc.core_resolution;
  const double h = 1.0 / nc;
  {
    ChartGrid g;
    g.kind = ChartKind::torus_core;
    g.resolution = {nc, nc};
    g.spacing = {h, h};
    g.periodic = {true, true};
    g.grid_to_node.assign(static_cast<std::size_t>(nc) * nc, 0);
    for (int i = 0; i < nc; ++i)
      for (int j = 0; j < nc; ++j)
        for (const ConeEnd& e : m.ends)
          if (torus_distance(g.coordinate(i, j), e.puncture) < desc.r_cut)
            g.grid_to_node[static_cast<std::size_t>(i) * nc + j] = -1;
    m.charts.push_back(std::move(g));
  }
  // One cylinder per end; d_rho close to d_theta.
  const double dtheta = kTwoPi / n_theta;
  for (int e = 0; e < k; ++e) {
    const ConeEnd& end = m.ends[static_cast<std::size_t>(e)];
    const int n_rho = static_cast<int>(std::ceil((end.rho_max - end.rho_min) / dtheta)) + 1;
    ChartGrid g;
    g.kind = ChartKind::cylinder_end;
    g.end_index = e;
    g.resolution = {n_rho, n_theta};
    g.spacing = {(end.rho_max - end.rho_min) / (n_rho - 1), dtheta};
    g.origin = {end.rho_min, 0.0};
    g.periodic = {false, true};
    g.grid_to_node.assign(static_cast<std::size_t>(n_rho) * n_theta, 0);
    m.charts.push_back(std::move(g));
  }
  for (std::uint32_t c = 0; c < m.charts.size(); ++c) add_chart_nodes(m, c);

  // Tags.
  const ChartGrid& core = m.charts.front();
  for (NodeId n = core.first; n < core.first + core.count; ++n) {
    const NodeInfo& info = m.nodes[n];
    const bool fringe = core.at(info.i + 1, info.j) < 0 || core.at(info.i - 1, info.j) < 0 ||
                        core.at(info.i, info.j + 1) < 0 || core.at(info.i, info.j - 1) < 0;
    m.nodes[n].tag = fringe ? NodeTag::overlap : NodeTag::interior;
  }
  for (std::size_t c = 1; c < m.charts.size(); ++c) {
    const ChartGrid& g = m.charts[c];
    for (NodeId n = g.first; n < g.first + g.count; ++n) {
      if (m.nodes[n].i == 0)
        m.nodes[n].tag = NodeTag::overlap;
      else if (m.nodes[n].i == g.resolution[0] - 1)
        m.nodes[n].tag = NodeTag::truncation;
    }
  }

  // Interpolation stencils.
  for (NodeId n = 0; n < m.size(); ++n) {
    NodeInfo& info = m.nodes[n];
    if (info.tag != NodeTag::overlap) continue;
    InterpStencil st;
    bool ok = false;
    if (m.charts[info.chart].kind == ChartKind::torus_core) {
      for (std::size_t e = 0; e < m.ends.size() && !ok; ++e) {
        const Point2 d = torus_delta(info.coord, m.ends[e].puncture);
        const double r = std::hypot(d.x, d.y);
        if (r >= desc.r_out) continue;
        const Point2 c{-std::log(r), wrap_angle(std::atan2(d.y, d.x))};
        ok = bilinear(m, m.charts[e + 1], c, st);
      }
    } else {
      const ConeEnd& end = m.ends[static_cast<std::size_t>(m.charts[info.chart].end_index)];
      const double r = std::exp(-info.coord.x);
      const Point2 z{wrap_unit(end.puncture.x + r * std::cos(info.coord.y)),
                     wrap_unit(end.puncture.y + r * std::sin(info.coord.y))};
      ok = bilinear(m, core, z, st);
    }
    if (!ok) throw ModelError("overlap node falls outside the partner chart interior");
    info.interp = static_cast<std::int32_t>(m.interp.size());
    m.interp.push_back(st);
  }

  const double r_a = desc.r_cut + 0.2 * (desc.r_in - desc.r_cut);
  const double r_b = desc.r_cut + 0.8 * (desc.r_in - desc.r_cut);
  finish_fields(m, r_a, r_b);

  double total = 0.0;
  for (NodeId n = 0; n < m.size(); ++n) total += m.background_curvature[n] * m.area_weights[n];
  double alpha_sum = 0.0;
  for (double a : alphas) alpha_sum += a;
  m.gauss_bonnet_defect = total - 4.0 * std::numbers::pi * (m.euler_char - alpha_sum);
  return m;
}

SurfaceModel build_exact_cone_fixture(double alpha, int n_theta, double rho_min,
                                      double rho_max) {
  if (!(alpha > 0.0)) throw ModelError("alpha: cone angles must be positive");
  if (n_theta < 16) throw ModelError("theta_resolution: need at least 16 nodes");
  if (!(rho_max > rho_min)) throw ModelError("rho range: need rho_min < rho_max");
  SurfaceModel m;
  m.exact_fixture = true;
  m.euler_char = 0;
  ConeEnd end;
  end.angle_alpha = alpha;
  end.rho_min = rho_min;
  end.rho_max = rho_max;
  m.ends.push_back(end);
  const double dtheta = kTwoPi / n_theta;
  const int n_rho = static_cast<int>(std::ceil((rho_max - rho_min) / dtheta)) + 1;
  ChartGrid g;
  g.kind = ChartKind::cylinder_end;
  g.end_index = 0;
  g.resolution = {n_rho, n_theta};
  g.spacing = {(rho_max - rho_min) / (n_rho - 1), dtheta};
  g.origin = {rho_min, 0.0};
  g.periodic = {false, true};
  g.grid_to_node.assign(static_cast<std::size_t>(n_rho) * n_theta, 0);
  m.charts.push_back(std::move(g));
  add_chart_nodes(m, 0);
  for (NodeInfo& info : m.nodes)
    if (info.i == 0 || info.i == n_rho - 1) info.tag = NodeTag::truncation;
  finish_fields(m, 0.0, 1.0);
  return m;
}

SurfaceModel build_flat_torus_fixture(int resolution) {
  if (resolution < 16) throw ModelError("resolution: need at least 16 nodes");
  SurfaceModel m;
  m.exact_fixture = true;
  m.euler_char = 0;
  ChartGrid g;
  g.kind = ChartKind::torus_core;
  g.resolution = {resolution, resolution};
  g.spacing = {1.0 / resolution, 1.0 / resolution};
  g.periodic = {true, true};
  g.grid_to_node.assign(static_cast<std::size_t>(resolution) * resolution, 0);
  m.charts.push_back(std::move(g));
  add_chart_nodes(m, 0);
  finish_fields(m, 0.0, 1.0);
  return m;
}

void chart_sync(const SurfaceModel& model, std::span<double> field) {
  if (field.size() != model.size()) throw ModelError("chart_sync: field size mismatch");
  for (NodeId n = 0; n < model.size(); ++n) {
    const NodeInfo& info = model.nodes[n];
    if (info.tag != NodeTag::overlap) continue;
    const InterpStencil& st = model.interp[static_cast<std::size_t>(info.interp)];
    double v = 0.0;
    for (std::size_t k = 0; k < 4; ++k) v += st.weight[k] * field[st.source[k]];
    field[n] = v;
  }
}

std::vector<Field> chart_sync(const SurfaceModel& model, std::vector<Field> per_chart) {
  if (per_chart.size() != model.charts.size())
    throw ModelError("chart_sync: expected one block per chart");
  Field global(model.size());
  for (std::size_t c = 0; c < model.charts.size(); ++c) {
    const ChartGrid& g = model.charts[c];
    if (per_chart[c].size() != g.count)
      throw ModelError("chart_sync: chart " + std::to_string(c) + " has no data");
    std::copy(per_chart[c].begin(), per_chart[c].end(),
              global.begin() + static_cast<std::ptrdiff_t>(g.first));
  }
  chart_sync(model, global);
  for (std::size_t c = 0; c < model.charts.size(); ++c) {
    const ChartGrid& g = model.charts[c];
    std::copy(global.begin() + static_cast<std::ptrdiff_t>(g.first),
              global.begin() + static_cast<std::ptrdiff_t>(g.first + g.count),
              per_chart[c].begin());
  }
  return per_chart;
}

double sync_mismatch(const SurfaceModel& model, std::span<const double> field) {
  double worst = 0.0;
  for (NodeId n = 0; n < model.size(); ++n) {
    const NodeInfo& info = model.nodes[n];
    if (info.tag != NodeTag::overlap) continue;
    const InterpStencil& st = model.interp[static_cast<std::size_t>(info.interp)];
    double v = 0.0;
    for (std::size_t k = 0; k < 4; ++k) v += st.weight[k] * field[st.source[k]];
    worst = std::max(worst, std::abs(field[n] - v) / (1.0 + std::abs(field[n])));
  }
  return worst;
}

namespace detail {

Field apply_laplacian(const SurfaceModel& model, std::span<const double> field) {
  Field out(model.size(), 0.0);
  for (NodeId n = 0; n < model.size(); ++n) {
    if (model.nodes[n].tag == NodeTag::overlap) continue;
    const FlatStencil st = model.flat_stencil(n);
    double lap = 0.0;
    for (int s = 0; s < st.size; ++s) {
      const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
      lap += e.coeff * field[e.node];
    }
    out[n] = model.laplacian_scale[n] * lap;
  }
  chart_sync(model, out);
  return out;
}

}  // namespace detail

Field laplacian_apply(const SurfaceModel& model, std::span<const double> field) {
  if (field.size() != model.size()) throw ModelError("laplacian_apply: field size mismatch");
  for (double v : field)
    if (!std::isfinite(v)) throw ModelError("laplacian_apply: non-finite field value");
  if (sync_mismatch(model, field) > 1e-8)
    throw ModelError("laplacian_apply: overlap data not synchronized");
  return detail::apply_laplacian(model, field);
}

Field scalar_curvature(const SurfaceModel& model, std::span<const double> u) {
  if (u.size() != model.size()) throw ModelError("scalar_curvature: field size mismatch");
  Field num(model.size(), 0.0);
  for (NodeId n = 0; n < model.size(); ++n)
    if (!(u[n] > 0.0)) throw ModelError("scalar_curvature: nonpositive conformal factor");
  for (NodeId n = 0; n < model.size(); ++n) {
    if (model.nodes[n].tag == NodeTag::overlap) continue;
    const FlatStencil st = model.flat_stencil(n);
    double lap = 0.0;
    for (int s = 0; s < st.size; ++s) {
      const StencilEntry& e = st.entries[static_cast<std::size_t>(s)];
      lap += e.coeff * std::log(u[e.node]);
    }
    num[n] = model.background_curvature[n] - model.laplacian_scale[n] * lap;
  }
  chart_sync(model, num);
  for (NodeId n = 0; n < model.size(); ++n) num[n] /= u[n];
  return num;
}

double total_curvature(const SurfaceModel& model, std::span<const double> u) {
  const Field r = scalar_curvature(model, u);
  // R dA = R u dA0. The exact-cone tail beyond rho_max carries no net
  // curvature: the perturbation's contribution is proportional to cos(theta).
  double total = 0.0;
  for (NodeId n = 0; n < model.size(); ++n) total += r[n] * u[n] * model.area_weights[n];
  return total;
}

double area(const SurfaceModel& model, std::span<const double> u) {
  double total = 0.0;
  for (NodeId n = 0; n < model.size(); ++n) total += u[n] * model.area_weights[n];
  return total;
}

std::vector<double> geodesic_distances_from(const SurfaceModel& model,
                                            std::span<const double> u, NodeId source) {
  if (u.size() != model.size()) throw ModelError("geodesic_distance: field size mismatch");
  for (double v : u)
    if (!(v > 0.0)) throw ModelError("geodesic_distance: nonpositive conformal factor");

  // Reverse interpolation links so overlap edges are traversable both ways.
  std::vector<std::vector<std::pair<NodeId, std::size_t>>> partner_of(model.size());
  for (NodeId n = 0; n < model.size(); ++n) {
    const NodeInfo& info = model.nodes[n];
    if (info.tag != NodeTag::overlap) continue;
    const InterpStencil& st = model.interp[static_cast<std::size_t>(info.interp)];
    for (std::size_t k = 0; k < 4; ++k) partner_of[st.source[k]].emplace_back(n, k);
  }

  auto edge_length = [&](std::uint32_t chart, Point2 a, Point2 b, double ua, double ub) {
    double dx = b.x - a.x;
    double dy = b.y - a.y;
    const ChartGrid& g = model.charts[chart];
    if (g.kind == ChartKind::cylinder_end) {
      dy = std::remainder(dy, kTwoPi);
    } else {
      dx -= std::round(dx);
      dy -= std::round(dy);
    }
    const Point2 mid{a.x + 0.5 * dx, a.y + 0.5 * dy};
    const double v = model.log_factor_at(chart, mid);
    return std::hypot(dx, dy) * std::exp(v) * std::sqrt(0.5 * (ua + ub));
  };
  auto cross_length = [&](NodeId overlap, NodeId src) {
    const InterpStencil& st =
        model.interp[static_cast<std::size_t>(model.nodes[overlap].interp)];
    return edge_length(model.nodes[src].chart, st.partner_coord, model.nodes[src].coord,
                       u[overlap], u[src]);
  };

  static constexpr std::array<std::pair<int, int>, 16> kOffsets{{{1, 0},
                                                                 {-1, 0},
                                                                 {0, 1},
                                                                 {0, -1},
                                                                 {1, 1},
                                                                 {1, -1},
                                                                 {-1, 1},
                                                                 {-1, -1},
                                                                 {1, 2},
                                                                 {2, 1},
                                                                 {-1, 2},
                                                                 {-2, 1},
                                                                 {1, -2},
                                                                 {2, -1},
                                                                 {-1, -2},
                                                                 {-2, -1}}};

  std::vector<double> dist(model.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[source] = 0.0;
  queue.emplace(0.0, source);
  while (!queue.empty()) {
    const auto [d, n] = queue.top();
    queue.pop();
    if (d > dist[n]) continue;
    const NodeInfo& info = model.nodes[n];
    const ChartGrid& g = model.charts[info.chart];
    auto relax = [&](NodeId m, double len) {
      if (d + len < dist[m]) {
        dist[m] = d + len;
        queue.emplace(dist[m], m);
      }
    };
    for (const auto& [di, dj] : kOffsets) {
      const std::int64_t id = g.at(info.i + di, info.j + dj);
      if (id < 0) continue;
      const auto m = static_cast<NodeId>(id);
      relax(m, edge_length(info.chart, info.coord, model.nodes[m].coord, u[n], u[m]));
    }
    if (info.tag == NodeTag::overlap) {
      const InterpStencil& st = model.interp[static_cast<std::size_t>(info.interp)];
      for (std::size_t k = 0; k < 4; ++k) relax(st.source[k], cross_length(n, st.source[k]));
    }
    for (const auto& [ov, slot] : partner_of[n]) relax(ov, cross_length(ov, n));
  }
  return dist;
}

double geodesic_distance(const SurfaceModel& model, std::span<const double> u, NodeId a,
                         NodeId b) {
  if (a >= model.size() || b >= model.size())
    throw ModelError("geodesic_distance: node out of range");
  if (a == b) return 0.0;
  const std::vector<double> d = geodesic_distances_from(model, u, a);
  if (!std::isfinite(d[b])) throw std::logic_error("geodesic_distance: disconnected nodes");
  return d[b];
}

}  // namespace conic
