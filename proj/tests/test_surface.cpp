#include "conic/surface.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace conic;

namespace {

constexpr double kPi = std::numbers::pi;

ModelDescription desc(int k, std::vector<double> alphas, int n) {
  ModelDescription d;
  d.punctures = k;
  d.alphas = std::move(alphas);
  d.core_resolution = n;
  return d;
}

// Position on the torus of any node: core nodes carry it directly, cylinder
// nodes sit at p + e^{-rho} (cos theta, sin theta).
Point2 torus_position(const SurfaceModel& m, NodeId n) {
  const NodeInfo& info = m.nodes[n];
  if (!m.is_cylinder(n)) return info.coord;
  const Point2 p = m.ends[static_cast<std::size_t>(m.chart_of(n).end_index)].puncture;
  const double r = std::exp(-info.coord.x);
  return {p.x + r * std::cos(info.coord.y), p.y + r * std::sin(info.coord.y)};
}

// Independent flat-torus distance: brute force over the nine nearest deck translates.
double brute_torus_distance(Point2 a, Point2 b) {
  double best = 1e300;
  for (int sx = -1; sx <= 1; ++sx)
    for (int sy = -1; sy <= 1; ++sy)
      best = std::min(best, std::hypot(b.x + sx - a.x, b.y + sy - a.y));
  return best;
}

}  // namespace

TEST(GaussBonnet, SingleConeEndHalfAngle) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 96));
  const Field one(m.size(), 1.0);
  const double target = 4.0 * kPi * (-1.0 - 0.5);
  EXPECT_NEAR(total_curvature(m, one), target, 5e-3 * std::abs(target));
  EXPECT_EQ(m.euler_char, -1);
}

TEST(GaussBonnet, AsymptoticallyEuclideanEnd) {
  const SurfaceModel m = build_model(desc(1, {1.0}, 64));
  const Field one(m.size(), 1.0);
  EXPECT_NEAR(total_curvature(m, one), -8.0 * kPi, 5e-3 * 8.0 * kPi);
}

TEST(GaussBonnet, TwoQuarterAngleEnds) {
  const SurfaceModel m = build_model(desc(2, {0.25, 0.25}, 64));
  const Field one(m.size(), 1.0);
  EXPECT_EQ(m.euler_char, -2);
  EXPECT_NEAR(total_curvature(m, one), -10.0 * kPi, 5e-3 * 10.0 * kPi);
}

TEST(GaussBonnet, DefectShrinksUnderRefinement) {
  const double d32 = std::abs(build_model(desc(2, {0.25, 0.25}, 32)).gauss_bonnet_defect);
  const double d64 = std::abs(build_model(desc(2, {0.25, 0.25}, 64)).gauss_bonnet_defect);
  EXPECT_LT(d64, d32);
}

TEST(Model, RejectsInvalidInput) {
  EXPECT_THROW(build_model(desc(0, {0.5}, 32)), ModelError);
  EXPECT_THROW(build_model(desc(1, {-1.0}, 32)), ModelError);
  EXPECT_THROW(build_exact_cone_fixture(0.5, 32, 5.0, 3.0), ModelError);
}

TEST(Laplacian, ConstantIsHarmonic) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 48));
  const Field lap = laplacian_apply(m, Field(m.size(), 3.7));
  for (NodeId n = 0; n < m.size(); ++n) EXPECT_NEAR(lap[n], 0.0, 1e-9) << n;
}

TEST(Laplacian, CoordinateIsHarmonicOnFlatCore) {
  const SurfaceModel m = build_flat_torus_fixture(32);
  Field x(m.size());
  for (NodeId n = 0; n < m.size(); ++n) x[n] = m.nodes[n].coord.x;
  const Field lap = detail::apply_laplacian(m, x);
  for (NodeId n = 0; n < m.size(); ++n) {
    const int i = m.nodes[n].i;
    if (i < 2 || i > 29) continue;  // away from the periodic seam
    EXPECT_NEAR(lap[n], 0.0, 1e-9) << n;
  }
}

TEST(Laplacian, RhoIsHarmonicOnExactCone) {
  const SurfaceModel m = build_exact_cone_fixture(0.5, 32, 3.0, 12.0);
  Field rho(m.size());
  for (NodeId n = 0; n < m.size(); ++n) rho[n] = m.nodes[n].coord.x;
  const Field lap = laplacian_apply(m, rho);
  for (NodeId n = 0; n < m.size(); ++n)
    if (m.nodes[n].tag == NodeTag::interior) {
      EXPECT_NEAR(lap[n], 0.0, 1e-9) << n;
    }
}

TEST(Laplacian, SymmetricOnPeriodicCore) {
  const SurfaceModel m = build_flat_torus_fixture(24);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Field f(m.size()), g(m.size());
  for (NodeId n = 0; n < m.size(); ++n) {
    f[n] = U(rng);
    g[n] = U(rng);
  }
  const Field lf = laplacian_apply(m, f), lg = laplacian_apply(m, g);
  double a = 0.0, b = 0.0, scale = 0.0;
  for (NodeId n = 0; n < m.size(); ++n) {
    a += lf[n] * g[n] * m.area_weights[n];
    b += f[n] * lg[n] * m.area_weights[n];
    scale += std::abs(lf[n] * g[n] * m.area_weights[n]);
  }
  EXPECT_NEAR(a, b, 1e-13 * scale);
}

TEST(Laplacian, RejectsUnsyncedField) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 32));
  Field f(m.size(), 0.0);
  for (NodeId n = 0; n < m.size(); ++n)
    if (m.nodes[n].tag == NodeTag::overlap) {
      f[n] = 1.0;
      break;
    }
  EXPECT_THROW(laplacian_apply(m, f), ModelError);
}

TEST(ScalarCurvature, UnitFactorGivesBackground) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 32));
  const Field r = scalar_curvature(m, Field(m.size(), 1.0));
  for (NodeId n = 0; n < m.size(); ++n)
    if (m.nodes[n].tag == NodeTag::interior) {
      EXPECT_NEAR(r[n], m.background_curvature[n], 1e-9 * (1.0 + std::abs(r[n]))) << n;
    }
}

TEST(ScalarCurvature, ConstantFactorScales) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 32));
  const double c = 2.5;
  const Field r = scalar_curvature(m, Field(m.size(), c));
  for (NodeId n = 0; n < m.size(); ++n)
    if (m.nodes[n].tag == NodeTag::interior) {
      EXPECT_NEAR(r[n], m.background_curvature[n] / c, 1e-9 * (1.0 + std::abs(r[n]))) << n;
    }
}

TEST(TotalCurvature, ScaleInvariant) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 48));
  const double a = total_curvature(m, Field(m.size(), 1.0));
  const double b = total_curvature(m, Field(m.size(), 7.0));
  EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
}

TEST(Geodesic, SameNodeIsZero) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 32));
  EXPECT_EQ(geodesic_distance(m, Field(m.size(), 1.0), 17, 17), 0.0);
}

TEST(Geodesic, RadialLineOnCone) {
  const double alpha = 0.5;
  const SurfaceModel m = build_exact_cone_fixture(alpha, 64, 3.0, 9.0);
  const ChartGrid& g = m.charts[0];
  const auto a = static_cast<NodeId>(g.at(5, 7));
  const auto b = static_cast<NodeId>(g.at(g.resolution[0] - 6, 7));
  const double ra = std::exp(alpha * m.nodes[a].coord.x) / alpha;
  const double rb = std::exp(alpha * m.nodes[b].coord.x) / alpha;
  const double d = geodesic_distance(m, Field(m.size(), 1.0), a, b);
  EXPECT_NEAR(d, std::abs(rb - ra), 0.01 * std::abs(rb - ra));
}

TEST(Geodesic, FlatCoreMatchesTorusDistance) {
  const SurfaceModel m = build_flat_torus_fixture(128);
  const Field one(m.size(), 1.0);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<NodeId> pick(0, m.size() - 1);
  for (int k = 0; k < 12; ++k) {
    const NodeId a = pick(rng), b = pick(rng);
    if (a == b) continue;
    const double exact = brute_torus_distance(m.nodes[a].coord, m.nodes[b].coord);
    EXPECT_NEAR(geodesic_distance(m, one, a, b), exact, 0.05 * exact);
    EXPECT_NEAR(torus_distance(m.nodes[a].coord, m.nodes[b].coord), exact, 1e-14);
  }
}

TEST(ChartSync, ConstantUnchanged) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 32));
  Field f(m.size(), 2.0);
  chart_sync(m, f);
  for (double v : f) EXPECT_NEAR(v, 2.0, 1e-14);
}

TEST(ChartSync, SmoothFieldMismatchIsSecondOrder) {
  std::vector<double> h, err;
  for (int n : {32, 64, 128}) {
    const SurfaceModel m = build_model(desc(1, {0.5}, n));
    Field f(m.size());
    for (NodeId k = 0; k < m.size(); ++k) {
      const Point2 z = torus_position(m, k);
      f[k] = std::sin(2 * kPi * z.x) * std::sin(2 * kPi * z.y);
    }
    h.push_back(1.0 / n);
    err.push_back(sync_mismatch(m, f));
  }
  // Least-squares slope of log err against log h.
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    mx += std::log(h[i]) / static_cast<double>(h.size());
    my += std::log(err[i]) / static_cast<double>(h.size());
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    num += (std::log(h[i]) - mx) * (std::log(err[i]) - my);
    den += (std::log(h[i]) - mx) * (std::log(h[i]) - mx);
  }
  EXPECT_NEAR(num / den, 2.0, 0.5);
}

TEST(ChartSync, MissingChartIsError) {
  const SurfaceModel m = build_model(desc(1, {0.5}, 32));
  std::vector<Field> blocks(1);
  blocks[0].assign(m.charts[0].count, 1.0);
  EXPECT_THROW(chart_sync(m, blocks), ModelError);
}
