#include "conic/experiment.hpp"
#include "conic/flow.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace conic;

namespace {

ConformalState with_dt(double dt) {
  ConformalState s;
  s.last_dt = dt;
  return s;
}

SurfaceModel default_model(int n) {
  ModelDescription d;
  d.core_resolution = n;
  return build_model(d);
}

double sup_dev(const Field& u, double value) {
  double m = 0.0;
  for (double x : u) m = std::max(m, std::abs(x - value));
  return m;
}

}  // namespace

TEST(AdaptiveDt, GrowsAfterEasyStep) {
  FlowConfig c;
  c.dt_max = 1.0;
  EXPECT_DOUBLE_EQ(adaptive_dt(with_dt(0.1), 3, c), 0.125);
}

TEST(AdaptiveDt, HalvesOnRetry) {
  FlowConfig c;
  c.dt_max = 1.0;
  EXPECT_DOUBLE_EQ(adaptive_dt(with_dt(0.1), 12, c), 0.05);
}

TEST(AdaptiveDt, ClampsAtMaximum) {
  FlowConfig c;
  c.dt_max = 1.0;
  EXPECT_DOUBLE_EQ(adaptive_dt(with_dt(0.9), 3, c), 1.0);
}

TEST(FlowConfig, RejectsInvalid) {
  FlowConfig c;
  c.dt_initial = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(StepRaw, ExactConeIsStationary) {
  const SurfaceModel m = build_exact_cone_fixture(0.5, 32, 3.0, 12.0);
  FlowConfig c;
  ConformalState s = initial_state(m);
  for (double dt : {0.01, 0.3, 2.0}) {
    const ConformalState next = step_raw(m, s, dt, c);
    EXPECT_LE(sup_dev(next.u, 1.0), 1e-12);
  }
}

TEST(StepRaw, ManufacturedConstantCurvature) {
  // R0 = -1 everywhere and u = 1 + t solves du/dt = -R0 exactly.
  const SurfaceModel base = build_flat_torus_fixture(24);
  const SurfaceModel m = base.with_background_curvature(Field(base.size(), -1.0));
  FlowConfig c;
  const ConformalState next = step_raw(m, initial_state(m), 0.1, c);
  EXPECT_LE(sup_dev(next.u, 1.1), c.newton_tol);
  EXPECT_DOUBLE_EQ(next.time, 0.1);
  EXPECT_EQ(next.step_count, 1);
}

TEST(StepRaw, ConservesTotalCurvature) {
  const int n = 96;
  const SurfaceModel m = default_model(n);
  FlowConfig c;
  const ConformalState s0 = initial_state(m);
  const ConformalState s1 = step_raw(m, s0, 0.5, c);
  const double t0 = total_curvature(m, s0.u), t1 = total_curvature(m, s1.u);
  const double h = 1.0 / n;
  EXPECT_LE(std::abs(t1 - t0) / std::abs(t0), 10.0 * h * h);
}

TEST(StepRescaled, ManufacturedOdeStep) {
  // R0 = -1, w spatially constant: dw/dtau = 1 - w.
  const SurfaceModel base = build_flat_torus_fixture(24);
  const SurfaceModel m = base.with_background_curvature(Field(base.size(), -1.0));
  FlowConfig c;
  ConformalState s;
  s.mode = FlowMode::rescaled;
  s.time = 0.7;
  const double w0 = 3.0, dtau = 0.05;
  s.u.assign(m.size(), w0);
  const ConformalState next = step_rescaled(m, s, dtau, c);
  const double backward_euler = (w0 + dtau) / (1.0 + dtau);
  const double exact = 1.0 + (w0 - 1.0) * std::exp(-dtau);
  EXPECT_LE(sup_dev(next.u, backward_euler), c.newton_tol);
  EXPECT_LE(sup_dev(next.u, exact), (w0 - 1.0) * dtau * dtau);
}

TEST(StepRescaled, DoesNotIncrease) {
  const SurfaceModel m = default_model(32);
  FlowConfig c;
  const ConformalState start = rescaled_start(m, c, initial_state(m));
  ConformalState s = start;
  for (int k = 0; k < 3; ++k) {
    const ConformalState next = step_rescaled(m, s, 0.25, c);
    for (NodeId n = 0; n < m.size(); ++n) ASSERT_LE(next.u[n], s.u[n] + 10 * c.newton_tol) << n;
    s = next;
  }
}

TEST(Run, ExactConeSnapshotsStayAtOne) {
  const SurfaceModel m = build_exact_cone_fixture(0.5, 32, 3.0, 12.0);
  FlowConfig c;
  c.t_end = 1.0;
  c.snapshot_schedule = {0.25, 0.5, 0.75};
  const Trajectory tr = run(m, c, initial_state(m));
  ASSERT_EQ(tr.snapshots.size(), 5u);
  for (const ConformalState& s : tr.snapshots) EXPECT_LE(sup_dev(s.u, 1.0), 1e-12);
}

TEST(Run, LandsExactlyOnScheduleTimes) {
  const SurfaceModel m = build_exact_cone_fixture(0.5, 16, 3.0, 6.0);
  FlowConfig c;
  c.t_end = 2.0;
  c.snapshot_schedule = {0.3, 1.0 / 3.0, 1.7};
  const Trajectory tr = run(m, c, initial_state(m));
  std::vector<double> times;
  for (const ConformalState& s : tr.snapshots) times.push_back(s.time);
  EXPECT_EQ(times, (std::vector<double>{0.0, 0.3, 1.0 / 3.0, 1.7, 2.0}));
  EXPECT_EQ(tr.series.front().newton_iters, 0);
  EXPECT_EQ(tr.series.size(), static_cast<std::size_t>(tr.snapshots.back().step_count) + 1);
}

TEST(Run, RejectsScheduleOutsideRange) {
  const SurfaceModel m = build_exact_cone_fixture(0.5, 16, 3.0, 6.0);
  FlowConfig c;
  c.t_end = 1.0;
  c.snapshot_schedule = {2.0};
  EXPECT_THROW(run(m, c, initial_state(m)), FlowError);
}

TEST(Run, UpperBoundAndGrowingCoreMinimum) {
  const SurfaceModel m = default_model(48);
  FlowConfig c;
  c.t_end = 50.0;
  for (int t = 1; t <= 50; ++t) c.snapshot_schedule.push_back(t);
  c.snapshot_schedule.insert(c.snapshot_schedule.begin(), {0.25, 0.5});
  const Trajectory tr = run(m, c, initial_state(m));

  double c2 = 0.0;
  for (const ConformalState& s : tr.snapshots)
    if (s.time <= 1.0)
      c2 = std::max(c2, *std::max_element(s.u.begin(), s.u.end()) / (1.0 + s.time));
  for (const ConformalState& s : tr.snapshots)
    EXPECT_LE(*std::max_element(s.u.begin(), s.u.end()), 2.0 * c2 * (1.0 + s.time));

  // u at the core point farthest from the puncture grows linearly in t.
  const NodeId x0 = m.nearest_core_node({m.ends[0].puncture.x + 0.5, m.ends[0].puncture.y + 0.5});
  double st = 0, su = 0, stt = 0, stu = 0, k = 0;
  for (const ConformalState& s : tr.snapshots) {
    if (s.time < 1.0) continue;
    st += s.time;
    su += s.u[x0];
    stt += s.time * s.time;
    stu += s.time * s.u[x0];
    ++k;
  }
  EXPECT_GT((k * stu - st * su) / (k * stt - st * st), 0.0);
}

TEST(Run, RescaledCurvatureApproachesMinusOne) {
  const SurfaceModel m = default_model(48);
  FlowConfig c;
  c.t_end = 8.0;
  for (int k = 1; k <= 8; ++k) c.snapshot_schedule.push_back(k);
  const Trajectory tr = run(m, c, rescaled_start(m, c, initial_state(m)));
  std::vector<double> dev;
  for (const ConformalState& s : tr.snapshots) {
    const Field r = scalar_curvature(m, s.u);
    double d = 0.0;
    for (NodeId n = 0; n < m.size(); ++n)
      if (!m.is_cylinder(n) && m.nodes[n].tag == NodeTag::interior &&
          torus_distance(m.nodes[n].coord, m.ends[0].puncture) >= m.r_out)
        d = std::max(d, std::abs(r[n] + 1.0));
    dev.push_back(d);
  }
  EXPECT_LT(dev.back(), dev.front());
  for (std::size_t i = 4; i + 1 < dev.size(); ++i) EXPECT_LE(dev[i + 1], dev[i] + 1e-8);
}
