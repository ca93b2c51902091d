#include "conic/diagnostics.hpp"
#include "conic/elliptic.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace conic;

namespace {

ConformalState snapshot(double t, Field u, FlowMode mode = FlowMode::raw) {
  ConformalState s;
  s.mode = mode;
  s.time = t;
  s.u = std::move(u);
  return s;
}

RunData synthetic(const SurfaceModel& m, const std::vector<double>& times,
                  double (*profile)(double), FlowMode mode = FlowMode::raw) {
  RunData run;
  run.mode = mode;
  for (double t : times) run.snapshots.push_back(snapshot(t, Field(m.size(), profile(t)), mode));
  return run;
}

RunData simulate(const SurfaceModel& m, double t_end, const std::vector<double>& schedule) {
  FlowConfig c;
  c.t_end = t_end;
  c.snapshot_schedule = schedule;
  RunData run;
  run.snapshots = conic::run(m, c, initial_state(m)).snapshots;
  run.newton_tol = c.newton_tol;
  return run;
}

SurfaceModel cone() { return build_exact_cone_fixture(0.5, 32, 3.0, 12.0); }

}  // namespace

TEST(SolverSlack, LinearSeriesHasNoCurvatureTerm) {
  std::vector<double> t{0.0, 1.0, 2.0, 3.0};
  std::vector<Field> q;
  for (double x : t) q.push_back(Field{2.0 * x + 1.0});
  EXPECT_NEAR(solver_slack(t, q, 1e-9, {0}), 1e-8, 1e-15);
}

TEST(Bounds, ExactConeConstants) {
  const SurfaceModel m = cone();
  const RunData run = synthetic(m, {0.0, 0.5, 1.0, 5.0, 10.0}, [](double) { return 1.0; });
  const DiagnosticsReport rep = check_bounds(m, run);
  const CheckResult* low = rep.find("bounds.lower");
  const CheckResult* high = rep.find("bounds.upper");
  ASSERT_NE(low, nullptr);
  ASSERT_NE(high, nullptr);
  EXPECT_DOUBLE_EQ(low->tolerance, 0.5);
  EXPECT_DOUBLE_EQ(high->tolerance, 2.0);
  EXPECT_EQ(low->status, CheckStatus::pass);
  EXPECT_EQ(high->status, CheckStatus::pass);
}

TEST(Bounds, CorruptedNodeIsReported) {
  const SurfaceModel m = cone();
  RunData run = synthetic(m, {0.0, 0.5, 1.0, 5.0, 10.0}, [](double) { return 1.0; });
  NodeId bad = 0;
  while (!m.in_core(bad)) ++bad;
  bad += 40;
  ASSERT_TRUE(m.in_core(bad));
  run.snapshots[3].u[bad] = 0.1 * 0.5;
  const CheckResult* low = check_bounds(m, run).find("bounds.lower");
  ASSERT_NE(low, nullptr);
  EXPECT_EQ(low->status, CheckStatus::fail);
  ASSERT_TRUE(low->location.has_value());
  EXPECT_EQ(low->location->node, bad);
  EXPECT_DOUBLE_EQ(low->location->time, 5.0);
}

TEST(Bounds, ShortTrajectoryIsError) {
  const SurfaceModel m = cone();
  const RunData run = synthetic(m, {0.0, 1.0, 2.0}, [](double) { return 1.0; });
  EXPECT_THROW(check_bounds(m, run), DiagnosticsError);
}

TEST(AronsonBenilan, LinearGrowthPasses) {
  const SurfaceModel m = cone();
  const RunData run =
      synthetic(m, {0.0, 0.5, 1.0, 2.0, 4.0}, [](double t) { return 3.0 * (1.0 + t); });
  const DiagnosticsReport rep = check_aronson_benilan(m, run);
  EXPECT_EQ(rep.find("aronson_benilan")->status, CheckStatus::pass);
  EXPECT_EQ(rep.find("aronson_benilan.violations")->worst_value, 0.0);
}

TEST(AronsonBenilan, QuadraticGrowthFails) {
  // (u2 - u1)/dt ~ 2 c t exceeds u/t ~ c t by far more than 2 dt u''.
  const SurfaceModel m = cone();
  std::vector<double> times;
  for (int k = 40; k <= 60; ++k) times.push_back(0.1 * k);
  const RunData run = synthetic(m, times, [](double t) { return t * t; });
  EXPECT_EQ(check_aronson_benilan(m, run).find("aronson_benilan")->status, CheckStatus::fail);
}

TEST(AronsonBenilan, ExactConeFlow) {
  const SurfaceModel m = cone();
  const RunData run = simulate(m, 4.0, {0.5, 1.0, 2.0});
  EXPECT_TRUE(check_aronson_benilan(m, run).passed());
}

TEST(Harnack, ConstantFormula) {
  EXPECT_DOUBLE_EQ(harnack_constant(0.3, 0.3, 0.0, 1.0, 2.0), 0.0);
  EXPECT_NEAR(harnack_constant(0.0, std::exp(-1.0) - 1.0, 0.0, 1.0, 2.0), 1.0, 1e-14);
  // Distance only: C = -d^2 / (4 span^2).
  EXPECT_NEAR(harnack_constant(0.5, 0.5, 0.6, 1.0, 3.0), -0.36 / 16.0, 1e-14);
  EXPECT_THROW(harnack_constant(0.0, 0.0, 0.0, 2.0, 2.0), DiagnosticsError);
}

TEST(Harnack, MinusOneCurvatureIsSkipped) {
  const SurfaceModel base = build_flat_torus_fixture(24);
  const SurfaceModel m = base.with_background_curvature(Field(base.size(), -1.0));
  const RunData run = synthetic(m, {1.0, 2.0, 3.0}, [](double) { return 1.0; }, FlowMode::rescaled);
  const std::vector<HarnackPair> pairs = sample_harnack_pairs(m, run, 10, 5);
  const DiagnosticsReport rep = check_harnack(m, run, pairs);
  EXPECT_EQ(rep.find("harnack.skipped_source")->worst_value, 10.0);
  EXPECT_TRUE(rep.find_series("harnack")->rows.empty());
}

TEST(Harnack, SamplingIsSeeded) {
  const SurfaceModel m = build_flat_torus_fixture(24);
  const RunData run = synthetic(m, {0.5, 1.0, 2.0, 3.0}, [](double) { return 1.0; }, FlowMode::rescaled);
  const auto a = sample_harnack_pairs(m, run, 6, 9);
  const auto b = sample_harnack_pairs(m, run, 6, 9);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x1.x, b[i].x1.x);
    EXPECT_EQ(a[i].s2, b[i].s2);
    EXPECT_LT(a[i].s1, a[i].s2);
    EXPECT_GE(run.snapshots[a[i].s1].time, 1.0);
  }
}

TEST(Convergence, StartingAtUniformizer) {
  ModelDescription d;
  d.core_resolution = 32;
  const SurfaceModel m = build_model(d);
  const OracleResult o = uniformize_oracle(m);
  double rim = 0.0;
  int count = 0;
  for (NodeId n = 0; n < m.size(); ++n)
    if (m.nodes[n].tag == NodeTag::truncation) {
      rim += o.U[n];
      ++count;
    }
  FlowConfig c;
  ConformalState s = snapshot(-std::log(rim / count), o.U, FlowMode::rescaled);
  RunData run;
  run.mode = FlowMode::rescaled;
  run.newton_tol = c.newton_tol;
  run.snapshots.push_back(s);
  for (int k = 0; k < 3; ++k) {
    s = step_rescaled(m, s, 0.5, c);
    run.snapshots.push_back(s);
  }
  ConvergenceOptions opt;
  opt.ball_samples = 2;
  const DiagnosticsReport rep = check_convergence(m, run, o.U, opt);
  EXPECT_LE(rep.find("convergence.error_final")->worst_value, 10.0 * c.newton_tol);
  EXPECT_EQ(rep.find("convergence.error_final")->status, CheckStatus::pass);
}

TEST(CurvatureDecay, ShortRawFlow) {
  for (double amp : {0.0, 0.01}) {
    ModelDescription d;
    d.core_resolution = 32;
    d.perturbation_amp = amp;
    const SurfaceModel m = build_model(d);
    const RunData run = simulate(m, 2.0, {0.25, 0.5, 1.0});
    const CheckResult* c = check_curvature_decay(m, run).find("curvature_decay.envelope");
    ASSERT_NE(c, nullptr);
    EXPECT_EQ(c->status, CheckStatus::pass) << "amp " << amp << " growth " << c->worst_value;
  }
}

TEST(SignConservation, ExactConeHasNoDrift) {
  const SurfaceModel m = cone();
  RunData run = simulate(m, 2.0, {0.5, 1.0});
  run.gauged = true;
  const DiagnosticsReport rep = check_sign_and_conservation(m, run);
  EXPECT_EQ(rep.find("conservation.total_curvature")->worst_value, 0.0);
  EXPECT_EQ(rep.find("sign.max_R")->status, CheckStatus::pass);
}

TEST(Report, TextIsReproducible) {
  const SurfaceModel m = cone();
  const RunData run = simulate(m, 10.0, {1.0, 5.0});
  DiagnosticsReport a = check_bounds(m, run);
  a.merge(check_aronson_benilan(m, run));
  DiagnosticsReport b = check_bounds(m, run);
  b.merge(check_aronson_benilan(m, run));
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_FALSE(a.to_text().empty());
}

TEST(Report, WrongModeIsError) {
  const SurfaceModel m = cone();
  const RunData run = synthetic(m, {0.0, 1.0}, [](double) { return 1.0; });
  EXPECT_THROW(check_rescaled(m, run), DiagnosticsError);
}
