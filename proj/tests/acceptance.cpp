// Acceptance suite: twelve criteria, one PASS/FAIL line each.
//
// Runs go through the experiment pipeline into a work directory (first
// argument, default ./acceptance_work) and are read back from disk before
// any criterion is evaluated. Exit status is 0 only when all twelve pass.

#include "conic/elliptic.hpp"
#include "conic/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace conic;
namespace fs = std::filesystem;

namespace {

constexpr double kFourPi = 4.0 * std::numbers::pi;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool passes(const DiagnosticsReport& rep, const std::string& name) {
  const CheckResult* c = rep.find(name);
  if (!c) throw std::runtime_error("missing check " + name);
  return c->status == CheckStatus::pass;
}

double worst(const DiagnosticsReport& rep, const std::string& name) {
  const CheckResult* c = rep.find(name);
  if (!c) throw std::runtime_error("missing check " + name);
  return c->worst_value;
}

// Completed runs, keyed by name, with their model and wall time.
struct Run {
  StoredRun stored;
  SurfaceModel model;
  double seconds = 0.0;
};

class Workbench {
 public:
  explicit Workbench(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  const Run& get(const std::string& name, const std::function<ExperimentConfig()>& make) {
    auto it = runs_.find(name);
    if (it != runs_.end()) return it->second;
    ExperimentConfig cfg = make();
    const fs::path dir = root_ / name;
    fs::remove_all(dir);
    cfg.output.directory = dir.string();
    std::ostringstream log;
    const auto t0 = Clock::now();
    if (run_experiment(cfg, log) == kExitError)
      throw std::runtime_error("run " + name + " stopped:\n" + log.str());
    const double secs = seconds_since(t0);
    StoredRun stored = load_run(dir);
    SurfaceModel model = build_model(stored.config);
    std::printf("       run %-16s %7.1f s, %zu snapshots\n", name.c_str(), secs,
                stored.data.snapshots.size());
    std::fflush(stdout);
    return runs_.emplace(name, Run{std::move(stored), std::move(model), secs}).first->second;
  }

 private:
  fs::path root_;
  std::map<std::string, Run> runs_;
};

ExperimentConfig raw_config(int n, double t_end) {
  ExperimentConfig cfg;
  cfg.model.resolution = n;
  cfg.flow.t_end = t_end;
  cfg.diagnostics.checks = {"sign_conservation"};
  return cfg;
}

ExperimentConfig rescaled_config(int n, double rho_max) {
  ExperimentConfig cfg;
  cfg.model.resolution = n;
  cfg.model.rho_max = rho_max;
  cfg.flow.mode = "rescaled";
  cfg.flow.t_end = 8.0;
  cfg.diagnostics.checks = {"rescaled"};
  return cfg;
}

double conservation_drift(const Run& r) {
  const auto& snaps = r.stored.data.snapshots;
  const double base = total_curvature(r.model, snaps.front().u);
  double drift = 0.0;
  for (const ConformalState& s : snaps)
    drift = std::max(drift, std::abs(total_curvature(r.model, s.u) - base) / std::abs(base));
  return drift;
}

// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  const auto k = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / k;
    my += std::log(y[i]) / k;
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    den += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return num / den;
}

double identity_deviation_until(const Run& r, double t_max) {
  const std::vector<double> dev = potential_identity_deviation(r.model, r.stored.data);
  double out = 0.0;
  for (std::size_t i = 0; i < dev.size(); ++i)
    if (r.stored.data.snapshots[i].time <= t_max + 1e-12) out = std::max(out, dev[i]);
  return out;
}

double harnack_max(const Run& r) {
  const auto& d = r.stored.config.diagnostics;
  const auto pairs = sample_harnack_pairs(r.model, r.stored.data, d.harnack_pairs, d.harnack_seed,
                                          d.harnack_tau_min);
  return worst(check_harnack(r.model, r.stored.data, pairs), "harnack.max_constant");
}

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  Workbench bench(argc > 1 ? argv[1] : "acceptance_work");

  // The default raw run: N = 96, rho_max = 24, t_end = 50, potential tracked.
  auto raw96 = [&]() -> const Run& {
    return bench.get("raw_n96", [] {
      ExperimentConfig c = raw_config(96, 50.0);
      c.flow.track_potential = true;
      return c;
    });
  };
  auto rescaled96 = [&]() -> const Run& {
    return bench.get("rescaled_n96", [] { return rescaled_config(96, 24.0); });
  };
  std::optional<OracleResult> oracle96;
  double oracle_seconds = 0.0;
  auto oracle = [&]() -> const OracleResult& {
    if (!oracle96) {
      const auto t0 = Clock::now();
      oracle96 = uniformize_oracle(rescaled96().model);
      oracle_seconds = seconds_since(t0);
    }
    return *oracle96;
  };

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> eval;
  };
  const std::vector<Criterion> criteria{
      {1, "stationarity",
       [&] {
         const auto t0 = Clock::now();
         const Run& r = bench.get("cone_n64", [] {
           ExperimentConfig c;
           c.model.fixture = "exact-cone";
           c.model.resolution = 64;
           c.model.rho_min = 3.0;
           c.model.rho_max = 12.0;
           c.flow.t_end = 1.0;
           c.diagnostics.checks = {"sign_conservation"};
           return c;
         });
         const double secs = seconds_since(t0);
         double dev = 0.0;
         for (const ConformalState& s : r.stored.data.snapshots)
           for (double v : s.u) dev = std::max(dev, std::abs(v - 1.0));
         return Outcome{dev <= 1e-8 && secs < 10.0,
                        fmt("sup|u-1| = %.2e (<= 1e-8), %.2f s (< 10 s)", dev, secs)};
       }},
      {2, "conservation",
       [&] {
         const double d96 = conservation_drift(raw96());
         const double d192 =
             conservation_drift(bench.get("raw_n192", [] { return raw_config(192, 50.0); }));
         return Outcome{d96 <= 0.01 && d192 <= 0.0025,
                        fmt("drift N=96 %.3e (<= 1e-2), N=192 %.3e (<= 2.5e-3)", d96, d192)};
       }},
      {3, "gauss_bonnet",
       [&] {
         std::vector<double> h, rel;
         double rel96 = 0.0;
         for (int n : {48, 64, 96}) {
           ModelDescription d;
           d.core_resolution = n;
           const SurfaceModel m = build_model(d);
           double alpha_sum = 0.0;
           for (const ConeEnd& e : m.ends) alpha_sum += e.angle_alpha;
           const double target = kFourPi * (m.euler_char - alpha_sum);
           h.push_back(1.0 / n);
           rel.push_back(std::abs(m.gauss_bonnet_defect) / std::abs(target));
           if (n == 96) rel96 = rel.back();
         }
         const double slope = loglog_slope(h, rel);
         return Outcome{rel96 <= 0.005 && std::abs(slope - 2.0) <= 0.3,
                        fmt("defect N=96 %.3e (<= 5e-3), refinement slope %.2f (2 +- 0.3)",
                            rel96, slope)};
       }},
      {4, "linear_bounds",
       [&] {
         const Run& a = raw96();
         const Run& b = bench.get("raw_n64", [] { return raw_config(64, 50.0); });
         const DiagnosticsReport ra = check_bounds(a.model, a.stored.data);
         const DiagnosticsReport rb = check_bounds(b.model, b.stored.data);
         const double s96 = worst(ra, "bounds.flat_core_slope");
         const double s64 = worst(rb, "bounds.flat_core_slope");
         const double spread = std::abs(s64 - s96) / std::abs(s96);
         const bool ok = passes(ra, "bounds.lower") && passes(ra, "bounds.upper") && s96 > 0.0 &&
                         s64 > 0.0 && spread <= 0.2;
         return Outcome{ok, fmt("min core u %.4f >= C1 %.4f, max u/(1+t) %.4f <= C2 %.4f, "
                                "core slope N=64 %.4f N=96 %.4f (spread %.3f <= 0.2)",
                                worst(ra, "bounds.lower"), ra.find("bounds.lower")->tolerance,
                                worst(ra, "bounds.upper"), ra.find("bounds.upper")->tolerance,
                                s64, s96, spread)};
       }},
      {5, "aronson_benilan",
       [&] {
         const Run& a = raw96();
         const DiagnosticsReport rep = check_aronson_benilan(a.model, a.stored.data);
         const double v = worst(rep, "aronson_benilan.violations");
         return Outcome{v == 0.0 && passes(rep, "aronson_benilan"),
                        fmt("violations %.0f over %zu snapshot pairs", v,
                            a.stored.data.snapshots.size() - 1)};
       }},
      {6, "rescaled_monotone",
       [&] {
         const Run& r = rescaled96();
         const DiagnosticsReport rep = check_rescaled(r.model, r.stored.data);
         return Outcome{passes(rep, "rescaled.monotone") && passes(rep, "rescaled.curvature_floor"),
                        fmt("max increase %.2e (slack %.2e), min R %.6f (floor %.6f)",
                            worst(rep, "rescaled.monotone"),
                            rep.find("rescaled.monotone")->tolerance,
                            worst(rep, "rescaled.curvature_floor"),
                            rep.find("rescaled.curvature_floor")->tolerance)};
       }},
      {7, "convergence",
       [&] {
         const Run& r = rescaled96();
         const OracleResult& o = oracle();
         const DiagnosticsReport rep = check_convergence(r.model, r.stored.data, o.U);
         const double secs = r.seconds + oracle_seconds;
         const bool ok = passes(rep, "convergence.error_final") &&
                         passes(rep, "convergence.curvature_final") &&
                         passes(rep, "convergence.error_monotone") &&
                         passes(rep, "convergence.curvature_monotone") && o.residual <= 1e-8 &&
                         secs <= 1800.0;
         return Outcome{ok, fmt("e(8) %.4f (<= 0.02), c(8) %.4f (<= 0.05), monotone e %s c %s, "
                                "oracle residual %.1e, %.0f s",
                                worst(rep, "convergence.error_final"),
                                worst(rep, "convergence.curvature_final"),
                                passes(rep, "convergence.error_monotone") ? "yes" : "no",
                                passes(rep, "convergence.curvature_monotone") ? "yes" : "no",
                                o.residual, secs)};
       }},
      {8, "potential_identity",
       [&] {
         const double dev_c = identity_deviation_until(raw96(), 10.0);
         const Run& fine = bench.get("raw_n192_t10", [] {
           ExperimentConfig c = raw_config(192, 10.0);
           c.flow.dt_initial *= 0.5;
           c.flow.dt_max *= 0.5;
           c.flow.track_potential = true;
           return c;
         });
         const double dev_f = identity_deviation_until(fine, 10.0);
         const auto band = [](const Run& r) {
           const double h = 1.0 / r.stored.config.model.resolution;
           return 5.0 * (h * h + r.stored.config.flow.dt_initial);
         };
         const double bc = band(raw96()), bf = band(fine);
         const double ratio = dev_f / dev_c;
         const bool ok = dev_c <= bc && dev_f <= bf && std::abs(ratio - 0.5) <= 0.15;
         return Outcome{ok, fmt("dev N=96 %.3e (band %.3e), N=192 %.3e (band %.3e), "
                                "ratio %.3f (0.5 +- 0.15)",
                                dev_c, bc, dev_f, bf, ratio)};
       }},
      {9, "h_monotone",
       [&] {
         const Run& a = raw96();
         const DiagnosticsReport rep = check_sign_and_conservation(a.model, a.stored.data);
         const bool ok = passes(rep, "potential.h_monotone") &&
                         passes(rep, "potential.curvature_bound");
         return Outcome{ok, fmt("max h rise %.2e (slack %.2e), sup R - max h(0) %.2e",
                                worst(rep, "potential.h_monotone"),
                                rep.find("potential.h_monotone")->tolerance,
                                worst(rep, "potential.curvature_bound"))};
       }},
      {10, "harnack",
       [&] {
         const double c96 = harnack_max(rescaled96());
         const double c64 =
             harnack_max(bench.get("rescaled_n64", [] { return rescaled_config(64, 24.0); }));
         const double spread = std::abs(c64 - c96) / std::abs(c96);
         return Outcome{std::isfinite(c64) && std::isfinite(c96) && spread <= 0.25,
                        fmt("C N=64 %.4f, N=96 %.4f (spread %.3f <= 0.25)", c64, c96, spread)};
       }},
      {11, "sign_preservation",
       [&] {
         const Run& g = bench.get("gauged_n96", [] {
           ExperimentConfig c = raw_config(96, 20.0);
           c.flow.gauge = true;
           return c;
         });
         const DiagnosticsReport rep = check_sign_and_conservation(g.model, g.stored.data);
         return Outcome{g.stored.data.gauged && passes(rep, "sign.max_R"),
                        fmt("max R %.2e (slack %.2e)", worst(rep, "sign.max_R"),
                            rep.find("sign.max_R")->tolerance)};
       }},
      {12, "finite_area",
       [&] {
         const Run& r24 = rescaled96();
         const Run& r16 =
             bench.get("rescaled_n96_rho16", [] { return rescaled_config(96, 16.0); });
         const double a24 = core_area(r24.model, r24.stored.data.snapshots.back().u) / kFourPi;
         const double a16 = core_area(r16.model, r16.stored.data.snapshots.back().u) / kFourPi;
         return Outcome{a24 >= 0.8 && a24 <= 1.0 && a24 > a16,
                        fmt("core area / 4pi rho_max=24 %.4f (in [0.8, 1]), rho_max=16 %.4f", a24,
                            a16)};
       }},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = c.eval();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %-20s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), seconds_since(t0));
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
