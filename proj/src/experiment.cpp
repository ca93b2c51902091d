#include "conic/experiment.hpp"

#include "conic/elliptic.hpp"
#include "conic/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <set>

namespace conic {

namespace fs = std::filesystem;

namespace {

std::string snap_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snap_%04zu", i);
  return buf;
}

std::string pot_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pot_%04zu.cric", i);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw FormatError("cannot write " + path.string());
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

Field read_field(const fs::path& path, std::size_t n) {
  ArrayFile a = read_array(path);
  if (a.values.size() != n)
    throw FormatError(path.string() + ": expected " + std::to_string(n) + " values");
  return std::move(a.values);
}

void save_snapshot(const fs::path& dir, std::size_t idx, const ConformalState& s) {
  const std::string stem = snap_stem(idx);
  write_array(dir / (stem + ".cric"), s.u);
  write_metadata(dir / (stem + ".meta"),
                 {{"format", std::to_string(kSnapshotVersion)},
                  {"mode", to_string(s.mode)},
                  {"time", format_double(s.time)},
                  {"step_count", std::to_string(s.step_count)},
                  {"last_dt", format_double(s.last_dt)},
                  {"nodes", std::to_string(s.u.size())}});
}

ConformalState load_snapshot(const fs::path& dir, std::size_t idx, std::size_t n) {
  const std::string stem = snap_stem(idx);
  const Metadata meta = read_metadata(dir / (stem + ".meta"));
  auto get = [&](const std::string& k) {
    const auto it = meta.find(k);
    if (it == meta.end()) throw FormatError(stem + ".meta: missing key " + k);
    return it->second;
  };
  if (get("format") != std::to_string(kSnapshotVersion))
    throw FormatError(stem + ".meta: format version mismatch");
  ConformalState s;
  s.mode = parse_flow_mode(get("mode"));
  s.time = parse_double(get("time"));
  s.step_count = std::stol(get("step_count"));
  s.last_dt = parse_double(get("last_dt"));
  s.u = read_field(dir / (stem + ".cric"), n);
  return s;
}

void save_model(const fs::path& dir, const SurfaceModel& model) {
  const std::size_t n = model.size();
  std::vector<double> all;
  all.reserve(4 * n);
  for (const Field* f : {&model.background_log_factor, &model.background_curvature,
                         &model.area_weights, &model.laplacian_scale})
    all.insert(all.end(), f->begin(), f->end());
  write_array(dir / "model.cric", all, {4, n});
  write_metadata(dir / "model.meta",
                 {{"format", std::to_string(kSnapshotVersion)},
                  {"nodes", std::to_string(n)},
                  {"charts", std::to_string(model.charts.size())},
                  {"ends", std::to_string(model.ends.size())},
                  {"euler_characteristic", std::to_string(model.euler_char)},
                  {"gauss_bonnet_defect", format_double(model.gauss_bonnet_defect)}});
}

bool is_report_file(const std::string& name) {
  return name == "diagnostics.txt" || name == "oracle.cric" || name.rfind("diag_", 0) == 0;
}

std::vector<double> record_values(const SeriesRecord& r) {
  return {r.time, r.min_u, r.max_u, r.min_R, r.max_R, r.total_curvature,
          static_cast<double>(r.newton_iters)};
}

PotentialState restore_potential(const SurfaceModel& model, Field f, const Field& f0,
                                 const Field& u) {
  PotentialState p;
  p.f = std::move(f);
  p.f0 = f0;
  potential_fields(model, p.f, u, p.h, p.grad_norm_max);
  return p;
}

// Integration state shared by fresh and resumed runs.
struct Session {
  fs::path dir;
  ExperimentConfig cfg;
  SurfaceModel model;
  std::vector<std::string> files;
  std::size_t next_index = 0;
  double last_saved_time = -1.0;
  std::optional<PotentialState> pot;

  void add_file(const std::string& name) {
    if (std::find(files.begin(), files.end(), name) == files.end()) files.push_back(name);
  }

  void save(const ConformalState& s) {
    save_snapshot(dir, next_index, s);
    add_file(snap_stem(next_index) + ".cric");
    add_file(snap_stem(next_index) + ".meta");
    if (pot) {
      write_array(dir / pot_name(next_index), pot->f);
      add_file(pot_name(next_index));
    }
    ++next_index;
    last_saved_time = s.time;
    write_manifest(dir, files, false);
  }
};

// Returns false when the flow stopped with an error (partial output kept).
bool integrate(Session& ss, const ConformalState& start, std::ostream& log) {
  const FlowConfig fc = flow_config(ss.cfg);
  CsvWriter csv(ss.dir / "series.csv", kSeriesColumns, true);
  ss.add_file("series.csv");
  const double eps = 1e-12 * std::max(1.0, std::abs(fc.t_end));
  const long every = ss.cfg.output.csv_every;

  auto observer = [&](const ConformalState& before, const ConformalState& after, int iters,
                      bool at_snapshot) {
    if (ss.pot) *ss.pot = evolve_potential(ss.model, *ss.pot, before, after.time - before.time);
    const bool last = after.time >= fc.t_end - eps;
    if (after.step_count % every == 0 || at_snapshot || last)
      csv.row(record_values(series_record(ss.model, after, iters)));
    if (at_snapshot) ss.save(after);
  };

  try {
    const Trajectory traj = run(ss.model, fc, start, observer);
    const ConformalState& fin = traj.snapshots.back();
    if (fin.time != ss.last_saved_time) ss.save(fin);
    log << "integrated to " << to_string(fin.mode) << " time " << fin.time << " in "
        << fin.step_count << " steps\n";
    return true;
  } catch (const FlowError& e) {
    log << "error: flow stopped: " << e.what() << "\n";
    write_manifest(ss.dir, ss.files, false);
    return false;
  }
}

int finalize(Session& ss, std::ostream& log) {
  const StoredRun stored = load_run(ss.dir);
  RunData data = stored.data;
  std::optional<Field> oracle;
  const auto checks = selected_checks(ss.cfg);
  if (std::find(checks.begin(), checks.end(), "convergence") != checks.end()) {
    oracle = uniformize_oracle(ss.model).U;
    write_array(ss.dir / "oracle.cric", *oracle);
    ss.add_file("oracle.cric");
  }
  if (ss.cfg.diagnostics.inject_fault) inject_fault(ss.model, data);
  const DiagnosticsReport rep =
      evaluate_checks(ss.model, ss.cfg, data, oracle ? &*oracle : nullptr);
  write_text(ss.dir / "diagnostics.txt", rep.to_text());
  ss.add_file("diagnostics.txt");
  for (const Series& s : rep.series) {
    const std::string name = "diag_" + s.name + ".csv";
    CsvWriter w(ss.dir / name, s.columns);
    for (const auto& row : s.rows) w.row(row);
    ss.add_file(name);
  }
  write_manifest(ss.dir, ss.files, true);
  log << rep.to_text();
  log << (rep.passed() ? "all checks passed\n" : "some checks failed\n");
  return rep.passed() ? kExitOk : kExitCheckFailed;
}

template <class F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    log << "error: config: " << e.what() << "\n";
  } catch (const FormatError& e) {
    log << "error: " << e.what() << "\n";
  } catch (const ModelError& e) {
    log << "error: model: " << e.what() << "\n";
  } catch (const OracleError& e) {
    log << "error: oracle: " << e.what() << "\n";
  } catch (const EllipticError& e) {
    log << "error: elliptic solve: " << e.what() << "\n";
  } catch (const DiagnosticsError& e) {
    log << "error: diagnostics: " << e.what() << "\n";
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
  }
  return kExitError;
}

}  // namespace

ConformalState rescaled_start(const SurfaceModel& model, const FlowConfig& config,
                              const ConformalState& raw_initial) {
  FlowConfig warm = config;
  warm.t_end = 1.0;
  warm.snapshot_schedule.clear();
  const Trajectory traj = run(model, warm, raw_initial);
  ConformalState s;
  s.mode = FlowMode::rescaled;
  s.time = 0.0;
  s.u = traj.snapshots.back().u;  // w = u / t at t = 1
  return s;
}

void inject_fault(const SurfaceModel& model, RunData& data) {
  if (data.snapshots.size() < 3) throw DiagnosticsError("fault injection needs three snapshots");
  ConformalState& s = data.snapshots[data.snapshots.size() / 2];
  for (NodeId n = 0; n < model.size(); ++n)
    if (in_flat_core(model, n)) {
      s.u[n] *= 1e-6;
      return;
    }
  throw DiagnosticsError("fault injection found no flat-core node");
}

DiagnosticsReport evaluate_checks(const SurfaceModel& model, const ExperimentConfig& cfg,
                                  const RunData& data, const Field* oracle) {
  const DiagnosticsSection& d = cfg.diagnostics;
  DiagnosticsReport rep;
  for (const std::string& name : selected_checks(cfg)) {
    if (name == "bounds") {
      rep.merge(check_bounds(model, data));
    } else if (name == "aronson_benilan") {
      rep.merge(check_aronson_benilan(model, data));
    } else if (name == "rescaled") {
      rep.merge(check_rescaled(model, data));
    } else if (name == "harnack") {
      const auto pairs =
          sample_harnack_pairs(model, data, d.harnack_pairs, d.harnack_seed, d.harnack_tau_min);
      rep.merge(check_harnack(model, data, pairs));
    } else if (name == "convergence") {
      if (!oracle) throw DiagnosticsError("convergence check needs the uniformizer");
      ConvergenceOptions opt;
      opt.error_threshold = d.error_threshold;
      opt.curvature_threshold = d.curvature_threshold;
      opt.monotone_from = d.monotone_from;
      opt.area_low = d.area_low;
      opt.area_high = d.area_high;
      opt.ball_radius = d.kappa_radius;
      opt.ball_samples = d.kappa_samples;
      opt.seed = d.kappa_seed;
      rep.merge(check_convergence(model, data, *oracle, opt));
    } else if (name == "curvature_decay") {
      CurvatureDecayOptions opt;
      opt.order_tau = cfg.model.perturbation_tau;
      rep.merge(check_curvature_decay(model, data, opt));
    } else if (name == "sign_conservation") {
      SignConservationOptions opt;
      opt.conservation_tol = d.conservation_tol;
      rep.merge(check_sign_and_conservation(model, data, opt));
    }
  }
  return rep;
}

StoredRun load_run(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  verify_manifest(dir, m);
  StoredRun out;
  out.config = load_config((dir / "config.toml").string());
  std::set<std::string> names;
  for (const ManifestEntry& e : m.files) names.insert(e.name);
  const ArrayFile model = read_array(dir / "model.cric");
  if (model.dims.size() != 2 || model.dims[0] != 4) throw FormatError("model.cric: bad dims");
  const std::size_t n = model.dims[1];

  RunData& d = out.data;
  d.mode = flow_mode(out.config);
  d.gauged = out.config.flow.gauge;
  d.newton_tol = out.config.flow.newton_tol;
  if (names.count("f0.cric")) d.f0 = read_field(dir / "f0.cric", n);
  for (std::size_t i = 0; names.count(snap_stem(i) + ".cric"); ++i) {
    d.snapshots.push_back(load_snapshot(dir, i, n));
    if (names.count(pot_name(i))) d.potentials.push_back(read_field(dir / pot_name(i), n));
  }
  if (d.snapshots.empty()) throw FormatError(dir.string() + ": no snapshots");
  if (!d.potentials.empty() && d.potentials.size() != d.snapshots.size())
    throw FormatError(dir.string() + ": potentials do not match snapshots");
  return out;
}

int run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  return guarded(log, [&] {
    validate(cfg);
    Session ss;
    ss.dir = cfg.output.directory;
    ss.cfg = cfg;
    if (fs::exists(ss.dir / "MANIFEST"))
      throw FormatError(ss.dir.string() + " already holds a run; use resume or another directory");
    fs::create_directories(ss.dir);
    fs::remove(ss.dir / "series.csv");
    write_text(ss.dir / "config.toml", serialize_config(cfg));
    ss.add_file("config.toml");

    ss.model = build_model(cfg);
    save_model(ss.dir, ss.model);
    ss.add_file("model.cric");
    ss.add_file("model.meta");
    log << "model: " << ss.model.size() << " nodes, " << ss.model.ends.size() << " ends\n";

    const FlowConfig fc = flow_config(cfg);
    ConformalState start = initial_state(ss.model, FlowMode::raw);
    if (cfg.flow.gauge) {
      const GaugeResult g = gauge_nonpositive(ss.model);
      for (std::size_t i = 0; i < start.u.size(); ++i) start.u[i] = std::exp(2.0 * g.psi[i]);
      write_array(ss.dir / "gauge.cric", g.psi);
      ss.add_file("gauge.cric");
      log << "gauge: bump mass " << g.bump_mass << ", min margin " << g.min_margin << "\n";
    }
    if (cfg.flow.track_potential) {
      const PotentialSolution p = solve_potential(ss.model, ss.model.background_curvature);
      write_array(ss.dir / "f0.cric", p.f);
      ss.add_file("f0.cric");
      ss.pot = make_potential_state(ss.model, p.f, start.u);
    }
    if (flow_mode(cfg) == FlowMode::rescaled) start = rescaled_start(ss.model, fc, start);

    CsvWriter csv(ss.dir / "series.csv", kSeriesColumns);
    csv.row(record_values(series_record(ss.model, start, 0)));
    ss.add_file("series.csv");
    ss.save(start);

    if (!integrate(ss, start, log)) return kExitError;
    return finalize(ss, log);
  });
}

int resume_experiment(const fs::path& dir, const std::vector<std::string>& overrides,
                      std::ostream& log) {
  return guarded(log, [&] {
    Manifest m = read_manifest(dir);
    // series.csv only grows; rows written after the last MANIFEST are dropped.
    for (const ManifestEntry& e : m.files)
      if (e.name == "series.csv" && fs::exists(dir / e.name) &&
          fs::file_size(dir / e.name) > e.bytes)
        fs::resize_file(dir / e.name, e.bytes);
    verify_manifest(dir, m);

    const ExperimentConfig before = load_config((dir / "config.toml").string());
    ExperimentConfig cfg = before;
    for (const std::string& o : overrides) {
      const std::string key = o.substr(0, o.find('='));
      if (key != "flow.t_end" && key != "output.csv_every" && key.rfind("diagnostics.", 0) != 0)
        throw ConfigError("resume cannot change " + key, 0);
      apply_override(cfg, o);
    }
    if (m.complete && cfg == before) {
      log << "run already complete; nothing to do\n";
      return kExitOk;
    }

    Session ss;
    ss.dir = dir;
    ss.cfg = cfg;
    ss.model = build_model(cfg);
    for (const ManifestEntry& e : m.files) {
      if (is_report_file(e.name)) {
        fs::remove(dir / e.name);
      } else {
        ss.files.push_back(e.name);
      }
    }
    write_manifest(dir, ss.files, false);
    const StoredRun stored = load_run(dir);
    const ConformalState& last = stored.data.snapshots.back();
    if (last.time > cfg.flow.t_end)
      throw ConfigError("flow.t_end lies before the last snapshot", 0);
    ss.next_index = stored.data.snapshots.size();
    ss.last_saved_time = last.time;
    if (cfg.flow.track_potential)
      ss.pot = restore_potential(ss.model, stored.data.potentials.back(), stored.data.f0, last.u);
    write_text(dir / "config.toml", serialize_config(cfg));
    write_manifest(dir, ss.files, false);
    log << "resuming from " << to_string(last.mode) << " time " << last.time << "\n";

    if (!integrate(ss, last, log)) return kExitError;
    return finalize(ss, log);
  });
}

int check_run(const fs::path& dir, std::ostream& log) {
  return guarded(log, [&] {
    StoredRun stored = load_run(dir);
    const SurfaceModel model = build_model(stored.config);
    std::optional<Field> oracle;
    const auto checks = selected_checks(stored.config);
    if (std::find(checks.begin(), checks.end(), "convergence") != checks.end())
      oracle = fs::exists(dir / "oracle.cric") ? read_field(dir / "oracle.cric", model.size())
                                               : uniformize_oracle(model).U;
    if (stored.config.diagnostics.inject_fault) inject_fault(model, stored.data);
    const DiagnosticsReport rep =
        evaluate_checks(model, stored.config, stored.data, oracle ? &*oracle : nullptr);
    log << rep.to_text();
    return rep.passed() ? kExitOk : kExitCheckFailed;
  });
}

int run_oracle(const ExperimentConfig& cfg, std::ostream& log) {
  return guarded(log, [&] {
    validate(cfg);
    const fs::path dir = cfg.output.directory;
    fs::create_directories(dir);
    const SurfaceModel model = build_model(cfg);
    const OracleResult o = uniformize_oracle(model);
    write_array(dir / "oracle.cric", o.U);

    const double total = area(model, o.U);
    const double target = 4.0 * std::numbers::pi * static_cast<double>(model.ends.size());
    std::string rep;
    auto line = [&](const std::string& k, const std::string& v) { rep += k + " " + v + "\n"; };
    line("residual_max", format_double(o.residual));
    line("tolerance", format_double(1e-8));
    line("iterations", std::to_string(o.iterations));
    line("retried", o.retried ? "true" : "false");
    line("area", format_double(total));
    line("area_over_4pi_k", format_double(total / target));
    // Per end: phi ~ beta log r + gamma near the rim, fitted on the two
    // outermost theta-averaged rows (log r = alpha rho - log alpha).
    for (const ChartGrid& g : model.charts) {
      if (g.kind != ChartKind::cylinder_end) continue;
      const double alpha = model.ends[static_cast<std::size_t>(g.end_index)].angle_alpha;
      const int nr = g.resolution[0], nt = g.resolution[1];
      auto row_mean = [&](int i) {
        double s = 0.0;
        int c = 0;
        for (int j = 0; j < nt; ++j)
          if (g.at(i, j) >= 0) {
            s += o.phi[static_cast<std::size_t>(g.at(i, j))];
            ++c;
          }
        return s / c;
      };
      const double rho1 = g.coordinate(nr - 2, 0).x, rho2 = g.coordinate(nr - 1, 0).x;
      const double lr1 = alpha * rho1 - std::log(alpha), lr2 = alpha * rho2 - std::log(alpha);
      const double p1 = row_mean(nr - 2), p2 = row_mean(nr - 1);
      const double beta = (p2 - p1) / (lr2 - lr1);
      line("end " + std::to_string(g.end_index),
           "alpha " + format_double(alpha) + " beta " + format_double(beta) + " gamma " +
               format_double(p2 - beta * lr2) + " rho_max " + format_double(rho2));
    }
    write_text(dir / "oracle_report.txt", rep);
    log << rep;
    return o.residual <= 1e-8 ? kExitOk : kExitCheckFailed;
  });
}

}  // namespace conic
