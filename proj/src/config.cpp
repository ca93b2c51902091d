#include "conic/config.hpp"

#include "conic/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace conic {

namespace {

struct Value {
  enum class Kind { scalar, string, list } kind = Kind::scalar;
  std::string text;                // scalar token or string contents
  std::vector<std::string> items;  // list items (strings unquoted)
  bool string_items = false;
};

using Lines = std::map<std::string, int>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside a string.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

std::string unquote(const std::string& tok, int line, const std::string& field) {
  if (tok.size() < 2 || tok.front() != '"' || tok.back() != '"')
    throw ConfigError(field + ": expected a double-quoted string", line);
  std::string out;
  for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
    if (tok[i] == '\\' && i + 2 < tok.size()) {
      out += tok[++i];
    } else if (tok[i] == '"') {
      throw ConfigError(field + ": stray quote in string", line);
    } else {
      out += tok[i];
    }
  }
  return out;
}

Value parse_value(const std::string& raw, int line, const std::string& field) {
  Value v;
  if (raw.empty()) throw ConfigError(field + ": missing value", line);
  if (raw.front() == '"') {
    v.kind = Value::Kind::string;
    v.text = unquote(raw, line, field);
    return v;
  }
  if (raw.front() == '[') {
    if (raw.back() != ']') throw ConfigError(field + ": unterminated list", line);
    v.kind = Value::Kind::list;
    const std::string body = trim(raw.substr(1, raw.size() - 2));
    if (body.empty()) return v;
    std::string cur;
    bool in_str = false;
    std::vector<std::string> toks;
    for (char c : body) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        toks.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    toks.push_back(trim(cur));
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const std::string& t = toks[i];
      if (t.empty()) throw ConfigError(field + ": empty list element", line);
      const bool is_str = t.front() == '"';
      if (i > 0 && is_str != v.string_items)
        throw ConfigError(field + ": list mixes strings and numbers", line);
      v.string_items = is_str;
      v.items.push_back(is_str ? unquote(t, line, field) : t);
    }
    return v;
  }
  v.text = raw;
  return v;
}

double as_number(const std::string& tok, int line, const std::string& field) {
  try {
    const double d = parse_double(tok);
    if (!std::isfinite(d)) throw FormatError("");
    return d;
  } catch (const FormatError&) {
    throw ConfigError(field + ": expected a number, got '" + tok + "'", line);
  }
}

long long as_integer(const std::string& tok, int line, const std::string& field) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || tok.empty())
    throw ConfigError(field + ": expected an integer, got '" + tok + "'", line);
  return v;
}

struct ConfigField {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const Value&, int)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

// Accessors from a config to a nested member, written as lambdas returning refs.
template <class Get>
ConfigField number_field(std::string sec, std::string key, Get get) {
  const std::string name = sec + "." + key;
  return {sec, key,
          [get, name](ExperimentConfig& c, const Value& v, int line) {
            if (v.kind != Value::Kind::scalar) throw ConfigError(name + ": expected a number", line);
            get(c) = as_number(v.text, line, name);
          },
          [get](const ExperimentConfig& c) {
            return format_double(get(const_cast<ExperimentConfig&>(c)));
          }};
}

template <class Get>
ConfigField integer_field(std::string sec, std::string key, Get get) {
  const std::string name = sec + "." + key;
  return {sec, key,
          [get, name](ExperimentConfig& c, const Value& v, int line) {
            if (v.kind != Value::Kind::scalar)
              throw ConfigError(name + ": expected an integer", line);
            const long long x = as_integer(v.text, line, name);
            using T = std::remove_reference_t<decltype(get(c))>;
            if constexpr (std::is_unsigned_v<T>) {
              if (x < 0) throw ConfigError(name + ": must be non-negative", line);
            } else {
              if (x < -2147483647LL || x > 2147483647LL)
                throw ConfigError(name + ": out of range", line);
            }
            get(c) = static_cast<T>(x);
          },
          [get](const ExperimentConfig& c) {
            return std::to_string(get(const_cast<ExperimentConfig&>(c)));
          }};
}

template <class Get>
ConfigField bool_field(std::string sec, std::string key, Get get) {
  const std::string name = sec + "." + key;
  return {sec, key,
          [get, name](ExperimentConfig& c, const Value& v, int line) {
            if (v.kind != Value::Kind::scalar || (v.text != "true" && v.text != "false"))
              throw ConfigError(name + ": expected true or false", line);
            get(c) = v.text == "true";
          },
          [get](const ExperimentConfig& c) {
            return std::string(get(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <class Get>
ConfigField string_field(std::string sec, std::string key, Get get) {
  const std::string name = sec + "." + key;
  return {sec, key,
          [get, name](ExperimentConfig& c, const Value& v, int line) {
            if (v.kind != Value::Kind::string) throw ConfigError(name + ": expected a string", line);
            get(c) = v.text;
          },
          [get](const ExperimentConfig& c) { return quote(get(const_cast<ExperimentConfig&>(c))); }};
}

template <class Get>
ConfigField number_list_field(std::string sec, std::string key, Get get, bool scalar_ok) {
  const std::string name = sec + "." + key;
  return {sec, key,
          [get, name, scalar_ok](ExperimentConfig& c, const Value& v, int line) {
            std::vector<double> out;
            if (v.kind == Value::Kind::scalar && scalar_ok) {
              out.push_back(as_number(v.text, line, name));
            } else if (v.kind == Value::Kind::list && (!v.string_items || v.items.empty())) {
              for (const std::string& t : v.items) out.push_back(as_number(t, line, name));
            } else {
              throw ConfigError(name + ": expected a list of numbers", line);
            }
            get(c) = out;
          },
          [get](const ExperimentConfig& c) {
            std::string s = "[";
            const auto& xs = get(const_cast<ExperimentConfig&>(c));
            for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + format_double(xs[i]);
            return s + "]";
          }};
}

template <class Get>
ConfigField string_list_field(std::string sec, std::string key, Get get) {
  const std::string name = sec + "." + key;
  return {sec, key,
          [get, name](ExperimentConfig& c, const Value& v, int line) {
            if (v.kind != Value::Kind::list || (!v.string_items && !v.items.empty()))
              throw ConfigError(name + ": expected a list of strings", line);
            get(c) = v.items;
          },
          [get](const ExperimentConfig& c) {
            std::string s = "[";
            const auto& xs = get(const_cast<ExperimentConfig&>(c));
            for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + quote(xs[i]);
            return s + "]";
          }};
}

#define REF(path) [](ExperimentConfig& c) -> auto& { return c.path; }

const std::vector<ConfigField>& fields() {
  static const std::vector<ConfigField> table{
      string_field("model", "fixture", REF(model.fixture)),
      integer_field("model", "punctures", REF(model.punctures)),
      number_list_field("model", "alpha", REF(model.alpha), true),
      number_list_field("model", "positions", REF(model.positions), false),
      integer_field("model", "resolution", REF(model.resolution)),
      integer_field("model", "theta_resolution", REF(model.theta_resolution)),
      number_field("model", "rho_min", REF(model.rho_min)),
      number_field("model", "rho_max", REF(model.rho_max)),
      number_field("model", "perturbation_amp", REF(model.perturbation_amp)),
      number_field("model", "perturbation_tau", REF(model.perturbation_tau)),
      number_field("model", "r_in", REF(model.r_in)),
      number_field("model", "r_out", REF(model.r_out)),
      number_field("model", "r_cut", REF(model.r_cut)),
      string_field("flow", "mode", REF(flow.mode)),
      number_field("flow", "dt_initial", REF(flow.dt_initial)),
      number_field("flow", "dt_max", REF(flow.dt_max)),
      number_field("flow", "safety_factor", REF(flow.safety_factor)),
      number_field("flow", "newton_tol", REF(flow.newton_tol)),
      integer_field("flow", "newton_max_iter", REF(flow.newton_max_iter)),
      number_field("flow", "t_end", REF(flow.t_end)),
      string_field("flow", "boundary", REF(flow.boundary)),
      bool_field("flow", "gauge", REF(flow.gauge)),
      bool_field("flow", "track_potential", REF(flow.track_potential)),
      string_list_field("diagnostics", "checks", REF(diagnostics.checks)),
      integer_field("diagnostics", "harnack_pairs", REF(diagnostics.harnack_pairs)),
      integer_field("diagnostics", "harnack_seed", REF(diagnostics.harnack_seed)),
      number_field("diagnostics", "harnack_tau_min", REF(diagnostics.harnack_tau_min)),
      integer_field("diagnostics", "kappa_samples", REF(diagnostics.kappa_samples)),
      number_field("diagnostics", "kappa_radius", REF(diagnostics.kappa_radius)),
      integer_field("diagnostics", "kappa_seed", REF(diagnostics.kappa_seed)),
      number_field("diagnostics", "conservation_tol", REF(diagnostics.conservation_tol)),
      number_field("diagnostics", "error_threshold", REF(diagnostics.error_threshold)),
      number_field("diagnostics", "curvature_threshold", REF(diagnostics.curvature_threshold)),
      number_field("diagnostics", "monotone_from", REF(diagnostics.monotone_from)),
      number_field("diagnostics", "area_low", REF(diagnostics.area_low)),
      number_field("diagnostics", "area_high", REF(diagnostics.area_high)),
      bool_field("diagnostics", "inject_fault", REF(diagnostics.inject_fault)),
      string_field("output", "directory", REF(output.directory)),
      number_list_field("output", "snapshot_schedule", REF(output.snapshot_schedule), false),
      integer_field("output", "csv_every", REF(output.csv_every)),
  };
  return table;
}

#undef REF

const ConfigField* find_field(const std::string& section, const std::string& key) {
  for (const ConfigField& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

void validate_impl(const ExperimentConfig& c, const Lines& lines) {
  auto fail = [&](const std::string& field, const std::string& msg) {
    const auto it = lines.find(field);
    throw ConfigError(field + ": " + msg, it == lines.end() ? 0 : it->second);
  };
  const ModelSection& m = c.model;
  if (m.fixture != "none" && m.fixture != "exact-cone" && m.fixture != "flat-torus")
    fail("model.fixture", "expected \"none\", \"exact-cone\" or \"flat-torus\"");
  if (m.punctures < 1) fail("model.punctures", "need at least one puncture");
  if (m.alpha.empty()) fail("model.alpha", "need at least one cone angle");
  for (double a : m.alpha)
    if (!(a > 0.0)) fail("model.alpha", "cone angle must be positive, got " + format_double(a));
  if (m.alpha.size() != 1 && m.alpha.size() != static_cast<std::size_t>(m.punctures))
    fail("model.alpha", "expected one value or one per puncture");
  if (!m.positions.empty() && m.positions.size() != 2 * static_cast<std::size_t>(m.punctures))
    fail("model.positions", "expected x, y pairs, one per puncture");
  if (m.resolution < 16) fail("model.resolution", "need at least 16");
  if (m.theta_resolution != 0 && m.theta_resolution < 16)
    fail("model.theta_resolution", "need 0 or at least 16");
  if (m.rho_max < 0.0) fail("model.rho_max", "must be non-negative");
  if (m.fixture == "exact-cone" && !(m.rho_max > m.rho_min))
    fail("model.rho_max", "exact-cone fixture needs rho_min < rho_max");
  if (!(m.perturbation_tau > 0.0)) fail("model.perturbation_tau", "must be positive");
  if (!(0.0 < m.r_cut && m.r_cut < m.r_in && m.r_in < m.r_out && m.r_out < 0.5))
    fail("model.r_out", "need 0 < r_cut < r_in < r_out < 0.5");

  const FlowSection& f = c.flow;
  if (f.mode != "raw" && f.mode != "rescaled") fail("flow.mode", "expected \"raw\" or \"rescaled\"");
  if (f.boundary != "dirichlet-one" && f.boundary != "asymptotic-decay")
    fail("flow.boundary", "expected \"dirichlet-one\" or \"asymptotic-decay\"");
  if (!(f.dt_initial > 0.0)) fail("flow.dt_initial", "must be positive");
  if (!(f.dt_max >= f.dt_initial)) fail("flow.dt_max", "must be at least dt_initial");
  if (!(f.safety_factor > 0.0 && f.safety_factor < 1.0))
    fail("flow.safety_factor", "must lie in (0, 1)");
  if (!(f.newton_tol > 0.0)) fail("flow.newton_tol", "must be positive");
  if (f.newton_max_iter < 1) fail("flow.newton_max_iter", "must be at least 1");
  if (!(f.t_end > 0.0)) fail("flow.t_end", "must be positive");
  if (f.track_potential && f.mode != "raw")
    fail("flow.track_potential", "potential tracking needs raw mode");

  const DiagnosticsSection& d = c.diagnostics;
  for (const std::string& name : d.checks)
    if (name != "auto" && std::find(kCheckNames.begin(), kCheckNames.end(), name) == kCheckNames.end())
      fail("diagnostics.checks", "unknown check \"" + name + "\"");
  if (d.harnack_pairs < 1) fail("diagnostics.harnack_pairs", "must be at least 1");
  if (d.kappa_samples < 1) fail("diagnostics.kappa_samples", "must be at least 1");
  if (!(d.kappa_radius > 0.0)) fail("diagnostics.kappa_radius", "must be positive");
  if (!(d.conservation_tol > 0.0)) fail("diagnostics.conservation_tol", "must be positive");
  if (!(d.error_threshold > 0.0)) fail("diagnostics.error_threshold", "must be positive");
  if (!(d.curvature_threshold > 0.0)) fail("diagnostics.curvature_threshold", "must be positive");
  if (!(d.area_low > 0.0 && d.area_low <= d.area_high)) fail("diagnostics.area_low", "need 0 < area_low <= area_high");

  const OutputSection& o = c.output;
  if (o.directory.empty()) fail("output.directory", "must not be empty");
  for (double t : o.snapshot_schedule)
    if (!(t >= 0.0)) fail("output.snapshot_schedule", "times must be non-negative");
  if (o.csv_every < 1) fail("output.csv_every", "must be at least 1");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  Lines lines;
  std::istringstream in(text);
  std::string raw_line;
  std::string section;
  int no = 0;
  while (std::getline(in, raw_line)) {
    ++no;
    const std::string line = trim(strip_comment(raw_line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header", no);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "flow" && section != "diagnostics" && section != "output")
        throw ConfigError("unknown section [" + section + "]", no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", no);
    const std::string key = trim(line.substr(0, eq));
    if (section.empty()) throw ConfigError("key '" + key + "' appears before any section", no);
    const std::string name = section + "." + key;
    const ConfigField* f = find_field(section, key);
    if (!f) throw ConfigError("unknown key '" + name + "'", no);
    if (lines.count(name)) throw ConfigError("duplicate key '" + name + "'", no);
    lines[name] = no;
    f->set(cfg, parse_value(trim(line.substr(eq + 1)), no, name), no);
  }
  validate_impl(cfg, lines);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path, 0);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const ConfigField& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: " + assignment, 0);
  const std::string section = trim(assignment.substr(0, dot));
  const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
  const ConfigField* f = find_field(section, key);
  if (!f) throw ConfigError("unknown key '" + section + "." + key + "'", 0);
  ExperimentConfig next = cfg;
  f->set(next, parse_value(trim(assignment.substr(eq + 1)), 0, section + "." + key), 0);
  validate_impl(next, {});
  cfg = next;
}

void validate(const ExperimentConfig& cfg) { validate_impl(cfg, {}); }

ModelDescription model_description(const ExperimentConfig& cfg) {
  const ModelSection& m = cfg.model;
  ModelDescription d;
  d.punctures = m.punctures;
  d.alphas = m.alpha;
  for (std::size_t i = 0; i + 1 < m.positions.size(); i += 2)
    d.positions.push_back({m.positions[i], m.positions[i + 1]});
  d.core_resolution = m.resolution;
  d.theta_resolution = m.theta_resolution;
  d.rho_max = m.rho_max;
  d.perturbation_amp = m.perturbation_amp;
  d.perturbation_tau = m.perturbation_tau;
  d.r_in = m.r_in;
  d.r_out = m.r_out;
  d.r_cut = m.r_cut;
  return d;
}

SurfaceModel build_model(const ExperimentConfig& cfg) {
  const ModelSection& m = cfg.model;
  if (m.fixture == "exact-cone")
    return build_exact_cone_fixture(m.alpha.front(),
                                    m.theta_resolution > 0 ? m.theta_resolution : m.resolution,
                                    m.rho_min, m.rho_max);
  if (m.fixture == "flat-torus") return build_flat_torus_fixture(m.resolution);
  return build_model(model_description(cfg));
}

FlowMode flow_mode(const ExperimentConfig& cfg) { return parse_flow_mode(cfg.flow.mode); }

FlowConfig flow_config(const ExperimentConfig& cfg) {
  FlowConfig f;
  f.dt_initial = cfg.flow.dt_initial;
  f.dt_max = cfg.flow.dt_max;
  f.safety_factor = cfg.flow.safety_factor;
  f.newton_tol = cfg.flow.newton_tol;
  f.newton_max_iter = cfg.flow.newton_max_iter;
  f.t_end = cfg.flow.t_end;
  f.boundary_mode = parse_boundary_mode(cfg.flow.boundary);
  f.snapshot_schedule = snapshot_times(cfg);
  return f;
}

std::vector<double> snapshot_times(const ExperimentConfig& cfg) {
  const double t_end = cfg.flow.t_end;
  std::vector<double> out;
  if (!cfg.output.snapshot_schedule.empty()) {
    for (double t : cfg.output.snapshot_schedule)
      if (t <= t_end) out.push_back(t);
  } else if (cfg.flow.mode == "rescaled") {
    for (int i = 1; 0.5 * i <= t_end; ++i) out.push_back(0.5 * i);
  } else {
    for (double t : {0.25, 0.5})
      if (t <= t_end) out.push_back(t);
    for (int i = 1; i <= t_end; ++i) out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::string> selected_checks(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  auto add = [&](const std::string& n) {
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  };
  for (const std::string& n : cfg.diagnostics.checks) {
    if (n != "auto") {
      add(n);
    } else if (cfg.flow.mode == "raw") {
      if (cfg.flow.t_end >= 10.0) add("bounds");
      add("aronson_benilan");
      add("curvature_decay");
      add("sign_conservation");
    } else {
      add("rescaled");
      add("harnack");
    }
  }
  return out;
}

}  // namespace conic
