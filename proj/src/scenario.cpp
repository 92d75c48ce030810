#include "mgse/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

namespace mgse {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(path.empty() ? key : path + "." + key, "unknown key");
    }
  }
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

const json& member(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.contains(key)) fail(join(path, key), "missing required key");
  return obj.at(key);
}

double number(const json& obj, const std::string& path, const std::string& key) {
  const auto& v = member(obj, path, key);
  if (!v.is_number()) fail(join(path, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(join(path, key), "must be finite");
  return x;
}

double positive(const json& obj, const std::string& path, const std::string& key) {
  const double x = number(obj, path, key);
  if (!(x > 0.0)) fail(join(path, key), "must be positive");
  return x;
}

double non_negative(const json& obj, const std::string& path, const std::string& key) {
  const double x = number(obj, path, key);
  if (x < 0.0) fail(join(path, key), "must be non-negative");
  return x;
}

int integer(const json& obj, const std::string& path, const std::string& key) {
  const auto& v = member(obj, path, key);
  if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
  return v.get<int>();
}

const json& array(const json& obj, const std::string& path, const std::string& key) {
  const auto& v = member(obj, path, key);
  if (!v.is_array()) fail(join(path, key), "expected an array");
  return v;
}

std::string index_path(const std::string& path, std::size_t k) {
  return path + "[" + std::to_string(k) + "]";
}

DqSample dq(const json& obj, const std::string& path) {
  check_keys(obj, path, {"d", "q"});
  return {number(obj, path, "d"), number(obj, path, "q")};
}

struct NoiseStd {
  double process_v = 0.0, process_i = 0.0, process_line = 0.0;
  double meas_v = 0.0, meas_i = 0.0, meas_line = 0.0;
  double input_v = 0.0, input_i = 0.0;
};

NoiseStd parse_noise(const json& obj, const std::string& path) {
  check_keys(obj, path, {"process_std", "measurement_std", "input_std"});
  NoiseStd n;
  const auto p = join(path, "process_std");
  const auto& process = member(obj, path, "process_std");
  check_keys(process, p, {"v", "i_t", "i_line"});
  n.process_v = non_negative(process, p, "v");
  n.process_i = non_negative(process, p, "i_t");
  n.process_line = non_negative(process, p, "i_line");

  const auto mp = join(path, "measurement_std");
  const auto& meas = member(obj, path, "measurement_std");
  check_keys(meas, mp, {"v", "i_t", "i_line"});
  n.meas_v = non_negative(meas, mp, "v");
  n.meas_i = non_negative(meas, mp, "i_t");
  n.meas_line = non_negative(meas, mp, "i_line");

  const auto ip = join(path, "input_std");
  const auto& input = member(obj, path, "input_std");
  check_keys(input, ip, {"v_t", "i_o"});
  n.input_v = non_negative(input, ip, "v_t");
  n.input_i = non_negative(input, ip, "i_o");
  return n;
}

Matrix diag4(double a, double b) {
  Vector d(4);
  d << a * a, a * a, b * b, b * b;
  return d.asDiagonal();
}

NoiseSpec dgu_noise(const NoiseStd& n) {
  return {diag4(n.process_v, n.process_i), diag4(n.meas_v, n.meas_i),
          diag4(n.input_v, n.input_i)};
}

NoiseSpec line_noise(const NoiseStd& n) {
  const Matrix id = Matrix::Identity(2, 2);
  return {n.process_line * n.process_line * id, n.meas_line * n.meas_line * id,
          Matrix::Zero(2, 2)};
}

std::pair<int, int> line_and_column(const std::string& text, std::size_t byte) {
  int line = 1, column = 1;
  for (std::size_t k = 0; k < std::min(byte, text.size()); ++k) {
    if (text[k] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

}  // namespace

ScenarioConfig parse_scenario(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, column] = line_and_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) +
                      ": JSON parse error: " + e.what());
  }

  try {
    check_keys(root, "", {"topology", "controller", "simulation", "noise", "estimation", "output"});
    ScenarioConfig cfg;
    auto& sim = cfg.sim;

    // topology
    const auto& topo = member(root, "", "topology");
    check_keys(topo, "topology", {"frequency_hz", "dgus", "lines"});
    cfg.frequency_hz = positive(topo, "topology", "frequency_hz");
    sim.topology.omega = 2.0 * std::numbers::pi * cfg.frequency_hz;
    const auto& dgus = array(topo, "topology", "dgus");
    if (dgus.empty()) fail("topology.dgus", "needs at least one DGU");
    for (std::size_t k = 0; k < dgus.size(); ++k) {
      const auto path = index_path("topology.dgus", k);
      check_keys(dgus[k], path, {"bus", "r_t", "l_t", "c_t"});
      if (integer(dgus[k], path, "bus") != static_cast<int>(k) + 1) {
        fail(join(path, "bus"), "DGUs must be listed in bus order starting at 1");
      }
      sim.topology.dgus.push_back({positive(dgus[k], path, "r_t"), positive(dgus[k], path, "l_t"),
                                   positive(dgus[k], path, "c_t")});
    }
    sim.topology.n_buses = static_cast<int>(dgus.size());
    const auto& lines = array(topo, "topology", "lines");
    for (std::size_t k = 0; k < lines.size(); ++k) {
      const auto path = index_path("topology.lines", k);
      check_keys(lines[k], path, {"from", "to", "r", "l"});
      LineParams line{integer(lines[k], path, "from"), integer(lines[k], path, "to"),
                      positive(lines[k], path, "r"), positive(lines[k], path, "l")};
      if (line.from_bus >= line.to_bus) {
        fail(path, "lines must be oriented from the lower to the higher bus number");
      }
      sim.topology.lines.push_back(line);
    }
    try {
      sim.topology.validate();
    } catch (const std::invalid_argument& e) {
      fail("topology", e.what());
    }

    // controller
    const auto& ctl = member(root, "", "controller");
    check_keys(ctl, "controller", {"v_nominal_ll_rms", "kp", "ki", "virtual_resistance", "droop"});
    cfg.v_nominal_line_rms = positive(ctl, "controller", "v_nominal_ll_rms");
    sim.v_reference = phase_peak_from_line_rms(cfg.v_nominal_line_rms);
    sim.gains.kp = non_negative(ctl, "controller", "kp");
    sim.gains.ki = non_negative(ctl, "controller", "ki");
    sim.gains.virtual_resistance = non_negative(ctl, "controller", "virtual_resistance");
    sim.gains.droop = non_negative(ctl, "controller", "droop");

    // simulation
    const auto& s = member(root, "", "simulation");
    check_keys(s, "simulation", {"duration", "plant_step", "seed", "initial_loads", "events"});
    sim.duration = non_negative(s, "simulation", "duration");
    sim.plant_step = positive(s, "simulation", "plant_step");
    const auto& seed = member(s, "simulation", "seed");
    if (!seed.is_number_unsigned()) fail("simulation.seed", "expected a non-negative integer");
    sim.seed = seed.get<std::uint64_t>();
    const auto& loads = array(s, "simulation", "initial_loads");
    if (loads.size() != dgus.size()) fail("simulation.initial_loads", "needs one entry per bus");
    for (std::size_t k = 0; k < loads.size(); ++k) {
      sim.initial_loads.push_back(dq(loads[k], index_path("simulation.initial_loads", k)));
    }
    if (s.contains("events")) {
      const auto& events = array(s, "simulation", "events");
      for (std::size_t k = 0; k < events.size(); ++k) {
        const auto path = index_path("simulation.events", k);
        check_keys(events[k], path, {"time", "bus", "load_delta"});
        sim.events.push_back({non_negative(events[k], path, "time"), integer(events[k], path, "bus"),
                              dq(member(events[k], path, "load_delta"),
                                 join(path, "load_delta"))});
      }
    }

    // noise
    const auto plant_noise = parse_noise(member(root, "", "noise"), "noise");
    sim.dgu_noise.assign(dgus.size(), dgu_noise(plant_noise));
    sim.line_noise = line_noise(plant_noise);

    // estimation
    const auto& est = member(root, "", "estimation");
    check_keys(est, "estimation",
               {"local_rate_hz", "global_rate_hz", "discretization", "noise", "global_process_std",
                "metric_windows", "recovery_window", "pre_event_window"});
    auto& settings = cfg.estimation;
    settings.local_rate_hz = positive(est, "estimation", "local_rate_hz");
    settings.global_rate_hz = positive(est, "estimation", "global_rate_hz");
    if (est.contains("discretization")) {
      const auto& m = est.at("discretization");
      if (!m.is_string()) fail("estimation.discretization", "expected a string");
      try {
        settings.method = parse_discretization(m.get<std::string>());
      } catch (const std::invalid_argument& e) {
        fail("estimation.discretization", e.what());
      }
    }
    const auto est_noise =
        est.contains("noise") ? parse_noise(est.at("noise"), "estimation.noise") : plant_noise;
    settings.local_noise.assign(dgus.size(), dgu_noise(est_noise));
    const double gq = non_negative(est, "estimation", "global_process_std");
    const auto n_line = static_cast<Eigen::Index>(2 * lines.size());
    settings.global_q = gq * gq * Matrix::Identity(n_line, n_line);
    settings.global_r =
        est_noise.meas_line * est_noise.meas_line * Matrix::Identity(n_line, n_line);
    if (est.contains("metric_windows")) {
      const auto& windows = array(est, "estimation", "metric_windows");
      for (std::size_t k = 0; k < windows.size(); ++k) {
        const auto path = index_path("estimation.metric_windows", k);
        const auto& w = windows[k];
        if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number()) {
          fail(path, "expected [start, end]");
        }
        const TimeWindow tw{w[0].get<double>(), w[1].get<double>()};
        if (!(tw.end > tw.start) || tw.start < 0.0) fail(path, "needs 0 <= start < end");
        cfg.metric_windows.push_back(tw);
      }
    }
    if (est.contains("recovery_window")) {
      cfg.recovery_window = positive(est, "estimation", "recovery_window");
    }
    if (est.contains("pre_event_window")) {
      cfg.pre_event_window = positive(est, "estimation", "pre_event_window");
    }

    if (root.contains("output")) {
      const auto& out = root.at("output");
      check_keys(out, "output", {"directory"});
      const auto& dir = member(out, "output", "directory");
      if (!dir.is_string()) fail("output.directory", "expected a string");
      cfg.output_directory = dir.get<std::string>();
    }

    try {
      sim.validate();
      if (!sim.topology.lines.empty()) {
        downsample_factor(settings.local_rate_hz, settings.global_rate_hz);
      }
      downsample_factor(1.0 / sim.plant_step, settings.local_rate_hz);
    } catch (const std::invalid_argument& e) {
      fail("scenario", e.what());
    }
    return cfg;
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_scenario(text.str(), path.string());
}

void apply_overrides(ScenarioConfig& cfg, const ScenarioOverrides& o) {
  auto& sim = cfg.sim;
  if (o.seed) sim.seed = *o.seed;
  if (o.event_time) {
    if (sim.events.empty()) throw ConfigError("--event-time given but the scenario has no events");
    sim.events.front().time = *o.event_time;
  }
  if (o.duration) {
    if (!std::isfinite(*o.duration) || *o.duration < 0.0) {
      throw ConfigError("--duration must be non-negative");
    }
    sim.duration = *o.duration;
    std::erase_if(sim.events, [&](const LoadEvent& e) { return e.time > sim.duration; });
  }
  if (o.method) cfg.estimation.method = *o.method;
  if (o.output_directory) cfg.output_directory = *o.output_directory;
  try {
    sim.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("after overrides: ") + e.what());
  }
}

namespace {

std::vector<Vector> segment_of(const std::vector<TraceRecord>& records, bool measured,
                               Eigen::Index start, Eigen::Index size, std::size_t stride) {
  std::vector<Vector> out;
  for (std::size_t k = 0; k < records.size(); k += stride) {
    const auto& v = measured ? records[k].noisy_measurement : records[k].true_state;
    out.push_back(v.segment(start, size));
  }
  return out;
}

void add_channels(Metrics& metrics, const std::string& name, const EstimateTrace& est,
                  const std::vector<Vector>& truth, const std::vector<Vector>& measured,
                  const ScenarioConfig& cfg, bool with_recovery) {
  const auto n = static_cast<Eigen::Index>(est.labels.size());
  std::vector<RmseResult> est_rmse, meas_rmse;
  for (const auto& w : metrics.windows) {
    est_rmse.push_back(rmse(est.estimate, truth, est.t, {w}));
    meas_rmse.push_back(rmse(measured, truth, est.t, {w}));
  }

  std::vector<Vector> errors;
  errors.reserve(truth.size());
  for (std::size_t k = 0; k < truth.size(); ++k) errors.push_back(est.estimate[k] - truth[k]);

  for (Eigen::Index c = 0; c < n; ++c) {
    ChannelMetrics ch;
    ch.estimator = name;
    ch.channel = est.labels[c];
    for (std::size_t w = 0; w < metrics.windows.size(); ++w) {
      ch.rmse_estimate.push_back(est_rmse[w].per_channel(c));
      ch.rmse_measurement.push_back(meas_rmse[w].per_channel(c));
    }
    if (with_recovery && !metrics.event_times.empty()) {
      const auto err = channel(errors, c);
      for (double te : metrics.event_times) {
        const auto pre = rmse(est.estimate, truth, est.t,
                              {{std::max(0.0, te - cfg.pre_event_window), te - 1e-9}});
        if (!ch.pre_event_rmse) ch.pre_event_rmse = pre.per_channel(c);
        ch.recovery_time.push_back(
            recovery_time(est.t, err, te, 3.0 * pre.per_channel(c), cfg.recovery_window));
      }
    }
    metrics.channels.push_back(std::move(ch));
  }

  EstimatorMetrics em;
  em.name = name;
  em.state_dim = static_cast<int>(n);
  std::vector<Vector> innovations;
  std::vector<Matrix> covariances;
  for (std::size_t k = 0; k < est.innovation.size(); ++k) {
    const double t = est.t[k + 1];
    const bool inside = std::any_of(metrics.windows.begin(), metrics.windows.end(),
                                    [&](const TimeWindow& w) { return t >= w.start && t <= w.end; });
    if (!inside) continue;
    innovations.push_back(est.innovation[k]);
    covariances.push_back(est.innovation_covariance[k]);
  }
  em.nis = innovations.size() >= kMinConsistencySamples
               ? innovation_consistency(innovations, covariances)
               : std::nan("");
  metrics.estimators.push_back(em);
}

}  // namespace

Metrics compute_metrics(const ScenarioConfig& cfg, const PlantTrace& trace,
                        const DecentralizedResult& result) {
  Metrics metrics;
  metrics.windows = cfg.metric_windows;
  if (metrics.windows.empty() && !trace.records.empty()) {
    metrics.windows.push_back({trace.records.front().t, trace.records.back().t});
  }
  for (const auto& e : cfg.sim.events) metrics.event_times.push_back(e.time);
  if (trace.records.empty()) return metrics;

  const int nb = cfg.sim.topology.n_buses;
  const auto local_stride = downsample_factor(1.0 / trace.step, cfg.estimation.local_rate_hz);
  for (int bus = 1; bus <= nb; ++bus) {
    const auto& est = result.local[bus - 1];
    add_channels(metrics, "local_" + std::to_string(bus), est,
                 segment_of(trace.records, false, 4 * (bus - 1), 4, local_stride),
                 segment_of(trace.records, true, 4 * (bus - 1), 4, local_stride), cfg, true);
  }
  if (!cfg.sim.topology.lines.empty()) {
    const auto stride = local_stride * result.global_stride;
    const auto n_line = static_cast<Eigen::Index>(2 * cfg.sim.topology.lines.size());
    add_channels(metrics, "global", result.global,
                 segment_of(trace.records, false, 4 * nb, n_line, stride),
                 segment_of(trace.records, true, 4 * nb, n_line, stride), cfg, false);
  }
  return metrics;
}

namespace {

json optional_number(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

}  // namespace

json metrics_to_json(const Metrics& m) {
  json out;
  out["windows"] = json::array();
  for (const auto& w : m.windows) out["windows"].push_back({w.start, w.end});
  out["event_times"] = m.event_times;
  out["channels"] = json::array();
  for (const auto& c : m.channels) {
    json ch;
    ch["estimator"] = c.estimator;
    ch["channel"] = c.channel;
    ch["rmse_estimate"] = c.rmse_estimate;
    ch["rmse_measurement"] = c.rmse_measurement;
    ch["pre_event_rmse"] = optional_number(c.pre_event_rmse);
    ch["recovery_time"] = json::array();
    for (const auto& r : c.recovery_time) ch["recovery_time"].push_back(optional_number(r));
    out["channels"].push_back(std::move(ch));
  }
  out["estimators"] = json::array();
  for (const auto& e : m.estimators) {
    out["estimators"].push_back(
        {{"name", e.name}, {"state_dim", e.state_dim}, {"nis", optional_number(e.nis)}});
  }
  return out;
}

namespace {

const json& field(const json& obj, const char* key, const char* where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ConfigError(std::string("metrics: ") + where + " is missing '" + key + "'");
  }
  return obj.at(key);
}

std::string fmt(const json& v, int precision = 4) {
  if (v.is_null()) return "-";
  if (!v.is_number()) throw ConfigError("metrics: expected a number");
  std::ostringstream s;
  s << std::setprecision(precision) << v.get<double>();
  return s.str();
}

}  // namespace

std::string format_report(const json& metrics) {
  if (metrics.is_null() || (metrics.is_object() && metrics.empty())) return "no data\n";
  if (!metrics.is_object()) throw ConfigError("metrics: top level must be an object");
  if (!metrics.contains("channels")) return "no data\n";
  const auto& channels = metrics.at("channels");
  if (!channels.is_array()) throw ConfigError("metrics: 'channels' must be an array");
  if (channels.empty()) return "no data\n";

  const auto& windows = field(metrics, "windows", "document");
  if (!windows.is_array()) throw ConfigError("metrics: 'windows' must be an array");

  std::ostringstream out;
  out << std::left << std::setw(10) << "estimator" << std::setw(10) << "channel";
  for (const auto& w : windows) {
    if (!w.is_array() || w.size() != 2) throw ConfigError("metrics: malformed window");
    const auto label = "[" + fmt(w[0], 3) + "," + fmt(w[1], 3) + "]";
    out << std::setw(12) << ("est" + label) << std::setw(12) << "meas" << std::setw(8) << "ratio";
  }
  out << "recovery\n";

  for (const auto& ch : channels) {
    const auto& est = field(ch, "rmse_estimate", "channel");
    const auto& meas = field(ch, "rmse_measurement", "channel");
    if (!est.is_array() || !meas.is_array() || est.size() != windows.size() ||
        meas.size() != windows.size()) {
      throw ConfigError("metrics: channel RMSE arrays must match the window count");
    }
    const auto& name = field(ch, "estimator", "channel");
    const auto& label = field(ch, "channel", "channel");
    if (!name.is_string() || !label.is_string()) throw ConfigError("metrics: names must be strings");
    out << std::setw(10) << name.get<std::string>() << std::setw(10) << label.get<std::string>();
    for (std::size_t w = 0; w < windows.size(); ++w) {
      json ratio = nullptr;
      if (est[w].is_number() && meas[w].is_number() && meas[w].get<double>() > 0.0) {
        ratio = est[w].get<double>() / meas[w].get<double>();
      }
      out << std::setw(12) << fmt(est[w]) << std::setw(12) << fmt(meas[w]) << std::setw(8)
          << fmt(ratio, 3);
    }
    std::string recovery = "-";
    if (ch.contains("recovery_time") && ch.at("recovery_time").is_array()) {
      recovery.clear();
      for (const auto& r : ch.at("recovery_time")) {
        if (!recovery.empty()) recovery += ' ';
        recovery += r.is_null() ? std::string("never") : fmt(r, 3) + "s";
      }
      if (recovery.empty()) recovery = "-";
    }
    out << recovery << '\n';
  }

  if (metrics.contains("estimators") && metrics.at("estimators").is_array()) {
    out << '\n' << std::setw(10) << "estimator" << std::setw(8) << "dim" << "NIS\n";
    for (const auto& e : metrics.at("estimators")) {
      out << std::setw(10) << field(e, "name", "estimator").get<std::string>() << std::setw(8)
          << fmt(field(e, "state_dim", "estimator")) << fmt(field(e, "nis", "estimator")) << '\n';
    }
  }
  return out.str();
}

}  // namespace mgse
