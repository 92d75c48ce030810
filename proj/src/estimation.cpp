#include "mgse/estimation.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>

namespace mgse {

LocalMeasurements local_measurements(const PlantTrace& trace, int bus) {
  const int s = 4 * (bus - 1);
  LocalMeasurements out;
  out.t.reserve(trace.records.size());
  out.z.reserve(trace.records.size());
  out.u.reserve(trace.records.size());
  for (const auto& rec : trace.records) {
    if (rec.noisy_measurement.size() < s + 4 || rec.measured_inputs.size() < s + 4) {
      throw std::invalid_argument("trace has no channels for bus " + std::to_string(bus));
    }
    out.t.push_back(rec.t);
    out.z.push_back(rec.noisy_measurement.segment<4>(s));
    out.u.push_back(rec.measured_inputs.segment<4>(s));
  }
  return out;
}

std::vector<Vector> line_measurements(const PlantTrace& trace, int n_buses) {
  std::vector<Vector> out;
  out.reserve(trace.records.size());
  for (const auto& rec : trace.records) {
    out.push_back(rec.noisy_measurement.tail(rec.noisy_measurement.size() - 4 * n_buses));
  }
  return out;
}

LocalEstimator make_local_estimator(const MicrogridTopology& topology, int bus,
                                    const NoiseSpec& noise, double rate_hz,
                                    DiscretizationMethod method) {
  if (bus < 1 || bus > topology.n_buses) throw std::invalid_argument("bus outside topology");
  if (!(rate_hz > 0.0)) throw std::invalid_argument("local estimator rate must be positive");
  auto model = discretize(build_dgu_model(topology.dgus[bus - 1], topology.omega, bus),
                          1.0 / rate_hz, method);
  auto filter = KalmanEstimator::from_noise(std::move(model), noise, Vector::Zero(4), noise.r);
  return {bus, std::move(filter), rate_hz};
}

Matrix voltage_difference_map(const std::vector<LineParams>& lines, int n_buses) {
  Matrix map = Matrix::Zero(2 * static_cast<Eigen::Index>(lines.size()), 2 * n_buses);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(2 * k);
    map.block(row, 2 * (lines[k].from_bus - 1), 2, 2) = Matrix::Identity(2, 2);
    map.block(row, 2 * (lines[k].to_bus - 1), 2, 2) = -Matrix::Identity(2, 2);
  }
  return map;
}

GlobalEstimator make_global_estimator(const MicrogridTopology& topology, const Matrix& q_lines,
                                      const Matrix& r_lines, const Matrix& bus_voltage_covariance,
                                      double rate_hz, DiscretizationMethod method) {
  topology.validate();
  if (topology.lines.empty()) throw std::invalid_argument("global estimator needs lines");
  if (!(rate_hz > 0.0)) throw std::invalid_argument("global estimator rate must be positive");
  const auto n = static_cast<Eigen::Index>(2 * topology.lines.size());

  ContinuousLtiModel lines;
  lines.a = Matrix::Zero(n, n);
  lines.b = Matrix::Zero(n, n);
  for (std::size_t k = 0; k < topology.lines.size(); ++k) {
    const auto m = build_line_model(topology.lines[k], topology.omega);
    const auto at = static_cast<Eigen::Index>(2 * k);
    lines.a.block(at, at, 2, 2) = m.a;
    lines.b.block(at, at, 2, 2) = m.b;
    lines.state_labels.insert(lines.state_labels.end(), m.state_labels.begin(),
                              m.state_labels.end());
    lines.input_labels.insert(lines.input_labels.end(), m.input_labels.begin(),
                              m.input_labels.end());
  }

  const Matrix map = voltage_difference_map(topology.lines, topology.n_buses);
  if (bus_voltage_covariance.rows() != map.cols() || bus_voltage_covariance.cols() != map.cols()) {
    throw std::invalid_argument("bus voltage covariance must be 2N x 2N");
  }
  NoiseSpec noise{q_lines, r_lines, symmetrized(map * bus_voltage_covariance * map.transpose())};
  auto model = discretize(lines, 1.0 / rate_hz, method);
  auto filter = KalmanEstimator::from_noise(std::move(model), noise, Vector::Zero(n), r_lines);
  return {topology.lines, topology.n_buses, std::move(filter), rate_hz};
}

Matrix local_steady_state_covariance(const LocalEstimator& est) {
  const auto& f = est.filter;
  return steady_state_covariance(f.model().a_d, f.process_noise(), f.measurement_noise())
      .posterior;
}

namespace {

EstimateTrace run_filter(KalmanEstimator& filter, const std::vector<double>& t,
                         const std::vector<Vector>& z, const std::vector<Vector>& u,
                         const char* who) {
  if (z.size() != t.size() || u.size() != t.size()) {
    throw std::invalid_argument(std::string(who) + ": measurement streams differ in length");
  }
  EstimateTrace out;
  out.labels = filter.model().state_labels;
  out.t = t;
  out.estimate.reserve(t.size());
  out.innovation.reserve(t.size());
  out.innovation_covariance.reserve(t.size());
  out.inputs.reserve(t.size());
  if (t.empty()) return out;

  filter.reset(z.front(), filter.measurement_noise());
  out.estimate.push_back(filter.state());
  for (std::size_t k = 1; k < t.size(); ++k) {
    try {
      auto r = filter.step(u[k - 1], z[k]);
      out.innovation.push_back(std::move(r.innovation));
      out.innovation_covariance.push_back(std::move(r.innovation_covariance));
    } catch (const std::exception& e) {
      throw KalmanError(std::string(who) + ": sample " + std::to_string(k) + " (t=" +
                        std::to_string(t[k]) + " s): " + e.what());
    }
    out.inputs.push_back(u[k - 1]);
    out.estimate.push_back(filter.state());
  }
  return out;
}

}  // namespace

EstimateTrace run_local(LocalEstimator& est, const LocalMeasurements& m) {
  const std::string who = "local estimator " + std::to_string(est.bus);
  return run_filter(est.filter, m.t, m.z, m.u, who.c_str());
}

EstimateTrace run_global(GlobalEstimator& est, const std::vector<double>& voltage_times,
                         const std::vector<Vector>& bus_voltages,
                         const std::vector<double>& current_times,
                         const std::vector<Vector>& line_currents) {
  if (voltage_times.size() != current_times.size() || bus_voltages.size() != voltage_times.size()) {
    throw std::invalid_argument("global estimator: voltage and current streams differ in length");
  }
  const double tol = 1e-6 / est.rate_hz;
  for (std::size_t k = 0; k < voltage_times.size(); ++k) {
    if (std::abs(voltage_times[k] - current_times[k]) > tol) {
      throw std::invalid_argument("global estimator: timestamps misaligned at sample " +
                                  std::to_string(k));
    }
    if (k > 0 && std::abs(current_times[k] - current_times[k - 1] - 1.0 / est.rate_hz) > tol) {
      throw std::invalid_argument("global estimator: samples are not at the configured rate");
    }
  }
  const Matrix map = voltage_difference_map(est.lines, est.n_buses);
  std::vector<Vector> inputs;
  inputs.reserve(bus_voltages.size());
  for (const auto& v : bus_voltages) inputs.push_back(map * v);
  return run_filter(est.filter, current_times, line_currents, inputs, "global estimator");
}

DecentralizedResult run_decentralized(const MicrogridTopology& topology, const PlantTrace& trace,
                                      const EstimatorSettings& settings, bool parallel) {
  const int nb = topology.n_buses;
  if (static_cast<int>(settings.local_noise.size()) != nb) {
    throw std::invalid_argument("estimator settings need one local noise block per bus");
  }
  const PlantTrace local_trace = downsample(trace, settings.local_rate_hz);

  std::vector<LocalEstimator> locals;
  for (int bus = 1; bus <= nb; ++bus) {
    locals.push_back(make_local_estimator(topology, bus, settings.local_noise[bus - 1],
                                          settings.local_rate_hz, settings.method));
  }

  DecentralizedResult result;
  result.local.resize(static_cast<std::size_t>(nb));
  if (parallel) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nb));
    std::vector<std::thread> workers;
    for (int i = 0; i < nb; ++i) {
      workers.emplace_back([&, i] {
        try {
          result.local[i] = run_local(locals[i], local_measurements(local_trace, i + 1));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (int i = 0; i < nb; ++i) {
      result.local[i] = run_local(locals[i], local_measurements(local_trace, i + 1));
    }
  }

  if (topology.lines.empty()) return result;

  Matrix voltage_cov = Matrix::Zero(2 * nb, 2 * nb);
  for (int i = 0; i < nb; ++i) {
    voltage_cov.block(2 * i, 2 * i, 2, 2) =
        local_steady_state_covariance(locals[i]).topLeftCorner(2, 2);
  }
  auto global = make_global_estimator(topology, settings.global_q, settings.global_r, voltage_cov,
                                      settings.global_rate_hz, settings.method);

  result.global_stride = downsample_factor(settings.local_rate_hz, settings.global_rate_hz);
  const auto stride = result.global_stride;
  std::vector<double> times;
  std::vector<Vector> voltages;
  std::vector<Vector> currents;
  const auto all_currents = line_measurements(local_trace, nb);
  for (std::size_t k = 0; k < local_trace.records.size(); k += stride) {
    Vector v(2 * nb);
    for (int i = 0; i < nb; ++i) v.segment<2>(2 * i) = result.local[i].estimate[k].head<2>();
    times.push_back(local_trace.records[k].t);
    voltages.push_back(std::move(v));
    currents.push_back(all_currents[k]);
  }
  result.global = run_global(global, times, voltages, times, currents);
  return result;
}

RmseResult rmse(const std::vector<Vector>& estimate, const std::vector<Vector>& truth) {
  return rmse(estimate, truth, {}, {});
}

RmseResult rmse(const std::vector<Vector>& estimate, const std::vector<Vector>& truth,
                const std::vector<double>& t, const std::vector<TimeWindow>& windows) {
  if (estimate.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
  if (!windows.empty() && t.size() != estimate.size()) {
    throw std::invalid_argument("rmse: time vector length mismatch");
  }
  RmseResult out;
  if (estimate.empty()) return out;
  const auto n = estimate.front().size();
  Vector sum = Vector::Zero(n);
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    if (estimate[k].size() != n || truth[k].size() != n) {
      throw std::invalid_argument("rmse: channel count mismatch at sample " + std::to_string(k));
    }
    if (!windows.empty()) {
      bool inside = false;
      for (const auto& w : windows) inside = inside || (t[k] >= w.start && t[k] <= w.end);
      if (!inside) continue;
    }
    sum += (estimate[k] - truth[k]).cwiseAbs2();
    ++out.samples;
  }
  if (out.samples == 0) {
    out.per_channel = Vector::Zero(n);
    return out;
  }
  const double count = static_cast<double>(out.samples);
  out.per_channel = (sum / count).cwiseSqrt();
  out.aggregate = std::sqrt(sum.sum() / (count * static_cast<double>(n)));
  return out;
}

std::optional<double> recovery_time(const std::vector<double>& t, const std::vector<double>& error,
                                    double event_time, double threshold, double window) {
  if (t.size() != error.size()) throw std::invalid_argument("recovery_time: length mismatch");
  // Prefix sums of squared error for O(1) window RMS.
  std::vector<double> prefix(error.size() + 1, 0.0);
  for (std::size_t k = 0; k < error.size(); ++k) prefix[k + 1] = prefix[k] + error[k] * error[k];

  std::size_t end = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] < event_time) continue;
    end = std::max(end, k + 1);
    while (end < t.size() && t[end] < t[k] + window) ++end;
    const double rms = std::sqrt((prefix[end] - prefix[k]) / static_cast<double>(end - k));
    if (rms <= threshold) return t[k] - event_time;
  }
  return std::nullopt;
}

std::vector<double> channel(const std::vector<Vector>& samples, Eigen::Index index) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s(index));
  return out;
}

}  // namespace mgse
