#include "mgse/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace mgse {

namespace {

// Draws zero-mean Gaussian vectors with a given PSD covariance using a symmetric
// square root, so singular (or zero) covariances are allowed.
class GaussianSampler {
 public:
  explicit GaussianSampler(const Matrix& covariance) {
    if (covariance.size() == 0 || covariance.isZero(0.0)) {
      dim_ = covariance.rows();
      return;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(covariance));
    const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    root_ = eig.eigenvectors() * roots.asDiagonal();
    dim_ = covariance.rows();
  }

  Vector draw(std::mt19937_64& rng, std::normal_distribution<double>& normal) const {
    if (root_.size() == 0) return Vector::Zero(dim_);
    Vector white(dim_);
    for (Eigen::Index i = 0; i < dim_; ++i) white(i) = normal(rng);
    return root_ * white;
  }

 private:
  Matrix root_;
  Eigen::Index dim_ = 0;
};

Matrix block_diagonal(const std::vector<Matrix>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.rows();
  Matrix out = Matrix::Zero(n, n);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.block(at, at, b.rows(), b.cols()) = b;
    at += b.rows();
  }
  return out;
}

void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

void require_covariance(const Matrix& m, Eigen::Index n, const std::string& field) {
  require(m.rows() == n && m.cols() == n,
          field + " must be " + std::to_string(n) + "x" + std::to_string(n));
  require(is_symmetric_psd(m), field + " must be symmetric positive semidefinite");
}

}  // namespace

VoltageRegulator::VoltageRegulator(RegulatorGains gains, double dt) : gains_(gains), dt_(dt) {
  if (gains_.kp < 0.0 || gains_.ki < 0.0 || gains_.virtual_resistance < 0.0 ||
      gains_.droop < 0.0) {
    throw std::invalid_argument("regulator gains must be non-negative");
  }
}

void VoltageRegulator::preset(const DqSample& terminal_voltage, const Vector& dgu_state) {
  integrator_ = {terminal_voltage.d + gains_.virtual_resistance * dgu_state(2),
                 terminal_voltage.q + gains_.virtual_resistance * dgu_state(3)};
}

DqSample VoltageRegulator::regulate_terminal_voltage(const Vector& dgu_state, double reference) {
  const double e_d = reference - gains_.droop * dgu_state(2) - dgu_state(0);
  const double e_q = -dgu_state(1);
  DqSample out{integrator_.d + gains_.kp * e_d - gains_.virtual_resistance * dgu_state(2),
               integrator_.q + gains_.kp * e_q - gains_.virtual_resistance * dgu_state(3)};

  const double limit = 2.0 * std::abs(reference);
  const double magnitude = std::hypot(out.d, out.q);
  if (magnitude > limit) {
    const double scale = limit / magnitude;
    out.d *= scale;
    out.q *= scale;
    return out;
  }
  integrator_.d += gains_.ki * dt_ * e_d;
  integrator_.q += gains_.ki * dt_ * e_q;
  return out;
}

void SimConfig::validate() const {
  topology.validate();
  const int n = topology.n_buses;
  require(std::isfinite(duration) && duration >= 0.0, "simulation.duration must be >= 0");
  require(std::isfinite(plant_step) && plant_step > 0.0, "simulation.plant_step must be > 0");
  require(static_cast<int>(initial_loads.size()) == n,
          "simulation.initial_loads must have one entry per bus");

  double last = -1.0;
  for (std::size_t k = 0; k < events.size(); ++k) {
    const auto& e = events[k];
    const auto field = "simulation.events[" + std::to_string(k) + "]";
    require(std::isfinite(e.time) && e.time >= 0.0, field + ".time must be >= 0");
    require(e.time > last, field + ".time must be strictly increasing");
    require(e.bus >= 1 && e.bus <= n, field + ".bus outside 1..n_buses");
    require(e.time <= duration, field + ".time exceeds the simulation duration");
    last = e.time;
  }

  require(static_cast<int>(dgu_noise.size()) == n, "noise must have one DGU block per bus");
  for (int bus = 0; bus < n; ++bus) {
    const auto field = "noise.dgu[" + std::to_string(bus + 1) + "]";
    require_covariance(dgu_noise[bus].q, 4, field + ".q");
    require_covariance(dgu_noise[bus].r, 4, field + ".r");
    require_covariance(dgu_noise[bus].m, 4, field + ".m");
  }
  if (!topology.lines.empty()) {
    require_covariance(line_noise.q, 2, "noise.line.q");
    require_covariance(line_noise.r, 2, "noise.line.r");
  }

  if (fixed_terminal_voltages) {
    require(fixed_terminal_voltages->size() == 2 * n,
            "fixed terminal voltages must have 2 entries per bus");
  } else {
    require(std::isfinite(v_reference) && v_reference > 0.0, "controller reference must be > 0");
    VoltageRegulator(gains, plant_step);
  }
  if (initial_state) {
    const PlantLayout layout{n, static_cast<int>(topology.lines.size())};
    require(initial_state->size() == layout.n_states(), "initial state size mismatch");
  }
}

double phase_peak_from_line_rms(double v_line_rms) {
  return v_line_rms * std::sqrt(2.0) / std::sqrt(3.0);
}

Matrix plant_process_noise(const SimConfig& cfg) {
  std::vector<Matrix> blocks;
  for (const auto& d : cfg.dgu_noise) blocks.push_back(d.q);
  for (std::size_t k = 0; k < cfg.topology.lines.size(); ++k) blocks.push_back(cfg.line_noise.q);
  return block_diagonal(blocks);
}

Matrix plant_measurement_noise(const SimConfig& cfg) {
  std::vector<Matrix> blocks;
  for (const auto& d : cfg.dgu_noise) blocks.push_back(d.r);
  for (std::size_t k = 0; k < cfg.topology.lines.size(); ++k) blocks.push_back(cfg.line_noise.r);
  return block_diagonal(blocks);
}

Matrix input_measurement_noise(const SimConfig& cfg) {
  std::vector<Matrix> blocks;
  for (const auto& d : cfg.dgu_noise) blocks.push_back(d.m);
  return block_diagonal(blocks);
}

Matrix closed_loop_matrix(const SimConfig& cfg, const DiscreteLtiModel& plant) {
  if (cfg.fixed_terminal_voltages) return plant.a_d;

  const int nb = cfg.topology.n_buses;
  const PlantLayout layout{nb, static_cast<int>(cfg.topology.lines.size())};
  const int n = layout.n_states();
  const auto& g = cfg.gains;

  // Linear part of the regulator: v_t = z + feedback * x, z' = z + ki dt * error * x.
  Matrix error = Matrix::Zero(2 * nb, n);
  Matrix feedback = Matrix::Zero(2 * nb, n);
  for (int bus = 1; bus <= nb; ++bus) {
    const int s = layout.bus_state(bus);
    const int row = 2 * (bus - 1);
    error(row, s) = -1.0;
    error(row, s + 2) = -g.droop;
    error(row + 1, s + 1) = -1.0;
    feedback.row(row) = g.kp * error.row(row);
    feedback.row(row + 1) = g.kp * error.row(row + 1);
    feedback(row, s + 2) -= g.virtual_resistance;
    feedback(row + 1, s + 3) -= g.virtual_resistance;
  }

  const Matrix b_terminal = plant.b_d.leftCols(2 * nb);
  Matrix out = Matrix::Zero(n + 2 * nb, n + 2 * nb);
  out.topLeftCorner(n, n) = plant.a_d + b_terminal * feedback;
  out.topRightCorner(n, 2 * nb) = b_terminal;
  out.bottomLeftCorner(2 * nb, n) = g.ki * cfg.plant_step * error;
  out.bottomRightCorner(2 * nb, 2 * nb) = Matrix::Identity(2 * nb, 2 * nb);
  return out;
}

double spectral_radius(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> solver(m, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

double record_time(std::size_t k, double step) {
  return std::round(static_cast<double>(k) * step * 1e9) / 1e9;
}

std::size_t record_count(double duration, double step) {
  if (duration <= 0.0) return 0;
  return static_cast<std::size_t>(std::llround(std::floor(duration / step + 1e-9))) + 1;
}

PlantTrace run_plant(const SimConfig& cfg) {
  cfg.validate();
  const auto& topo = cfg.topology;
  const int nb = topo.n_buses;
  const auto plant = build_coupled_plant(topo);
  const auto& layout = plant.layout;
  const auto discrete = discretize_exact(plant.model, cfg.plant_step);

  const double rho = spectral_radius(closed_loop_matrix(cfg, discrete));
  if (!(rho < 1.0)) {
    std::ostringstream msg;
    msg << "closed-loop transition matrix has spectral radius " << rho << " >= 1";
    throw SimulationError(msg.str());
  }

  Vector loads(2 * nb);
  for (int bus = 0; bus < nb; ++bus) {
    loads(2 * bus) = cfg.initial_loads[bus].d;
    loads(2 * bus + 1) = cfg.initial_loads[bus].q;
  }

  Vector terminal(2 * nb);
  Vector x;
  if (cfg.fixed_terminal_voltages) {
    terminal = *cfg.fixed_terminal_voltages;
    if (cfg.initial_state) {
      x = *cfg.initial_state;
    } else {
      Vector u(layout.n_inputs());
      u << terminal, loads;
      x = equilibrium_state(plant.model, u);
    }
  } else {
    const auto op = regulated_operating_point(topo, loads, cfg.v_reference, cfg.gains.droop);
    x = cfg.initial_state ? *cfg.initial_state : op.state;
    terminal = op.terminal_voltages;
  }

  std::vector<VoltageRegulator> regulators;
  if (!cfg.fixed_terminal_voltages) {
    for (int bus = 1; bus <= nb; ++bus) {
      regulators.emplace_back(cfg.gains, cfg.plant_step);
      const int i = 2 * (bus - 1);
      regulators.back().preset({terminal(i), terminal(i + 1)},
                               x.segment<4>(layout.bus_state(bus)));
    }
  }

  const GaussianSampler process(plant_process_noise(cfg));
  const GaussianSampler measurement(plant_measurement_noise(cfg));
  const GaussianSampler input_noise(input_measurement_noise(cfg));
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const double nominal =
      std::max({1.0, cfg.v_reference, x.size() ? x.cwiseAbs().maxCoeff() : 0.0});

  PlantTrace trace;
  trace.step = cfg.plant_step;
  trace.state_labels = plant.model.state_labels;
  for (int bus = 1; bus <= nb; ++bus) {
    for (auto& l : dgu_input_labels(bus)) trace.input_labels.push_back(std::move(l));
  }

  const std::size_t count = record_count(cfg.duration, cfg.plant_step);
  trace.records.reserve(count);
  std::size_t next_event = 0;
  Vector u(layout.n_inputs());
  Vector inputs(4 * nb);

  for (std::size_t k = 0; k < count; ++k) {
    const double t = record_time(k, cfg.plant_step);
    while (next_event < cfg.events.size() &&
           cfg.events[next_event].time <= t + 1e-6 * cfg.plant_step) {
      const auto& e = cfg.events[next_event++];
      loads(2 * (e.bus - 1)) += e.load_delta.d;
      loads(2 * (e.bus - 1) + 1) += e.load_delta.q;
    }

    if (!regulators.empty()) {
      for (int bus = 1; bus <= nb; ++bus) {
        const auto v_t = regulators[bus - 1].regulate_terminal_voltage(
            x.segment<4>(layout.bus_state(bus)), cfg.v_reference);
        terminal(2 * (bus - 1)) = v_t.d;
        terminal(2 * (bus - 1) + 1) = v_t.q;
      }
    }
    u << terminal, loads;

    const Vector io = output_currents(topo, x, loads);
    for (int bus = 0; bus < nb; ++bus) {
      inputs.segment<2>(4 * bus) = terminal.segment<2>(2 * bus);
      inputs.segment<2>(4 * bus + 2) = io.segment<2>(2 * bus);
    }

    TraceRecord rec;
    rec.t = t;
    rec.true_state = x;
    rec.noisy_measurement = x + measurement.draw(rng, normal);
    rec.true_inputs = inputs;
    rec.measured_inputs = inputs + input_noise.draw(rng, normal);
    trace.records.push_back(std::move(rec));

    x = discrete.a_d * x + discrete.b_d * u + process.draw(rng, normal);

    Eigen::Index worst = 0;
    const double peak = x.cwiseAbs().maxCoeff(&worst);
    if (!std::isfinite(peak) || peak > 1e6 * nominal) {
      std::ostringstream msg;
      msg << "plant diverged at t=" << t << " s: |" << trace.state_labels[worst]
          << "| = " << peak << " exceeds 1e6 x nominal " << nominal;
      throw SimulationError(msg.str());
    }
  }
  return trace;
}

std::size_t downsample_factor(double source_rate_hz, double target_rate_hz) {
  if (!(source_rate_hz > 0.0) || !(target_rate_hz > 0.0)) {
    throw std::invalid_argument("sampling rates must be positive");
  }
  const double ratio = source_rate_hz / target_rate_hz;
  const double k = std::round(ratio);
  if (k < 1.0 || std::abs(ratio - k) > 1e-9 * ratio) {
    std::ostringstream msg;
    msg << "target rate " << target_rate_hz << " Hz does not divide source rate "
        << source_rate_hz << " Hz";
    throw std::invalid_argument(msg.str());
  }
  return static_cast<std::size_t>(k);
}

PlantTrace downsample(const PlantTrace& trace, double target_rate_hz) {
  const auto k = downsample_factor(1.0 / trace.step, target_rate_hz);
  PlantTrace out;
  out.step = trace.step * static_cast<double>(k);
  out.state_labels = trace.state_labels;
  out.input_labels = trace.input_labels;
  out.records = take_every(trace.records, k);
  return out;
}

}  // namespace mgse
