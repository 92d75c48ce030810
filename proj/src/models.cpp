#include "mgse/models.hpp"

#include <cmath>
#include <queue>
#include <set>
#include <stdexcept>

namespace mgse {

namespace {

void require_positive(double value, const std::string& field) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw std::invalid_argument(field + " must be a finite positive number");
  }
}

}  // namespace

void validate(const DguParams& p) {
  require_positive(p.r_t, "dgu.r_t");
  require_positive(p.l_t, "dgu.l_t");
  require_positive(p.c_t, "dgu.c_t");
}

void validate(const LineParams& p) {
  require_positive(p.r, "line.r");
  require_positive(p.l, "line.l");
  if (p.from_bus == p.to_bus) {
    throw std::invalid_argument("line.from_bus and line.to_bus must differ");
  }
}

void MicrogridTopology::validate() const {
  if (n_buses < 1) throw std::invalid_argument("topology.n_buses must be at least 1");
  if (static_cast<int>(dgus.size()) != n_buses) {
    throw std::invalid_argument("topology.dgus must have one entry per bus");
  }
  if (!std::isfinite(omega) || omega < 0.0) {
    throw std::invalid_argument("topology.omega must be finite and non-negative");
  }
  for (const auto& d : dgus) mgse::validate(d);

  std::set<std::pair<int, int>> seen;
  std::vector<std::vector<int>> adjacency(static_cast<std::size_t>(n_buses));
  for (const auto& line : lines) {
    mgse::validate(line);
    if (line.from_bus < 1 || line.from_bus > n_buses || line.to_bus < 1 ||
        line.to_bus > n_buses) {
      throw std::invalid_argument("line endpoint outside 1..n_buses");
    }
    const auto key = std::minmax(line.from_bus, line.to_bus);
    if (!seen.insert(key).second) {
      throw std::invalid_argument("duplicate line " + line_suffix(line));
    }
    adjacency[line.from_bus - 1].push_back(line.to_bus - 1);
    adjacency[line.to_bus - 1].push_back(line.from_bus - 1);
  }

  std::vector<bool> reached(static_cast<std::size_t>(n_buses), false);
  std::queue<int> frontier;
  frontier.push(0);
  reached[0] = true;
  int count = 1;
  while (!frontier.empty()) {
    const int bus = frontier.front();
    frontier.pop();
    for (int next : adjacency[bus]) {
      if (!reached[next]) {
        reached[next] = true;
        ++count;
        frontier.push(next);
      }
    }
  }
  if (count != n_buses) throw std::invalid_argument("topology is not connected");
}

void ContinuousLtiModel::validate() const {
  if (a.rows() != a.cols()) throw std::invalid_argument("state matrix must be square");
  if (b.rows() != a.rows()) throw std::invalid_argument("input matrix row count mismatch");
  if (!a.allFinite() || !b.allFinite()) throw std::invalid_argument("model has non-finite entries");
  if (static_cast<Eigen::Index>(state_labels.size()) != a.rows() ||
      static_cast<Eigen::Index>(input_labels.size()) != b.cols()) {
    throw std::invalid_argument("model label count mismatch");
  }
}

std::vector<std::string> dgu_state_labels(int bus) {
  const auto n = std::to_string(bus);
  return {"v_d" + n, "v_q" + n, "i_td" + n, "i_tq" + n};
}

std::vector<std::string> dgu_input_labels(int bus) {
  const auto n = std::to_string(bus);
  return {"v_td" + n, "v_tq" + n, "i_od" + n, "i_oq" + n};
}

std::string line_suffix(const LineParams& p) {
  return std::to_string(p.from_bus) + std::to_string(p.to_bus);
}

ContinuousLtiModel build_dgu_model(const DguParams& p, double omega, int bus) {
  validate(p);
  const double inv_c = 1.0 / p.c_t;
  const double inv_l = 1.0 / p.l_t;
  const double damping = p.r_t / p.l_t;

  ContinuousLtiModel m;
  m.a = Matrix::Zero(4, 4);
  m.a << 0.0, omega, inv_c, 0.0,
         -omega, 0.0, 0.0, inv_c,
         -inv_l, 0.0, -damping, omega,
         0.0, -inv_l, -omega, -damping;
  m.b = Matrix::Zero(4, 4);
  m.b << 0.0, 0.0, -inv_c, 0.0,
         0.0, 0.0, 0.0, -inv_c,
         inv_l, 0.0, 0.0, 0.0,
         0.0, inv_l, 0.0, 0.0;
  m.state_labels = dgu_state_labels(bus);
  m.input_labels = dgu_input_labels(bus);
  return m;
}

ContinuousLtiModel build_line_model(const LineParams& p, double omega) {
  validate(p);
  const double damping = p.r / p.l;
  ContinuousLtiModel m;
  m.a = Matrix::Zero(2, 2);
  m.a << -damping, omega,
         -omega, -damping;
  m.b = Matrix::Identity(2, 2) / p.l;
  const auto s = line_suffix(p);
  m.state_labels = {"i_d" + s, "i_q" + s};
  m.input_labels = {"v_d" + s, "v_q" + s};
  return m;
}

std::vector<std::string> plant_state_labels(const MicrogridTopology& t) {
  std::vector<std::string> labels;
  for (int bus = 1; bus <= t.n_buses; ++bus) {
    for (auto& l : dgu_state_labels(bus)) labels.push_back(std::move(l));
  }
  for (const auto& line : t.lines) {
    labels.push_back("i_d" + line_suffix(line));
    labels.push_back("i_q" + line_suffix(line));
  }
  return labels;
}

CoupledPlant build_coupled_plant(const MicrogridTopology& t) {
  t.validate();
  const PlantLayout layout{t.n_buses, static_cast<int>(t.lines.size())};
  const int n = layout.n_states();

  ContinuousLtiModel m;
  m.a = Matrix::Zero(n, n);
  m.b = Matrix::Zero(n, layout.n_inputs());

  for (int bus = 1; bus <= t.n_buses; ++bus) {
    const auto dgu = build_dgu_model(t.dgus[bus - 1], t.omega, bus);
    const int s = layout.bus_state(bus);
    m.a.block(s, s, 4, 4) = dgu.a;
    // Terminal voltage drives the filter inductor; load current drains the capacitor.
    m.b.block(s, layout.terminal_input(bus), 4, 2) = dgu.b.block(0, 0, 4, 2);
    m.b.block(s, layout.load_input(bus), 4, 2) = dgu.b.block(0, 2, 4, 2);
  }

  for (int k = 0; k < layout.n_lines; ++k) {
    const auto& line = t.lines[k];
    const auto lm = build_line_model(line, t.omega);
    const int s = layout.line_state(k);
    const int from = layout.bus_state(line.from_bus);
    const int to = layout.bus_state(line.to_bus);
    m.a.block(s, s, 2, 2) = lm.a;
    m.a.block(s, from, 2, 2) += lm.b;
    m.a.block(s, to, 2, 2) -= lm.b;

    const double inv_c_from = 1.0 / t.dgus[line.from_bus - 1].c_t;
    const double inv_c_to = 1.0 / t.dgus[line.to_bus - 1].c_t;
    m.a.block(from, s, 2, 2) -= inv_c_from * Matrix::Identity(2, 2);
    m.a.block(to, s, 2, 2) += inv_c_to * Matrix::Identity(2, 2);
  }

  m.state_labels = plant_state_labels(t);
  for (int bus = 1; bus <= t.n_buses; ++bus) {
    m.input_labels.push_back("v_td" + std::to_string(bus));
    m.input_labels.push_back("v_tq" + std::to_string(bus));
  }
  for (int bus = 1; bus <= t.n_buses; ++bus) {
    m.input_labels.push_back("i_ld" + std::to_string(bus));
    m.input_labels.push_back("i_lq" + std::to_string(bus));
  }
  return {std::move(m), layout};
}

Vector output_currents(const MicrogridTopology& t, const Vector& plant_state,
                       const Vector& load_currents) {
  const PlantLayout layout{t.n_buses, static_cast<int>(t.lines.size())};
  if (plant_state.size() != layout.n_states() || load_currents.size() != 2 * t.n_buses) {
    throw std::invalid_argument("output_currents: dimension mismatch");
  }
  Vector io = load_currents;
  for (int k = 0; k < layout.n_lines; ++k) {
    const auto& line = t.lines[k];
    const auto current = plant_state.segment<2>(layout.line_state(k));
    io.segment<2>(2 * (line.from_bus - 1)) += current;
    io.segment<2>(2 * (line.to_bus - 1)) -= current;
  }
  return io;
}

std::pair<double, double> power_flow(const DqSample& v, const DqSample& i) {
  return {1.5 * (v.d * i.d - v.q * i.q), 1.5 * (v.d * i.q + v.q * i.d)};
}

Vector steady_state_residual_dgu(const Vector& x, const Vector& u, const DguParams& p,
                                 double omega) {
  if (x.size() != 4 || u.size() != 4) {
    throw std::invalid_argument("steady_state_residual_dgu expects 4 states and 4 inputs");
  }
  const double v_d = x(0), v_q = x(1), i_d = x(2), i_q = x(3);
  const double vt_d = u(0), vt_q = u(1), io_d = u(2), io_q = u(3);
  Vector r(4);
  r(0) = vt_d - v_d - (p.r_t * i_d - omega * p.l_t * i_q);
  r(1) = vt_q - v_q - (p.r_t * i_q + omega * p.l_t * i_d);
  r(2) = i_d - io_d + omega * p.c_t * v_q;
  r(3) = i_q - io_q - omega * p.c_t * v_d;
  return r;
}

DqSample steady_state_residual_line(const DqSample& i, const DqSample& v_i, const DqSample& v_j,
                                    const LineParams& p, double omega) {
  return {(v_i.d - v_j.d) - (p.r * i.d - omega * p.l * i.q),
          (v_i.q - v_j.q) - (p.r * i.q + omega * p.l * i.d)};
}

Vector equilibrium_state(const ContinuousLtiModel& m, const Vector& u) {
  if (u.size() != m.n_inputs()) throw std::invalid_argument("equilibrium_state: input size");
  Eigen::FullPivLU<Matrix> lu(m.a);
  if (!lu.isInvertible()) throw std::invalid_argument("equilibrium_state: singular state matrix");
  return lu.solve(-(m.b * u));
}

OperatingPoint regulated_operating_point(const MicrogridTopology& t, const Vector& load_currents,
                                         double v_ref, double droop) {
  const auto plant = build_coupled_plant(t);
  const auto& layout = plant.layout;
  const int n = layout.n_states();
  const int nv = 2 * t.n_buses;
  if (load_currents.size() != nv) throw std::invalid_argument("load current vector size");

  Matrix system = Matrix::Zero(n + nv, n + nv);
  Vector rhs = Vector::Zero(n + nv);
  for (int bus = 1; bus <= t.n_buses; ++bus) {
    system.block(0, n + 2 * (bus - 1), n, 2) =
        plant.model.b.block(0, layout.terminal_input(bus), n, 2);
  }
  system.topLeftCorner(n, n) = plant.model.a;
  for (int bus = 1; bus <= t.n_buses; ++bus) {
    rhs.head(n) -= plant.model.b.block(0, layout.load_input(bus), n, 2) *
                   load_currents.segment<2>(2 * (bus - 1));
    const int row = n + 2 * (bus - 1);
    const int s = layout.bus_state(bus);
    system(row, s) = 1.0;
    system(row, s + 2) = droop;
    rhs(row) = v_ref;
    system(row + 1, s + 1) = 1.0;
  }
  Eigen::FullPivLU<Matrix> lu(system);
  if (!lu.isInvertible()) throw std::invalid_argument("operating point system is singular");
  const Vector solution = lu.solve(rhs);
  return {solution.head(n), solution.tail(nv)};
}

}  // namespace mgse
