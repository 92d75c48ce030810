#pragma once

// Continuous-time dq-frame models of DGU buses, distribution lines and the coupled
// microgrid built from them.
//
// DGU bus (RLC filter, 4 states / 4 inputs):
//   x = [v_d, v_q, i_td, i_tq]   u = [v_td, v_tq, i_od, i_oq]
// Line i-j (RL branch, 2 states / 2 inputs):
//   x = [i_d, i_q]               u = [v_ij,d, v_ij,q],  v_ij = v_i - v_j
//
// Line currents are positive from `from_bus` to `to_bus`. Buses are 1-based in the
// public types; vectors are 0-based.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mgse/frames.hpp"
#include "mgse/linalg.hpp"

namespace mgse {

struct DguParams {
  double r_t = 0.0;  // ohm
  double l_t = 0.0;  // H
  double c_t = 0.0;  // F
};

struct LineParams {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;  // ohm
  double l = 0.0;  // H
};

struct MicrogridTopology {
  int n_buses = 0;
  std::vector<DguParams> dgus;  // one per bus, index = bus - 1
  std::vector<LineParams> lines;
  double omega = 0.0;  // rad/s

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct ContinuousLtiModel {
  Matrix a;
  Matrix b;
  std::vector<std::string> state_labels;
  std::vector<std::string> input_labels;

  [[nodiscard]] Eigen::Index n_states() const { return a.rows(); }
  [[nodiscard]] Eigen::Index n_inputs() const { return b.cols(); }

  /// Throws std::invalid_argument on inconsistent dimensions or non-finite entries.
  void validate() const;
};

void validate(const DguParams& p);
void validate(const LineParams& p);

ContinuousLtiModel build_dgu_model(const DguParams& p, double omega, int bus = 1);
ContinuousLtiModel build_line_model(const LineParams& p, double omega);

/// Index helpers for the stacked coupled-plant vectors.
///
/// States: 4 per bus (bus-major) followed by 2 per line.
/// Inputs: 2 terminal-voltage channels per bus followed by 2 load-current channels
/// per bus.
struct PlantLayout {
  int n_buses = 0;
  int n_lines = 0;

  [[nodiscard]] int n_states() const { return 4 * n_buses + 2 * n_lines; }
  [[nodiscard]] int n_inputs() const { return 4 * n_buses; }
  [[nodiscard]] int bus_state(int bus) const { return 4 * (bus - 1); }
  [[nodiscard]] int line_state(int line) const { return 4 * n_buses + 2 * line; }
  [[nodiscard]] int terminal_input(int bus) const { return 2 * (bus - 1); }
  [[nodiscard]] int load_input(int bus) const { return 2 * n_buses + 2 * (bus - 1); }
};

struct CoupledPlant {
  ContinuousLtiModel model;
  PlantLayout layout;
};

/// Stacks every DGU and line model into one LTI system. The DGU output current is
/// eliminated with i_o,i = i_load,i + sum(outgoing line currents) - sum(incoming);
/// line inputs are replaced by bus-voltage differences. Free inputs are terminal
/// voltages and load currents.
CoupledPlant build_coupled_plant(const MicrogridTopology& t);

/// DGU output current i_o at every bus (stacked d/q) from a coupled-plant state and
/// the load currents.
Vector output_currents(const MicrogridTopology& t, const Vector& plant_state,
                       const Vector& load_currents);

/// Three-phase active and reactive power in the dq frame:
///   P = 3/2 (v_d i_d - v_q i_q),  Q = 3/2 (v_d i_q + v_q i_d).
/// Note the non-conjugate product; this is the form the estimator reports, not the
/// conventional Re/Im of v i*.
std::pair<double, double> power_flow(const DqSample& v, const DqSample& i);

/// Steady-state mismatch of a DGU bus:
///   [v_t - v - (R + jwL) i_t ; i_t - i_o - jwC v]   (4 real components).
Vector steady_state_residual_dgu(const Vector& x, const Vector& u, const DguParams& p,
                                 double omega);

/// Steady-state mismatch of a line: (v_i - v_j) - (R + jwL) i.
DqSample steady_state_residual_line(const DqSample& i, const DqSample& v_i, const DqSample& v_j,
                                    const LineParams& p, double omega);

/// Solves A x + B u = 0 for x. Throws std::invalid_argument if A is singular.
Vector equilibrium_state(const ContinuousLtiModel& m, const Vector& u);

/// Closed-loop operating point of the coupled plant with bus voltages regulated to
/// v_d = v_ref - droop * i_td and v_q = 0. Returns the plant state and the terminal
/// voltages (stacked d/q per bus) that hold it.
struct OperatingPoint {
  Vector state;
  Vector terminal_voltages;
};
OperatingPoint regulated_operating_point(const MicrogridTopology& t, const Vector& load_currents,
                                         double v_ref, double droop);

std::vector<std::string> plant_state_labels(const MicrogridTopology& t);
std::vector<std::string> dgu_state_labels(int bus);
std::vector<std::string> dgu_input_labels(int bus);
std::string line_suffix(const LineParams& p);

}  // namespace mgse
