// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mgse/discretize.hpp"
#include "mgse/estimation.hpp"
#include "mgse/kalman.hpp"
#include "mgse/scenario.hpp"
#include "mgse/sim.hpp"
#include "mgse/trace_io.hpp"

using namespace mgse;

namespace {

// Tolerances and bounds.
constexpr double kRmseRatioLimit = 0.5;
constexpr double kRuntimeLimit = 10.0;      // s
constexpr double kRecoveryLimit = 0.1;      // s
constexpr double kRecoveryFactor = 3.0;     // x pre-event RMSE
constexpr double kResidualLimit = 1e-9;
constexpr double kDriftLimit = 1e-9;
constexpr double kOrderLow = 3.6;
constexpr double kOrderHigh = 4.4;
constexpr double kExpmTolerance = 1e-12;
constexpr double kRiccatiTolerance = 1e-9;
constexpr int kCovarianceSteps = 100000;
constexpr int kPsdDraws = 100;
constexpr int kMonteCarloSeeds = 20;
constexpr int kNisSteps = 10000;
constexpr double kNisLow = 0.75;
constexpr double kNisHigh = 1.25;

const double kOmega = 2.0 * std::numbers::pi * 60.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ScenarioConfig reference_scenario() { return load_scenario(MGSE_CONFIG_DIR "/table1.json"); }

struct ScenarioRun {
  ScenarioConfig cfg;
  PlantTrace trace;
  DecentralizedResult result;
  double seconds = 0.0;
};

ScenarioRun run_reference(bool parallel) {
  ScenarioRun run;
  run.cfg = reference_scenario();
  const auto start = std::chrono::steady_clock::now();
  run.trace = run_plant(run.cfg.sim);
  run.result = run_decentralized(run.cfg.sim.topology, run.trace, run.cfg.estimation, parallel);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

std::vector<Vector> truth_slice(const PlantTrace& trace, Eigen::Index at, Eigen::Index n,
                                std::size_t stride = 1) {
  std::vector<Vector> out;
  for (std::size_t k = 0; k < trace.records.size(); k += stride) {
    out.push_back(trace.records[k].true_state.segment(at, n));
  }
  return out;
}

std::vector<Vector> measured_slice(const PlantTrace& trace, Eigen::Index at, Eigen::Index n,
                                   std::size_t stride = 1) {
  std::vector<Vector> out;
  for (std::size_t k = 0; k < trace.records.size(); k += stride) {
    out.push_back(trace.records[k].noisy_measurement.segment(at, n));
  }
  return out;
}

Outcome scenario_reproduction(const ScenarioRun& run) {
  const std::vector<TimeWindow> windows{{1.0, 2.0}, {2.5, 4.0}};
  double worst = 0.0;
  std::string worst_channel;
  auto check = [&](const EstimateTrace& est, const std::vector<Vector>& truth,
                   const std::vector<Vector>& meas, const std::vector<std::string>& names) {
    for (const auto& w : windows) {
      std::vector<Vector> shown;
      for (const auto& x : est.estimate) shown.push_back(x.head(static_cast<Eigen::Index>(names.size())));
      const auto e = rmse(shown, truth, est.t, {w});
      const auto m = rmse(meas, truth, est.t, {w});
      for (std::size_t c = 0; c < names.size(); ++c) {
        const double ratio = e.per_channel(static_cast<Eigen::Index>(c)) /
                             m.per_channel(static_cast<Eigen::Index>(c));
        if (!(ratio <= worst)) {
          worst = ratio;
          worst_channel = names[c];
        }
      }
    }
  };
  const auto& trace = run.trace;
  check(run.result.local[0], truth_slice(trace, 0, 4), measured_slice(trace, 0, 4),
        {"v_d1", "v_q1", "i_td1", "i_tq1"});
  const auto stride = run.result.global_stride;
  check(run.result.global, truth_slice(trace, 12, 2, stride), measured_slice(trace, 12, 2, stride),
        {"i_d12", "i_q12"});
  const bool pass = worst < kRmseRatioLimit && run.seconds < kRuntimeLimit;
  return {pass, "worst RMSE ratio " + fmt("%.3f", worst) + " (" + worst_channel + "), runtime " +
                    fmt("%.2f s", run.seconds)};
}

Outcome tracking_through_event(const ScenarioRun& run) {
  const double te = run.cfg.sim.events.at(0).time;
  const TimeWindow pre{te - run.cfg.pre_event_window, te - 1e-9};
  double worst = 0.0;
  bool all = true;
  for (int bus = 1; bus <= run.cfg.sim.topology.n_buses; ++bus) {
    const auto& est = run.result.local[bus - 1];
    const auto truth = truth_slice(run.trace, 4 * (bus - 1), 4);
    const auto base = rmse(est.estimate, truth, est.t, {pre});
    for (Eigen::Index c = 0; c < 4; ++c) {
      std::vector<double> err;
      for (std::size_t k = 0; k < truth.size(); ++k) {
        err.push_back(est.estimate[k](c) - truth[k](c));
      }
      const auto rec = recovery_time(est.t, err, te, kRecoveryFactor * base.per_channel(c),
                                     run.cfg.recovery_window);
      if (!rec || *rec > kRecoveryLimit) all = false;
      if (rec) worst = std::max(worst, *rec);
    }
  }
  return {all, "slowest local recovery " + fmt("%.4f s", worst)};
}

MicrogridTopology reference_topology() { return reference_scenario().sim.topology; }

Outcome model_correctness() {
  auto cfg = reference_scenario().sim;
  cfg.duration = 1.0;
  cfg.events.clear();
  for (auto& n : cfg.dgu_noise) {
    n.q.setZero();
    n.r.setZero();
    n.m.setZero();
  }
  cfg.line_noise.q.setZero();
  cfg.line_noise.r.setZero();
  Vector v(6);
  v << 11290.0, 15.0, 11260.0, -10.0, 11275.0, 4.0;
  cfg.fixed_terminal_voltages = v;

  const auto& t = cfg.topology;
  const auto plant = build_coupled_plant(t);
  Vector loads(6);
  for (int b = 0; b < 3; ++b) loads.segment<2>(2 * b) << cfg.initial_loads[b].d, cfg.initial_loads[b].q;
  Vector u(12);
  u << v, loads;
  const Vector x = equilibrium_state(plant.model, u);

  double residual = 0.0;
  const Vector io = output_currents(t, x, loads);
  for (int bus = 1; bus <= 3; ++bus) {
    Vector ub(4);
    ub << v.segment<2>(2 * (bus - 1)), io.segment<2>(2 * (bus - 1));
    residual = std::max(residual, steady_state_residual_dgu(x.segment<4>(4 * (bus - 1)), ub,
                                                            t.dgus[bus - 1], t.omega)
                                      .cwiseAbs()
                                      .maxCoeff());
  }
  for (std::size_t k = 0; k < t.lines.size(); ++k) {
    const auto& line = t.lines[k];
    const Eigen::Index li = plant.layout.line_state(static_cast<int>(k));
    const Eigen::Index fi = plant.layout.bus_state(line.from_bus);
    const Eigen::Index ti = plant.layout.bus_state(line.to_bus);
    const auto r = steady_state_residual_line({x(li), x(li + 1)}, {x(fi), x(fi + 1)},
                                              {x(ti), x(ti + 1)}, line, t.omega);
    residual = std::max({residual, std::abs(r.d), std::abs(r.q)});
  }

  cfg.initial_state = x;
  const auto trace = run_plant(cfg);
  double drift = 0.0;
  for (const auto& r : trace.records) {
    drift = std::max(drift, (r.true_state - x).cwiseAbs().maxCoeff());
  }
  const double scale = x.cwiseAbs().maxCoeff();
  const bool pass = residual < kResidualLimit && drift < kDriftLimit;
  return {pass, "max residual " + fmt("%.2e", residual) + ", max drift " + fmt("%.2e", drift) +
                    " (state scale " + fmt("%.0f", scale) + ")"};
}

Outcome discretization_order() {
  const auto m = build_dgu_model(reference_topology().dgus[0], kOmega);
  auto gap = [&](double ts) {
    return (discretize_euler(m, ts).a_d - discretize_exact(m, ts).a_d).operatorNorm();
  };
  const double ratio = gap(1e-4) / gap(5e-5);

  double expm_error = 0.0;
  for (double theta : {0.1, 1.0, 2.5, 10.0, 100.0}) {
    Matrix skew(2, 2);
    skew << 0.0, theta, -theta, 0.0;
    Matrix rot(2, 2);
    rot << std::cos(theta), std::sin(theta), -std::sin(theta), std::cos(theta);
    expm_error = std::max(expm_error, (matrix_exponential(skew) - rot).cwiseAbs().maxCoeff());
  }
  const bool pass = ratio >= kOrderLow && ratio <= kOrderHigh && expm_error <= kExpmTolerance;
  return {pass, "error ratio " + fmt("%.4f", ratio) + ", rotation error " + fmt("%.1e", expm_error)};
}

Outcome kalman_core() {
  DiscreteLtiModel scalar;
  scalar.a_d = Matrix::Identity(1, 1);
  scalar.b_d = Matrix::Zero(1, 1);
  KalmanEstimator kf(scalar, Matrix::Zero(1, 1), Matrix::Identity(1, 1), Vector::Zero(1),
                     Matrix::Identity(1, 1));
  const auto res = kf.update(Vector::Constant(1, 2.0));
  const bool hand = res.gain(0, 0) == 0.5 && kf.state()(0) == 1.0 && kf.covariance()(0, 0) == 0.5;

  const auto model = discretize_exact(build_dgu_model(reference_topology().dgus[0], kOmega), 1e-4);
  const Matrix q = 0.05 * 0.05 * Matrix::Identity(4, 4);
  const Matrix r = 16.0 * Matrix::Identity(4, 4);
  const auto ss = steady_state_covariance(model.a_d, q, r);

  // Run the filter's own recursion to convergence and compare.
  KalmanEstimator run(model, q, r, Vector::Zero(4), r);
  const Vector u = Vector::Zero(4);
  std::mt19937_64 rng(101);
  std::normal_distribution<double> g(0.0, 1.0);
  double asym = 0.0, min_eig = std::numeric_limits<double>::infinity();
  Vector x = Vector::Zero(4);
  for (int k = 0; k < kCovarianceSteps; ++k) {
    x = model.a_d * x;
    for (int i = 0; i < 4; ++i) x(i) += 0.05 * g(rng);
    Vector z = x;
    for (int i = 0; i < 4; ++i) z(i) += 4.0 * g(rng);
    run.step(u, z);
    asym = std::max(asym, asymmetry(run.covariance()));
    min_eig = std::min(min_eig, min_eigenvalue(run.covariance()));
  }
  const double fixed_point = (run.covariance() - ss.posterior).norm() / ss.posterior.norm();
  const bool pass = hand && fixed_point < kRiccatiTolerance && asym <= kCovarianceTolerance &&
                    min_eig >= -kCovarianceTolerance;
  return {pass, std::string(hand ? "scalar case exact" : "scalar case WRONG") +
                    ", fixed-point gap " + fmt("%.1e", fixed_point) + ", max asymmetry " +
                    fmt("%.1e", asym) + ", min eigenvalue " + fmt("%.3e", min_eig)};
}

Matrix random_psd(std::mt19937_64& rng, int n, double scale) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix l(n, n);
  for (int i = 0; i < n * n; ++i) l(i / n, i % n) = g(rng);
  // Rank-deficient draws exercise the semidefinite edge.
  if (std::uniform_int_distribution<int>(0, 3)(rng) == 0) l.col(0).setZero();
  return scale * l * l.transpose();
}

Outcome noisy_input_correction() {
  const auto model = discretize_exact(build_dgu_model(reference_topology().dgus[0], kOmega), 1e-4);
  std::mt19937_64 rng(7);
  int psd = 0;
  for (int d = 0; d < kPsdDraws; ++d) {
    const Matrix q = random_psd(rng, 4, 1e-3);
    const Matrix m = random_psd(rng, 4, 1.0);
    if (is_symmetric_psd(effective_process_noise(q, model.b_d, m))) ++psd;
  }

  const double q_std = 0.05, r_std = 4.0;
  const Matrix q = q_std * q_std * Matrix::Identity(4, 4);
  const Matrix r = r_std * r_std * Matrix::Identity(4, 4);
  Matrix m = Matrix::Zero(4, 4);
  m.diagonal() << 1.0, 1.0, 0.25, 0.25;
  const Eigen::LLT<Matrix> m_chol(m);
  const Vector u_true = (Vector(4) << 11300.0, 0.0, 80.0, -20.0).finished();
  const Vector x_eq = equilibrium_state(build_dgu_model(reference_topology().dgus[0], kOmega), u_true);

  constexpr int kSteps = 20000, kBurnIn = 5000;
  double sum_corrected = 0.0, sum_bare = 0.0;
  for (int seed = 0; seed < kMonteCarloSeeds; ++seed) {
    std::mt19937_64 noise(1000 + seed);
    std::normal_distribution<double> g(0.0, 1.0);
    auto draw = [&](int n) {
      Vector v(n);
      for (int i = 0; i < n; ++i) v(i) = g(noise);
      return v;
    };
    KalmanEstimator corrected = KalmanEstimator::from_noise(model, {q, r, m}, x_eq, r);
    KalmanEstimator bare(model, q, r, x_eq, r);
    Vector x = x_eq;
    Vector u_meas = u_true;
    double se_c = 0.0, se_b = 0.0;
    for (int k = 0; k < kSteps; ++k) {
      x = model.a_d * x + model.b_d * u_true + q_std * draw(4);
      const Vector z = x + r_std * draw(4);
      corrected.step(u_meas, z);
      bare.step(u_meas, z);
      u_meas = u_true + m_chol.matrixL() * draw(4);
      if (k >= kBurnIn) {
        se_c += (corrected.state() - x).squaredNorm();
        se_b += (bare.state() - x).squaredNorm();
      }
    }
    const double n = 4.0 * (kSteps - kBurnIn);
    sum_corrected += std::sqrt(se_c / n);
    sum_bare += std::sqrt(se_b / n);
  }
  const double mean_c = sum_corrected / kMonteCarloSeeds;
  const double mean_b = sum_bare / kMonteCarloSeeds;
  const bool pass = psd == kPsdDraws && mean_c <= mean_b;
  return {pass, std::to_string(psd) + "/" + std::to_string(kPsdDraws) + " PSD, RMSE with Q_eff " +
                    fmt("%.4f", mean_c) + " vs bare Q " + fmt("%.4f", mean_b)};
}

Outcome multirate(const ScenarioRun& sequential) {
  const auto parallel = run_decentralized(sequential.cfg.sim.topology, sequential.trace,
                                          sequential.cfg.estimation, true);
  const auto& seq = sequential.result;
  bool identical = seq.local.size() == parallel.local.size();
  for (std::size_t b = 0; identical && b < seq.local.size(); ++b) {
    identical = seq.local[b].estimate == parallel.local[b].estimate &&
                seq.local[b].innovation == parallel.local[b].innovation;
  }
  identical = identical && seq.global.estimate == parallel.global.estimate;

  const std::size_t stride = seq.global_stride;
  const auto& lines = sequential.cfg.sim.topology.lines;
  const Matrix map = voltage_difference_map(lines, sequential.cfg.sim.topology.n_buses);
  const std::size_t expected = (seq.local[0].t.size() + stride - 1) / stride;
  bool every = stride == 100 && seq.global.t.size() == expected;
  for (std::size_t k = 0; every && k < seq.global.t.size(); ++k) {
    every = seq.global.t[k] == seq.local[0].t[k * stride];
    if (every && k + 1 < seq.global.t.size()) {
      Vector v(2 * static_cast<Eigen::Index>(seq.local.size()));
      for (std::size_t b = 0; b < seq.local.size(); ++b) {
        v.segment<2>(2 * static_cast<Eigen::Index>(b)) = seq.local[b].estimate[k * stride].head(2);
      }
      every = seq.global.inputs[k] == map * v;
    }
  }
  return {identical && every, std::string(identical ? "bit-identical" : "DIFFERENT") +
                                  ", stride " + std::to_string(stride) + ", " +
                                  std::to_string(seq.global.t.size()) + " global samples" +
                                  (every ? "" : " (input mismatch)")};
}

Outcome filter_consistency() {
  const auto topo = reference_topology();
  const auto model = discretize_exact(build_dgu_model(topo.dgus[0], kOmega), 1e-4);
  const double q_std = 0.05, r_std = 4.0;
  const Matrix q = q_std * q_std * Matrix::Identity(4, 4);
  const Matrix r = r_std * r_std * Matrix::Identity(4, 4);
  const Vector u = (Vector(4) << 11300.0, 0.0, 80.0, -20.0).finished();
  Vector x = equilibrium_state(build_dgu_model(topo.dgus[0], kOmega), u);
  const auto ss = steady_state_covariance(model.a_d, q, r);
  KalmanEstimator kf(model, q, r, x, ss.posterior);
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vector> innov;
  std::vector<Matrix> cov;
  for (int k = 0; k < kNisSteps; ++k) {
    x = model.a_d * x + model.b_d * u;
    for (int i = 0; i < 4; ++i) x(i) += q_std * g(rng);
    Vector z = x;
    for (int i = 0; i < 4; ++i) z(i) += r_std * g(rng);
    const auto res = kf.step(u, z);
    innov.push_back(res.innovation);
    cov.push_back(res.innovation_covariance);
  }
  const double nis = innovation_consistency(innov, cov);
  const bool pass = nis >= kNisLow * 4.0 && nis <= kNisHigh * 4.0;
  return {pass, "NIS " + fmt("%.3f", nis) + " for n = 4"};
}

std::string csv_text(const CsvTable& table) {
  std::ostringstream out;
  write_csv(out, table);
  return out.str();
}

std::vector<std::string> all_csv(const ScenarioRun& run) {
  std::vector<std::string> out{csv_text(truth_table(run.trace)),
                               csv_text(measurement_table(run.trace))};
  for (const auto& l : run.result.local) out.push_back(csv_text(estimate_table(l)));
  out.push_back(csv_text(estimate_table(run.result.global)));
  return out;
}

Outcome determinism(const ScenarioRun& first) {
  const auto second = run_reference(true);
  const auto a = all_csv(first);
  const auto b = all_csv(second);
  std::size_t bytes = 0;
  for (const auto& s : a) bytes += s.size();
  return {a == b, std::to_string(a.size()) + " CSV files, " + std::to_string(bytes) + " bytes" +
                      (a == b ? ", identical" : ", DIFFERENT")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  ScenarioRun reference;
  try {
    reference = run_reference(false);
  } catch (const std::exception& e) {
    std::printf("reference scenario failed: %s\n", e.what());
    return 1;
  }

  report(1, "scenario reproduction", [&] { return scenario_reproduction(reference); });
  report(2, "tracking through the load step", [&] { return tracking_through_event(reference); });
  report(3, "model equilibrium and drift", model_correctness);
  report(4, "discretization order", discretization_order);
  report(5, "Kalman core", kalman_core);
  report(6, "noisy-input correction", noisy_input_correction);
  report(7, "multi-rate decentralization", [&] { return multirate(reference); });
  report(8, "filter consistency", filter_consistency);
  report(9, "determinism", [&] { return determinism(reference); });

  std::printf("%d/9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
