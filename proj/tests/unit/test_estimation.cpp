#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mgse/estimation.hpp"
#include "mgse/scenario.hpp"

using namespace mgse;

namespace {

const double kOmega = 2.0 * std::numbers::pi * 60.0;

ScenarioConfig short_scenario(double duration) {
  auto cfg = load_scenario(MGSE_CONFIG_DIR "/table1.json");
  ScenarioOverrides o;
  o.duration = duration;
  apply_overrides(cfg, o);
  return cfg;
}

}  // namespace

TEST_CASE("voltage difference map") {
  const std::vector<LineParams> lines{{1, 2, 1.0, 1e-3}, {2, 3, 1.0, 1e-3}};
  const Matrix t = voltage_difference_map(lines, 3);
  Vector v(6);
  v << 10, 1, 7, 2, 3, 5;
  const Vector d = t * v;
  CHECK(d(0) == 3.0);
  CHECK(d(1) == -1.0);
  CHECK(d(2) == 4.0);
  CHECK(d(3) == -3.0);
}

TEST_CASE("zero input noise reduces Q_eff to Q") {
  const auto model = discretize_exact(build_dgu_model({1.1e-3, 90e-6, 50e-6}, kOmega), 1e-4);
  const Matrix q = 0.01 * Matrix::Identity(4, 4);
  const Matrix r = 16.0 * Matrix::Identity(4, 4);
  auto a = KalmanEstimator::from_noise(model, {q, r, Matrix::Zero(4, 4)}, Vector::Zero(4), r);
  KalmanEstimator b(model, q, r, Vector::Zero(4), r);
  CHECK(a.process_noise() == b.process_noise());
  Vector u(4), z(4);
  u << 11000, 0, 80, -20;
  z << 1, 2, 3, 4;
  for (int k = 0; k < 50; ++k) {
    a.step(u, z);
    b.step(u, z);
  }
  CHECK(a.state() == b.state());
  CHECK(a.covariance() == b.covariance());
}

TEST_CASE("single-line global estimator equals a standalone line filter") {
  MicrogridTopology topo;
  topo.n_buses = 2;
  topo.omega = kOmega;
  topo.dgus = {{1.1e-3, 90e-6, 50e-6}, {1.3e-3, 100e-6, 55e-6}};
  topo.lines = {{1, 2, 1.1, 0.52e-3}};
  const Matrix q = 0.25 * Matrix::Identity(2, 2);
  const Matrix r = 25.0 * Matrix::Identity(2, 2);
  Matrix pv = Matrix::Zero(4, 4);
  pv.diagonal() << 2.0, 3.0, 5.0, 7.0;
  auto global = make_global_estimator(topo, q, r, pv, 100.0, DiscretizationMethod::kExact);

  const auto line = discretize_exact(build_line_model(topo.lines[0], kOmega), 0.01);
  Matrix m = Matrix::Zero(2, 2);
  m.diagonal() << 2.0 + 5.0, 3.0 + 7.0;
  auto standalone = KalmanEstimator::from_noise(line, {q, r, m}, Vector::Zero(2), r);
  CHECK((global.filter.process_noise() - standalone.process_noise()).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 5.0);
  std::vector<double> t;
  std::vector<Vector> volts, currents;
  for (int k = 0; k < 60; ++k) {
    t.push_back(0.01 * k);
    Vector v(4);
    v << 11260 + g(rng), g(rng), 11250 + g(rng), g(rng);
    volts.push_back(v);
    currents.push_back((Vector(2) << -5.0 + g(rng), 2.0 + g(rng)).finished());
  }
  const auto out = run_global(global, t, volts, t, currents);

  standalone.reset(currents[0], r);
  for (int k = 1; k < 60; ++k) {
    const Vector u = volts[k - 1].head(2) - volts[k - 1].tail(2);
    standalone.step(u, currents[k]);
    CHECK((out.estimate[k] - standalone.state()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("global estimator checks stream alignment") {
  auto cfg = short_scenario(0.1);
  auto g = make_global_estimator(cfg.sim.topology, cfg.estimation.global_q, cfg.estimation.global_r,
                                 Matrix::Identity(6, 6), 100.0, DiscretizationMethod::kExact);
  std::vector<double> t{0.0, 0.01, 0.02};
  std::vector<Vector> v(3, Vector::Zero(6)), i(3, Vector::Zero(6));
  std::vector<double> skewed{0.0, 0.011, 0.02};
  CHECK_THROWS_AS(run_global(g, skewed, v, t, i), std::invalid_argument);
  std::vector<double> fast{0.0, 0.001, 0.002};
  CHECK_THROWS_AS(run_global(g, fast, v, fast, i), std::invalid_argument);
  v.pop_back();
  CHECK_THROWS_AS(run_global(g, t, v, t, i), std::invalid_argument);
}

TEST_CASE("rmse") {
  std::vector<Vector> a(3, Vector::Ones(2)), b(3, Vector::Ones(2));
  CHECK(rmse(a, b).aggregate == 0.0);
  for (auto& x : b) x.array() += 0.5;
  const auto r = rmse(a, b);
  CHECK(r.aggregate == doctest::Approx(0.5));
  CHECK(r.per_channel(1) == doctest::Approx(0.5));
  CHECK(r.samples == 3);

  std::vector<Vector> e{Vector::Constant(1, 1.0), Vector::Constant(1, 3.0), Vector::Constant(1, 5.0)};
  std::vector<Vector> z(3, Vector::Zero(1));
  const std::vector<double> t{0.0, 1.0, 2.0};
  const auto w = rmse(e, z, t, {{0.5, 1.0}, {2.0, 2.0}});
  CHECK(w.samples == 2);
  CHECK(w.aggregate == doctest::Approx(std::sqrt(17.0)));

  CHECK_THROWS_AS(rmse(a, std::vector<Vector>(2, Vector::Ones(2))), std::invalid_argument);
  CHECK(rmse({}, {}).samples == 0);
}

TEST_CASE("recovery time") {
  std::vector<double> t, err;
  for (int k = 0; k < 100; ++k) {
    t.push_back(0.01 * k);
    err.push_back(k >= 50 && k < 60 ? 10.0 : 1.0);
  }
  auto rec = recovery_time(t, err, 0.5, 2.0, 0.02);
  REQUIRE(rec);
  CHECK(*rec == doctest::Approx(0.1));
  CHECK(recovery_time(t, err, 0.2, 2.0, 0.02) == std::optional<double>(0.0));
  CHECK_FALSE(recovery_time(t, err, 0.5, 0.5, 0.02));
  CHECK_THROWS_AS(recovery_time(t, {1.0}, 0.5, 0.5, 0.02), std::invalid_argument);
}

TEST_CASE("decentralized run: shapes, stride and scheduling independence") {
  auto cfg = short_scenario(0.2);
  const auto trace = run_plant(cfg.sim);
  const auto seq = run_decentralized(cfg.sim.topology, trace, cfg.estimation, false);
  const auto par = run_decentralized(cfg.sim.topology, trace, cfg.estimation, true);

  REQUIRE(seq.local.size() == 3);
  CHECK(seq.global_stride == 100);
  CHECK(seq.local[0].t.size() == trace.records.size());
  REQUIRE(seq.global.t.size() == 21);
  for (std::size_t k = 0; k < seq.global.t.size(); ++k) {
    CHECK(seq.global.t[k] == seq.local[0].t[k * 100]);
  }
  CHECK(seq.global.labels.front() == "i_d12");
  CHECK(seq.local[1].labels.front() == "v_d2");

  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(seq.local[b].estimate == par.local[b].estimate);
  }
  CHECK(seq.global.estimate == par.global.estimate);

  // Global inputs are voltage differences of the local estimates it sampled.
  const Matrix map = voltage_difference_map(cfg.sim.topology.lines, 3);
  for (std::size_t k = 0; k + 1 < seq.global.t.size(); ++k) {
    Vector v(6);
    for (int b = 0; b < 3; ++b) v.segment<2>(2 * b) = seq.local[b].estimate[k * 100].head(2);
    CHECK(seq.global.inputs[k] == map * v);
  }
}

TEST_CASE("local estimate tracks better than the raw measurement") {
  auto cfg = short_scenario(0.5);
  const auto trace = run_plant(cfg.sim);
  const auto res = run_decentralized(cfg.sim.topology, trace, cfg.estimation, false);
  std::vector<Vector> truth, meas;
  for (const auto& r : trace.records) {
    truth.push_back(r.true_state.head(4));
    meas.push_back(r.noisy_measurement.head(4));
  }
  const std::vector<TimeWindow> w{{0.1, 0.5}};
  const auto est = rmse(res.local[0].estimate, truth, res.local[0].t, w);
  const auto raw = rmse(meas, truth, res.local[0].t, w);
  for (int i = 0; i < 4; ++i) CHECK(est.per_channel(i) < 0.5 * raw.per_channel(i));
}

TEST_CASE("local initialization from the first sample") {
  auto cfg = short_scenario(0.01);
  const auto trace = run_plant(cfg.sim);
  auto est = make_local_estimator(cfg.sim.topology, 2, cfg.estimation.local_noise[1], 1e4,
                                  DiscretizationMethod::kExact);
  const auto m = local_measurements(trace, 2);
  const auto out = run_local(est, m);
  CHECK(out.estimate.front() == m.z.front());
  CHECK(out.innovation.size() == m.t.size() - 1);
  CHECK(out.inputs.front() == m.u.front());
  CHECK_THROWS_AS(local_measurements(trace, 4), std::invalid_argument);
}
