#pragma once

// Linear Kalman filter with a full-state (identity) measurement model:
//
//   x_{k+1} = A_d x_k + B_d u_k + w_k      w ~ N(0, Q)
//   z_k     = x_k + v_k                    v ~ N(0, R)
//
// Inputs measured with additive noise m ~ N(0, M) are folded into the process noise
// through Q_eff = B_d M B_d^T + Q.

#include <span>
#include <stdexcept>
#include <string>

#include "mgse/discretize.hpp"
#include "mgse/linalg.hpp"

namespace mgse {

class KalmanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Process (q), measurement (r) and input (m) noise covariances, all in discrete time.
struct NoiseSpec {
  Matrix q;
  Matrix r;
  Matrix m;

  /// Throws std::invalid_argument if a matrix is not symmetric PSD.
  void validate() const;
};

Matrix effective_process_noise(const Matrix& q, const Matrix& b_d, const Matrix& m);

struct UpdateResult {
  Vector innovation;             // z - x_prior
  Vector postfit_residual;       // z - x_post
  Matrix innovation_covariance;  // S = R + P_prior
  Matrix gain;
};

class KalmanEstimator {
 public:
  KalmanEstimator(DiscreteLtiModel model, Matrix q_eff, Matrix r, Vector x0, Matrix p0);

  /// Builds Q_eff from `noise` and the model's B_d.
  static KalmanEstimator from_noise(DiscreteLtiModel model, const NoiseSpec& noise, Vector x0,
                                    Matrix p0);

  void reset(Vector x0, Matrix p0);

  void predict(const Vector& u);
  UpdateResult update(const Vector& z);
  UpdateResult step(const Vector& u, const Vector& z);

  [[nodiscard]] const Vector& state() const { return x_hat_; }
  [[nodiscard]] const Matrix& covariance() const { return p_; }
  [[nodiscard]] const Matrix& process_noise() const { return q_eff_; }
  [[nodiscard]] const Matrix& measurement_noise() const { return r_; }
  [[nodiscard]] const DiscreteLtiModel& model() const { return model_; }
  [[nodiscard]] Eigen::Index n_states() const { return model_.n_states(); }

 private:
  DiscreteLtiModel model_;
  Matrix q_eff_;
  Matrix r_;
  Vector x_hat_;
  Matrix p_;
};

/// Mean normalized innovation squared, r^T S^{-1} r, over the history. Needs at
/// least kMinConsistencySamples samples.
inline constexpr std::size_t kMinConsistencySamples = 30;
double innovation_consistency(std::span<const Vector> innovations,
                              std::span<const Matrix> covariances);

struct SteadyStateCovariance {
  Matrix prior;
  Matrix posterior;
  Matrix gain;
  int iterations = 0;
};

/// Iterates the covariance recursion (predict, gain, Joseph update) from p0 = R
/// until successive posteriors differ by less than `tol` relative.
SteadyStateCovariance steady_state_covariance(const Matrix& a_d, const Matrix& q_eff,
                                              const Matrix& r, double tol = 1e-13,
                                              int max_iterations = 100000);

}  // namespace mgse
