#include "mgse/kalman.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace mgse {

namespace {

constexpr double kSingularInnovation = 1e12;

void require_psd(const Matrix& m, const char* name) {
  if (!is_symmetric_psd(m)) {
    throw std::invalid_argument(std::string(name) + " must be symmetric positive semidefinite");
  }
}

// S^{-1} as a factorization; throws when S is not numerically positive definite.
Eigen::LDLT<Matrix> factor_innovation(const Matrix& s) {
  Eigen::LDLT<Matrix> ldlt(s);
  if (ldlt.info() != Eigen::Success) {
    throw KalmanError("innovation covariance could not be factored");
  }
  const Vector d = ldlt.vectorD();
  if (!(d.minCoeff() > 0.0)) {
    throw KalmanError("innovation covariance is not positive definite");
  }
  const double ratio = d.maxCoeff() / d.minCoeff();
  if (!std::isfinite(ratio) || ratio > kSingularInnovation) {
    throw KalmanError("innovation covariance is numerically singular");
  }
  return ldlt;
}

}  // namespace

void NoiseSpec::validate() const {
  require_psd(q, "process noise Q");
  require_psd(r, "measurement noise R");
  require_psd(m, "input noise M");
}

Matrix effective_process_noise(const Matrix& q, const Matrix& b_d, const Matrix& m) {
  if (q.rows() != q.cols() || m.rows() != m.cols() || b_d.rows() != q.rows() ||
      b_d.cols() != m.rows()) {
    throw std::invalid_argument("effective_process_noise: dimension mismatch");
  }
  return symmetrized(b_d * m * b_d.transpose() + q);
}

KalmanEstimator::KalmanEstimator(DiscreteLtiModel model, Matrix q_eff, Matrix r, Vector x0,
                                 Matrix p0)
    : model_(std::move(model)), q_eff_(std::move(q_eff)), r_(std::move(r)) {
  const auto n = model_.n_states();
  if (model_.a_d.cols() != n || model_.b_d.rows() != n || q_eff_.rows() != n ||
      q_eff_.cols() != n || r_.rows() != n || r_.cols() != n) {
    throw std::invalid_argument("KalmanEstimator: dimension mismatch");
  }
  require_psd(q_eff_, "effective process noise");
  require_psd(r_, "measurement noise R");
  reset(std::move(x0), std::move(p0));
}

KalmanEstimator KalmanEstimator::from_noise(DiscreteLtiModel model, const NoiseSpec& noise,
                                            Vector x0, Matrix p0) {
  noise.validate();
  Matrix q_eff = effective_process_noise(noise.q, model.b_d, noise.m);
  return {std::move(model), std::move(q_eff), noise.r, std::move(x0), std::move(p0)};
}

void KalmanEstimator::reset(Vector x0, Matrix p0) {
  const auto n = model_.n_states();
  if (x0.size() != n || p0.rows() != n || p0.cols() != n) {
    throw std::invalid_argument("KalmanEstimator::reset: dimension mismatch");
  }
  require_psd(p0, "initial covariance");
  x_hat_ = std::move(x0);
  p_ = symmetrized(p0);
}

void KalmanEstimator::predict(const Vector& u) {
  if (u.size() != model_.n_inputs()) {
    throw std::invalid_argument("predict: input has " + std::to_string(u.size()) +
                                " entries, model expects " + std::to_string(model_.n_inputs()));
  }
  x_hat_ = model_.a_d * x_hat_ + model_.b_d * u;
  p_ = symmetrized(model_.a_d * p_ * model_.a_d.transpose() + q_eff_);
}

UpdateResult KalmanEstimator::update(const Vector& z) {
  const auto n = model_.n_states();
  if (z.size() != n) {
    throw std::invalid_argument("update: measurement has " + std::to_string(z.size()) +
                                " entries, model has " + std::to_string(n) + " states");
  }
  UpdateResult out;
  out.innovation = z - x_hat_;
  out.innovation_covariance = r_ + p_;
  const auto ldlt = factor_innovation(out.innovation_covariance);
  // K = P S^{-1}; S and P are symmetric so K^T = S^{-1} P.
  out.gain = ldlt.solve(p_).transpose();

  x_hat_ += out.gain * out.innovation;
  const Matrix i_minus_k = Matrix::Identity(n, n) - out.gain;
  p_ = symmetrized(i_minus_k * p_ * i_minus_k.transpose() +
                   out.gain * r_ * out.gain.transpose());
  out.postfit_residual = z - x_hat_;
  return out;
}

UpdateResult KalmanEstimator::step(const Vector& u, const Vector& z) {
  predict(u);
  return update(z);
}

double innovation_consistency(std::span<const Vector> innovations,
                              std::span<const Matrix> covariances) {
  if (innovations.empty()) throw std::invalid_argument("innovation history is empty");
  if (innovations.size() != covariances.size()) {
    throw std::invalid_argument("innovation and covariance histories differ in length");
  }
  if (innovations.size() < kMinConsistencySamples) {
    throw std::invalid_argument("innovation consistency needs at least " +
                                std::to_string(kMinConsistencySamples) + " samples");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < innovations.size(); ++k) {
    const auto& r = innovations[k];
    if (r.isZero(0.0)) continue;
    total += r.dot(factor_innovation(covariances[k]).solve(r));
  }
  return total / static_cast<double>(innovations.size());
}

SteadyStateCovariance steady_state_covariance(const Matrix& a_d, const Matrix& q_eff,
                                              const Matrix& r, double tol, int max_iterations) {
  const auto n = a_d.rows();
  SteadyStateCovariance out;
  out.posterior = r;
  const Matrix id = Matrix::Identity(n, n);
  for (int it = 1; it <= max_iterations; ++it) {
    const Matrix prior = symmetrized(a_d * out.posterior * a_d.transpose() + q_eff);
    const Matrix gain = factor_innovation(r + prior).solve(prior).transpose();
    const Matrix posterior = symmetrized((id - gain) * prior * (id - gain).transpose() +
                                         gain * r * gain.transpose());
    const double change = (posterior - out.posterior).norm();
    out.prior = prior;
    out.gain = gain;
    out.posterior = posterior;
    out.iterations = it;
    if (change <= tol * std::max(1.0, posterior.norm())) return out;
  }
  throw KalmanError("covariance recursion did not converge");
}

}  // namespace mgse
