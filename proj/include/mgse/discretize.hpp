#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mgse/linalg.hpp"
#include "mgse/models.hpp"

namespace mgse {

enum class DiscretizationMethod { kEuler, kExact };

std::string_view to_string(DiscretizationMethod method);
/// Accepts "euler" or "exact"; throws std::invalid_argument otherwise.
DiscretizationMethod parse_discretization(std::string_view text);

struct DiscreteLtiModel {
  Matrix a_d;
  Matrix b_d;
  double t_s = 0.0;
  DiscretizationMethod method = DiscretizationMethod::kExact;
  std::vector<std::string> state_labels;
  std::vector<std::string> input_labels;

  [[nodiscard]] Eigen::Index n_states() const { return a_d.rows(); }
  [[nodiscard]] Eigen::Index n_inputs() const { return b_d.cols(); }
};

/// Condition number above which A_c is treated as singular by discretize_exact.
inline constexpr double kSingularConditionNumber = 1e12;

/// A_d = I + T_s A_c, B_d = T_s B_c.
DiscreteLtiModel discretize_euler(const ContinuousLtiModel& m, double t_s);

/// Zero-order-hold discretization: A_d = exp(T_s A_c), B_d = A_c^{-1} (A_d - I) B_c.
/// Requires A_c invertible; a near-singular A_c throws std::domain_error pointing
/// the caller at discretize_euler.
DiscreteLtiModel discretize_exact(const ContinuousLtiModel& m, double t_s);

DiscreteLtiModel discretize(const ContinuousLtiModel& m, double t_s, DiscretizationMethod method);

/// exp(A) by scaling and squaring with a degree-13 Pade approximant.
Matrix matrix_exponential(const Matrix& a);

}  // namespace mgse
