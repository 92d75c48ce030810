#include "mgse/discretize.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mgse {

std::string_view to_string(DiscretizationMethod method) {
  return method == DiscretizationMethod::kEuler ? "euler" : "exact";
}

DiscretizationMethod parse_discretization(std::string_view text) {
  if (text == "euler") return DiscretizationMethod::kEuler;
  if (text == "exact") return DiscretizationMethod::kExact;
  throw std::invalid_argument("discretization must be 'euler' or 'exact', got '" +
                              std::string(text) + "'");
}

namespace {

void check_period(double t_s) {
  if (!(t_s > 0.0) || !std::isfinite(t_s)) {
    throw std::invalid_argument("sampling period must be a finite positive number");
  }
}

DiscreteLtiModel with_labels(const ContinuousLtiModel& m, double t_s, DiscretizationMethod method) {
  DiscreteLtiModel d;
  d.t_s = t_s;
  d.method = method;
  d.state_labels = m.state_labels;
  d.input_labels = m.input_labels;
  return d;
}

// Pade(13) numerator coefficients, Higham (2005).
constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};
constexpr double kTheta13 = 5.371920351148152;

}  // namespace

DiscreteLtiModel discretize_euler(const ContinuousLtiModel& m, double t_s) {
  check_period(t_s);
  m.validate();
  auto d = with_labels(m, t_s, DiscretizationMethod::kEuler);
  d.a_d = Matrix::Identity(m.n_states(), m.n_states()) + t_s * m.a;
  d.b_d = t_s * m.b;
  return d;
}

DiscreteLtiModel discretize_exact(const ContinuousLtiModel& m, double t_s) {
  check_period(t_s);
  m.validate();
  if (condition_number(m.a) > kSingularConditionNumber) {
    throw std::domain_error(
        "state matrix is singular or ill-conditioned; exact discretization needs an invertible "
        "A_c, use the euler method instead");
  }
  auto d = with_labels(m, t_s, DiscretizationMethod::kExact);
  d.a_d = matrix_exponential(t_s * m.a);
  const Matrix increment = d.a_d - Matrix::Identity(m.n_states(), m.n_states());
  d.b_d = m.a.partialPivLu().solve(increment * m.b);
  return d;
}

DiscreteLtiModel discretize(const ContinuousLtiModel& m, double t_s, DiscretizationMethod method) {
  return method == DiscretizationMethod::kEuler ? discretize_euler(m, t_s)
                                                : discretize_exact(m, t_s);
}

Matrix matrix_exponential(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("matrix_exponential needs a square matrix");
  if (!a.allFinite()) throw std::invalid_argument("matrix_exponential needs finite entries");
  const auto n = a.rows();
  if (n == 0) return a;

  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > kTheta13) squarings = static_cast<int>(std::ceil(std::log2(norm / kTheta13)));
  const Matrix scaled = a / std::ldexp(1.0, squarings);

  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = scaled * scaled;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const auto& b = kPade13;

  const Matrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
                         b[3] * a2 + b[1] * id;
  const Matrix u = scaled * u_inner;
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
                   b[2] * a2 + b[0] * id;

  Matrix result = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < squarings; ++k) result = result * result;
  return result;
}

}  // namespace mgse
