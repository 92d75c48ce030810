#include "mgse/frames.hpp"

#include <cmath>
#include <numbers>

namespace mgse {

namespace {
constexpr double kThird = 2.0 * std::numbers::pi / 3.0;
}

DqSample park(const ThreePhaseSample& s, double theta) {
  const double d = (2.0 / 3.0) * (s.a * std::cos(theta) + s.b * std::cos(theta - kThird) +
                                  s.c * std::cos(theta + kThird));
  const double q = -(2.0 / 3.0) * (s.a * std::sin(theta) + s.b * std::sin(theta - kThird) +
                                   s.c * std::sin(theta + kThird));
  return {d, q};
}

ThreePhaseSample inverse_park(const DqSample& s, double theta) {
  return {s.d * std::cos(theta) - s.q * std::sin(theta),
          s.d * std::cos(theta - kThird) - s.q * std::sin(theta - kThird),
          s.d * std::cos(theta + kThird) - s.q * std::sin(theta + kThird)};
}

ThreePhaseSample balanced_set(double amplitude, double theta, double phase) {
  const double angle = theta + phase;
  return {amplitude * std::cos(angle), amplitude * std::cos(angle - kThird),
          amplitude * std::cos(angle + kThird)};
}

}  // namespace mgse
