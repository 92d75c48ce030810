#pragma once

// abc <-> dq0 Park transformation.
//
// Convention: amplitude-invariant (2/3 factor on the forward transform) with the
// d-axis aligned to the cosine of the rotating angle and q lagging d by 90 degrees:
//
//   d =  2/3 [ a cos(th) + b cos(th - 2pi/3) + c cos(th + 2pi/3) ]
//   q = -2/3 [ a sin(th) + b sin(th - 2pi/3) + c sin(th + 2pi/3) ]
//
// A balanced set a = V cos(th + phi), b = V cos(th + phi - 2pi/3), ... maps to
// d = V cos(phi), q = V sin(phi). The zero-sequence channel is structurally zero.

namespace mgse {

struct ThreePhaseSample {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

struct DqSample {
  double d = 0.0;
  double q = 0.0;

  friend bool operator==(const DqSample&, const DqSample&) = default;
};

DqSample park(const ThreePhaseSample& sample, double theta);
ThreePhaseSample inverse_park(const DqSample& sample, double theta);

/// Balanced three-phase set of peak amplitude `amplitude` whose phase-a angle is
/// `theta + phase`.
ThreePhaseSample balanced_set(double amplitude, double theta, double phase = 0.0);

}  // namespace mgse
