#pragma once

// Analytic reference trajectories (position, velocity, acceleration).

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fjmpc/controllers.hpp"

namespace fjmpc {

/// Rest-to-rest septic blend: s(x) = 35x^4 - 84x^5 + 70x^6 - 20x^7, x = t/T.
/// Velocity, acceleration and jerk vanish at both ends.
inline ReferenceSample septic_trajectory(double q0, double q1, double T, double t) {
  if (!(T > 0.0)) throw ConfigError("septic_trajectory: T must be > 0");
  const double x = std::clamp(t / T, 0.0, 1.0);
  const double x2 = x * x, x3 = x2 * x, x4 = x3 * x;
  const double s = x4 * (35.0 - 84.0 * x + 70.0 * x2 - 20.0 * x3);
  const double ds = x3 * (140.0 - 420.0 * x + 420.0 * x2 - 140.0 * x3);
  const double dds = x2 * (420.0 - 1680.0 * x + 2100.0 * x2 - 840.0 * x3);
  const double h = q1 - q0;
  const bool inside = t > 0.0 && t < T;
  return {Vec::Constant(1, q0 + h * s), Vec::Constant(1, inside ? h * ds / T : 0.0),
          Vec::Constant(1, inside ? h * dds / (T * T) : 0.0)};
}

/// Linear chirp A sin(2 pi (f0 t + (f1 - f0) t^2 / (2T))). Outside [0, T] the
/// phase keeps its end-point value (reference holds still).
inline ReferenceSample chirp_trajectory(double A, double f0, double f1, double T, double t) {
  if (!(T > 0.0)) throw ConfigError("chirp_trajectory: T must be > 0");
  const double tc = std::clamp(t, 0.0, T);
  const double two_pi = 2.0 * std::numbers::pi;
  const double k = (f1 - f0) / T;
  const double phase = two_pi * (f0 * tc + 0.5 * k * tc * tc);
  const bool inside = t >= 0.0 && t <= T;
  const double w = two_pi * (f0 + k * tc);  // instantaneous angular frequency
  const double dw = two_pi * k;
  const double q = A * std::sin(phase);
  const double dq = inside ? A * std::cos(phase) * w : 0.0;
  const double ddq = inside ? A * (-std::sin(phase) * w * w + std::cos(phase) * dw) : 0.0;
  return {Vec::Constant(1, q), Vec::Constant(1, dq), Vec::Constant(1, ddq)};
}

inline ReferenceSample step_reference(double q0, double q1, double t_step, double t) {
  return ReferenceSample::constant(Vec::Constant(1, t >= t_step ? q1 : q0));
}

}  // namespace fjmpc
