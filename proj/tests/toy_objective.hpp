#pragma once

// Negated quadratic with a single known maximizer, used to exercise the
// protocol and the tuner without any training.

namespace toy {

inline constexpr double a_star = 3.0;
inline constexpr double b_star = -2.0;

inline double objective(double a, double b) {
  return -((a - a_star) * (a - a_star) + (b - b_star) * (b - b_star));
}

}  // namespace toy
