#pragma once

// Gamma-family special functions used by the Beta family: log-gamma, digamma
// and trigamma, each usable with plain doubles and with Dual numbers.

#include <cmath>
#include <stdexcept>

#include "doraemon/math/dual.hpp"

namespace doraemon::math {

/// Digamma for x > 0: upward recurrence to x >= 10, then the asymptotic series.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  // Bernoulli-number coefficients B_{2k} / (2k).
  const double series =
      r * (1.0 / 12 -
           r * (1.0 / 120 -
                r * (1.0 / 252 -
                     r * (1.0 / 240 - r * (1.0 / 132 - r * (691.0 / 32760 - r * (1.0 / 12)))))));
  return acc + std::log(x) - 0.5 / x - series;
}

/// Trigamma for x > 0.
inline double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: argument must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double ix = 1.0 / x;
  const double r = ix * ix;
  const double series =
      ix * (1.0 +
            ix * (0.5 +
                  ix * (1.0 / 6 -
                        r * (1.0 / 30 -
                             r * (1.0 / 42 -
                                  r * (1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * (7.0 / 6)))))))));
  return acc + series;
}

inline double lgamma(double x) { return std::lgamma(x); }

template <std::size_t N> Dual<N> lgamma(const Dual<N>& x) {
  return chain(x, std::lgamma(x.v), digamma(x.v));
}
template <std::size_t N> Dual<N> digamma(const Dual<N>& x) {
  return chain(x, digamma(x.v), trigamma(x.v));
}

/// ln B(a, b).
template <class T>
T log_beta(const T& a, const T& b) {
  return math::lgamma(a) + math::lgamma(b) - math::lgamma(a + b);
}

}  // namespace doraemon::math
