#pragma once

// Forward-mode dual number with a fixed number of derivative slots.
//
// Every distribution family in this library is a product of independent
// one-dimensional factors with two parameters each, so per-dimension math is
// instantiated with Dual<2> to obtain exact gradients with respect to the two
// transformed parameters of that dimension.

#include <array>
#include <cmath>
#include <cstddef>

namespace doraemon::math {

template <std::size_t N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(double value, const std::array<double, N>& grad) : v(value), d(grad) {}

  /// Independent variable seeded in slot `slot`.
  static constexpr Dual variable(double value, std::size_t slot) {
    Dual x(value);
    x.d[slot] = 1.0;
    return x;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (std::size_t i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (std::size_t i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (std::size_t i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    for (std::size_t i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }
};

template <std::size_t N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <std::size_t N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <std::size_t N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <std::size_t N> Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }
template <std::size_t N> Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <std::size_t N> Dual<N> operator+(double b, Dual<N> a) { a.v += b; return a; }
template <std::size_t N> Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <std::size_t N> Dual<N> operator-(double b, const Dual<N>& a) { return Dual<N>(b) - a; }
template <std::size_t N> Dual<N> operator*(Dual<N> a, double b) {
  a.v *= b;
  for (auto& x : a.d) x *= b;
  return a;
}
template <std::size_t N> Dual<N> operator*(double b, Dual<N> a) { return a * b; }
template <std::size_t N> Dual<N> operator/(Dual<N> a, double b) { return a * (1.0 / b); }
template <std::size_t N> Dual<N> operator/(double b, const Dual<N>& a) { return Dual<N>(b) / a; }
template <std::size_t N> Dual<N> operator-(Dual<N> a) { return a * -1.0; }

template <std::size_t N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <std::size_t N> bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }

/// Applies a scalar function with known derivative to a dual number.
template <std::size_t N>
Dual<N> chain(const Dual<N>& x, double fx, double dfx) {
  Dual<N> r(fx);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = dfx * x.d[i];
  return r;
}

template <std::size_t N> Dual<N> exp(const Dual<N>& x) {
  const double e = std::exp(x.v);
  return chain(x, e, e);
}
template <std::size_t N> Dual<N> log(const Dual<N>& x) { return chain(x, std::log(x.v), 1.0 / x.v); }
template <std::size_t N> Dual<N> sqrt(const Dual<N>& x) {
  const double s = std::sqrt(x.v);
  return chain(x, s, 0.5 / s);
}
template <std::size_t N> Dual<N> erfc(const Dual<N>& x) {
  return chain(x, std::erfc(x.v), -M_2_SQRTPI * std::exp(-x.v * x.v));
}

inline double value_of(double x) { return x; }
template <std::size_t N> double value_of(const Dual<N>& x) { return x.v; }

}  // namespace doraemon::math
