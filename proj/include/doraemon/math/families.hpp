#pragma once

// One-dimensional density formulas on the unit interval [0, 1].
//
// Templated on the scalar type so the optimizer can differentiate them with
// Dual numbers. Physical-space quantities follow from the affine rescaling:
// log-densities shift by -ln(width), entropies by +ln(width), KL is invariant.

#include <cmath>

#include "doraemon/math/dual.hpp"
#include "doraemon/math/special.hpp"

namespace doraemon::math {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // ln sqrt(2 pi)

// ---------------------------------------------------------------- Beta

template <class T>
T beta_log_pdf(const T& a, const T& b, double x) {
  using std::log;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta(a, b);
}

template <class T>
T beta_entropy(const T& a, const T& b) {
  return log_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) +
         (a + b - 2.0) * digamma(a + b);
}

/// KL(Be(ap, bp) || Be(aq, bq)).
template <class T>
T beta_kl(const T& ap, const T& bp, double aq, double bq) {
  const T dab = digamma(ap + bp);
  return log_beta(T(aq), T(bq)) - log_beta(ap, bp) + (ap - aq) * digamma(ap) +
         (bp - bq) * digamma(bp) + (aq - ap + bq - bp) * dab;
}

// ---------------------------------------------------- truncated Gaussian

template <class T>
T std_normal_pdf(const T& z) {
  using std::exp;
  return exp(-0.5 * z * z - kLogSqrt2Pi);
}

/// Normalizer Phi(beta) - Phi(alpha) of a Gaussian truncated to [alpha, beta]
/// in standardized units, evaluated on the tail that keeps precision.
template <class T>
T truncation_mass(const T& alpha, const T& beta) {
  using std::erfc;
  constexpr double r = 0.70710678118654752440;  // 1/sqrt(2)
  if (value_of(alpha) >= 0.0) return 0.5 * (erfc(alpha * r) - erfc(beta * r));
  if (value_of(beta) <= 0.0) return 0.5 * (erfc(-beta * r) - erfc(-alpha * r));
  return 1.0 - 0.5 * erfc(-alpha * r) - 0.5 * erfc(beta * r);
}

/// State shared by the truncated-Gaussian formulas on [0, 1].
template <class T>
struct TruncatedUnitGaussian {
  T mean, sd, alpha, beta, mass, pdf_alpha, pdf_beta;

  TruncatedUnitGaussian(const T& m, const T& s)
      : mean(m), sd(s), alpha((0.0 - m) / s), beta((1.0 - m) / s) {
    mass = truncation_mass(alpha, beta);
    pdf_alpha = std_normal_pdf(alpha);
    pdf_beta = std_normal_pdf(beta);
  }

  T log_pdf(double x) const {
    using std::log;
    const T z = (x - mean) / sd;
    return -0.5 * z * z - log(sd) - kLogSqrt2Pi - log(mass);
  }

  T entropy() const {
    using std::log;
    return 0.5 + kLogSqrt2Pi + log(sd) + log(mass) +
           (alpha * pdf_alpha - beta * pdf_beta) / (2.0 * mass);
  }

  T moment_mean() const { return mean + sd * (pdf_alpha - pdf_beta) / mass; }

  T moment_variance() const {
    const T ratio = (pdf_alpha - pdf_beta) / mass;
    return sd * sd * (1.0 + (alpha * pdf_alpha - beta * pdf_beta) / mass - ratio * ratio);
  }
};

/// KL(p || q) for Gaussians truncated to the same interval [0, 1].
template <class T>
T truncated_gaussian_kl(const T& mp, const T& sp, double mq, double sq) {
  using std::log;
  const TruncatedUnitGaussian<T> p(mp, sp);
  const TruncatedUnitGaussian<double> q(mq, sq);
  const T mu = p.moment_mean() - mq;
  const T second = p.moment_variance() + mu * mu;
  return -p.entropy() + kLogSqrt2Pi + std::log(sq) + std::log(q.mass) + second / (2.0 * sq * sq);
}

}  // namespace doraemon::math
