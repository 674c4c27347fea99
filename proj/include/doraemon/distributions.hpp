#pragma once

// Parametric sampling distributions over a bounded box of dynamics parameters.
//
// A DistributionSpec is an immutable value: a support box, a family and one
// (first, second) parameter pair per dimension. Dimensions are independent, so
// every density-level quantity is a sum of one-dimensional terms evaluated on
// the unit interval after affine rescaling of each dimension.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "doraemon/math/families.hpp"

namespace doraemon {

using Vector = std::vector<double>;
using Rng = std::mt19937_64;

class DistributionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when rejection sampling cannot place a draw inside the support.
class SamplingError : public std::runtime_error {
 public:
  SamplingError(const std::string& what, std::size_t dimension)
      : std::runtime_error(what), dimension_(dimension) {}
  std::size_t dimension() const noexcept { return dimension_; }

 private:
  std::size_t dimension_;
};

class BoundedSupport {
 public:
  BoundedSupport(Vector lo, Vector hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
    if (lo_.empty()) throw DistributionError("support needs at least one dimension");
    if (lo_.size() != hi_.size()) throw DistributionError("support bounds differ in length");
    for (std::size_t d = 0; d < lo_.size(); ++d) {
      if (!(std::isfinite(lo_[d]) && std::isfinite(hi_[d]) && lo_[d] < hi_[d]))
        throw DistributionError("support requires finite lo < hi in dimension " + std::to_string(d));
    }
  }

  static BoundedSupport unit(std::size_t dims) { return {Vector(dims, 0.0), Vector(dims, 1.0)}; }

  std::size_t dims() const noexcept { return lo_.size(); }
  double lo(std::size_t d) const { return lo_.at(d); }
  double hi(std::size_t d) const { return hi_.at(d); }
  double width(std::size_t d) const { return hi_.at(d) - lo_.at(d); }
  const Vector& lo() const noexcept { return lo_; }
  const Vector& hi() const noexcept { return hi_; }

  Vector midpoint() const {
    Vector m(dims());
    for (std::size_t d = 0; d < dims(); ++d) m[d] = 0.5 * (lo_[d] + hi_[d]);
    return m;
  }

  /// Sum of ln(hi - lo): entropy of the uniform distribution on the box.
  double log_volume() const {
    double s = 0.0;
    for (std::size_t d = 0; d < dims(); ++d) s += std::log(width(d));
    return s;
  }

  bool contains(std::span<const double> xi) const {
    if (xi.size() != dims()) return false;
    for (std::size_t d = 0; d < dims(); ++d)
      if (!(xi[d] >= lo_[d] && xi[d] <= hi_[d])) return false;
    return true;
  }

  bool operator==(const BoundedSupport&) const = default;

 private:
  Vector lo_, hi_;
};

enum class Family { IndependentBeta, IndependentTruncatedGaussian };

inline std::string to_string(Family f) {
  return f == Family::IndependentBeta ? "beta" : "truncated_gaussian";
}

inline Family family_from_string(const std::string& s) {
  if (s == "beta") return Family::IndependentBeta;
  if (s == "truncated_gaussian" || s == "gaussian") return Family::IndependentTruncatedGaussian;
  throw DistributionError("unknown distribution family '" + s + "'");
}

struct BetaParams {
  Vector a, b;
};

struct TruncGaussParams {
  Vector mean, stddev;  // physical units
};

class DistributionSpec {
 public:
  static DistributionSpec beta(BoundedSupport support, Vector a, Vector b) {
    for (std::size_t d = 0; d < a.size(); ++d)
      if (!(a[d] > 0.0) || d >= b.size() || !(b[d] > 0.0) || !std::isfinite(a[d]) || !std::isfinite(b[d]))
        throw DistributionError("beta shapes must be positive and finite");
    return {std::move(support), Family::IndependentBeta, std::move(a), std::move(b)};
  }
  static DistributionSpec beta(BoundedSupport support, double a, double b) {
    const std::size_t n = support.dims();
    return beta(std::move(support), Vector(n, a), Vector(n, b));
  }

  static DistributionSpec truncated_gaussian(BoundedSupport support, Vector mean, Vector stddev) {
    for (std::size_t d = 0; d < mean.size(); ++d)
      if (!std::isfinite(mean[d]) || d >= stddev.size() || !(stddev[d] > 0.0) || !std::isfinite(stddev[d]))
        throw DistributionError("truncated gaussian needs finite mean and positive std");
    return {std::move(support), Family::IndependentTruncatedGaussian, std::move(mean), std::move(stddev)};
  }

  /// Generic constructor from a family and per-dimension parameter pairs.
  static DistributionSpec make(BoundedSupport support, Family family, Vector first, Vector second) {
    return family == Family::IndependentBeta
               ? beta(std::move(support), std::move(first), std::move(second))
               : truncated_gaussian(std::move(support), std::move(first), std::move(second));
  }

  Family family() const noexcept { return family_; }
  const BoundedSupport& support() const noexcept { return support_; }
  std::size_t dims() const noexcept { return support_.dims(); }

  /// Beta: shape a; truncated Gaussian: mean (physical units).
  double first(std::size_t d) const { return first_.at(d); }
  /// Beta: shape b; truncated Gaussian: std (physical units).
  double second(std::size_t d) const { return second_.at(d); }
  const Vector& first() const noexcept { return first_; }
  const Vector& second() const noexcept { return second_; }

  BetaParams beta_params() const {
    if (family_ != Family::IndependentBeta) throw DistributionError("spec is not a beta spec");
    return {first_, second_};
  }
  TruncGaussParams gaussian_params() const {
    if (family_ != Family::IndependentTruncatedGaussian)
      throw DistributionError("spec is not a truncated gaussian spec");
    return {first_, second_};
  }

  /// Mean and std of dimension d rescaled to the unit interval (Gaussian only).
  std::pair<double, double> unit_gaussian(std::size_t d) const {
    const double w = support_.width(d);
    return {(first_[d] - support_.lo(d)) / w, second_[d] / w};
  }

  bool operator==(const DistributionSpec&) const = default;

 private:
  DistributionSpec(BoundedSupport support, Family family, Vector first, Vector second)
      : support_(std::move(support)), family_(family), first_(std::move(first)), second_(std::move(second)) {
    if (first_.size() != support_.dims() || second_.size() != support_.dims())
      throw DistributionError("parameter dimensions do not match the support");
  }

  BoundedSupport support_;
  Family family_;
  Vector first_, second_;
};

// ------------------------------------------------------------ unit space

inline Vector to_unit(const BoundedSupport& support, std::span<const double> xi) {
  if (!support.contains(xi)) throw DistributionError("point outside the support");
  Vector u(xi.size());
  for (std::size_t d = 0; d < xi.size(); ++d) u[d] = (xi[d] - support.lo(d)) / support.width(d);
  return u;
}

inline Vector from_unit(const BoundedSupport& support, std::span<const double> u) {
  if (!BoundedSupport::unit(support.dims()).contains(u))
    throw DistributionError("unit-space point outside [0, 1]^n");
  Vector xi(u.size());
  for (std::size_t d = 0; d < u.size(); ++d) xi[d] = support.lo(d) + u[d] * support.width(d);
  return xi;
}

/// The same distribution expressed on [0, 1]^n.
inline DistributionSpec to_unit(const DistributionSpec& spec) {
  auto unit = BoundedSupport::unit(spec.dims());
  if (spec.family() == Family::IndependentBeta) return DistributionSpec::beta(unit, spec.first(), spec.second());
  Vector m(spec.dims()), s(spec.dims());
  for (std::size_t d = 0; d < spec.dims(); ++d) std::tie(m[d], s[d]) = spec.unit_gaussian(d);
  return DistributionSpec::truncated_gaussian(unit, m, s);
}

inline DistributionSpec from_unit(const DistributionSpec& unit_spec, const BoundedSupport& support) {
  if (unit_spec.support() != BoundedSupport::unit(support.dims()))
    throw DistributionError("from_unit expects a spec on the unit box of matching dimension");
  if (unit_spec.family() == Family::IndependentBeta)
    return DistributionSpec::beta(support, unit_spec.first(), unit_spec.second());
  Vector m(support.dims()), s(support.dims());
  for (std::size_t d = 0; d < support.dims(); ++d) {
    m[d] = support.lo(d) + unit_spec.first(d) * support.width(d);
    s[d] = unit_spec.second(d) * support.width(d);
  }
  return DistributionSpec::truncated_gaussian(support, m, s);
}

// ------------------------------------------------------------ densities

namespace detail {

/// Log-density of dimension d at unit coordinate u, without the Jacobian.
inline double unit_log_pdf(const DistributionSpec& spec, std::size_t d, double u) {
  if (spec.family() == Family::IndependentBeta) {
    // Endpoints carry zero or infinite density; the limits are what callers want.
    const double a = spec.first(d), b = spec.second(d);
    if (u <= 0.0) return a < 1.0 ? std::numeric_limits<double>::infinity()
                                 : (a == 1.0 ? -math::log_beta(a, b) : -std::numeric_limits<double>::infinity());
    if (u >= 1.0) return b < 1.0 ? std::numeric_limits<double>::infinity()
                                 : (b == 1.0 ? -math::log_beta(a, b) : -std::numeric_limits<double>::infinity());
    return math::beta_log_pdf(a, b, u);
  }
  const auto [m, s] = spec.unit_gaussian(d);
  return math::TruncatedUnitGaussian<double>(m, s).log_pdf(u);
}

inline double unit_entropy(const DistributionSpec& spec, std::size_t d) {
  if (spec.family() == Family::IndependentBeta) return math::beta_entropy(spec.first(d), spec.second(d));
  const auto [m, s] = spec.unit_gaussian(d);
  return math::TruncatedUnitGaussian<double>(m, s).entropy();
}

inline double unit_kl(const DistributionSpec& p, const DistributionSpec& q, std::size_t d) {
  if (p.family() == Family::IndependentBeta)
    return math::beta_kl(p.first(d), p.second(d), q.first(d), q.second(d));
  const auto [mp, sp] = p.unit_gaussian(d);
  const auto [mq, sq] = q.unit_gaussian(d);
  return math::truncated_gaussian_kl(mp, sp, mq, sq);
}

}  // namespace detail

enum class Density { Strict, Permissive };

/// Log-density in nats on the physical support.
///
/// Strict mode throws for points outside the support; Permissive returns -inf.
inline double log_pdf(const DistributionSpec& spec, std::span<const double> xi, Density mode = Density::Strict) {
  const auto& s = spec.support();
  if (!s.contains(xi)) {
    if (mode == Density::Permissive) return -std::numeric_limits<double>::infinity();
    throw DistributionError("log_pdf: point outside the support");
  }
  double total = 0.0;
  for (std::size_t d = 0; d < spec.dims(); ++d)
    total += detail::unit_log_pdf(spec, d, (xi[d] - s.lo(d)) / s.width(d)) - std::log(s.width(d));
  return total;
}

/// Differential entropy in nats on the physical support.
inline double entropy(const DistributionSpec& spec) {
  double h = 0.0;
  for (std::size_t d = 0; d < spec.dims(); ++d) h += detail::unit_entropy(spec, d);
  return h + spec.support().log_volume();
}

inline void require_compatible(const DistributionSpec& p, const DistributionSpec& q) {
  if (p.family() != q.family()) throw DistributionError("distribution families differ");
  if (p.support() != q.support()) throw DistributionError("distribution supports differ");
}

/// KL(p || q) in nats.
inline double kl_divergence(const DistributionSpec& p, const DistributionSpec& q) {
  require_compatible(p, q);
  double kl = 0.0;
  for (std::size_t d = 0; d < p.dims(); ++d) kl += detail::unit_kl(p, q, d);
  return std::max(kl, 0.0);
}

/// Widest member of the family: the uniform Be(1, 1) for Beta, and a
/// midpoint-centred Gaussian with std equal to the range for the Gaussian.
inline DistributionSpec max_entropy_spec(const BoundedSupport& support, Family family) {
  if (family == Family::IndependentBeta) return DistributionSpec::beta(support, 1.0, 1.0);
  Vector sd(support.dims());
  for (std::size_t d = 0; d < support.dims(); ++d) sd[d] = support.width(d);
  return DistributionSpec::truncated_gaussian(support, support.midpoint(), sd);
}

// ------------------------------------------------------------ sampling

struct SamplingOptions {
  int retry_cap = 1000;  // consecutive rejections allowed per draw
};

namespace detail {

/// Log of a Gamma(shape, 1) variate; stable for small shapes.
inline double log_gamma_variate(double shape, Rng& rng) {
  if (shape >= 1.0) return std::log(std::gamma_distribution<double>(shape, 1.0)(rng));
  const double g = std::gamma_distribution<double>(shape + 1.0, 1.0)(rng);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return std::log(g) + std::log(u) / shape;
}

inline double sample_unit(const DistributionSpec& spec, std::size_t d, Rng& rng, const SamplingOptions& opt) {
  for (int attempt = 0; attempt <= opt.retry_cap; ++attempt) {
    double u;
    if (spec.family() == Family::IndependentBeta) {
      const double lx = log_gamma_variate(spec.first(d), rng);
      const double ly = log_gamma_variate(spec.second(d), rng);
      u = 1.0 / (1.0 + std::exp(ly - lx));
    } else {
      const auto [m, s] = spec.unit_gaussian(d);
      u = std::normal_distribution<double>(m, s)(rng);
    }
    if (u > 0.0 && u < 1.0) return u;
  }
  throw SamplingError("sampling rejected " + std::to_string(opt.retry_cap) +
                          " consecutive draws outside the support in dimension " + std::to_string(d),
                      d);
}

}  // namespace detail

/// Draws `count` points strictly inside the support.
inline std::vector<Vector> sample(const DistributionSpec& spec, int count, Rng& rng, const SamplingOptions& opt = {}) {
  if (count < 1) throw DistributionError("sample count must be at least 1");
  const auto& s = spec.support();
  std::vector<Vector> out(static_cast<std::size_t>(count), Vector(spec.dims()));
  for (auto& xi : out) {
    for (std::size_t d = 0; d < spec.dims(); ++d) {
      xi[d] = s.lo(d) + detail::sample_unit(spec, d, rng, opt) * s.width(d);
      // Rounding in the affine map can land on a bound for extreme draws.
      xi[d] = std::clamp(xi[d], std::nextafter(s.lo(d), s.hi(d)), std::nextafter(s.hi(d), s.lo(d)));
    }
  }
  return out;
}

// ------------------------------------------------------------ serialization

inline void to_json(nlohmann::json& j, const DistributionSpec& spec) {
  Vector params;
  params.reserve(2 * spec.dims());
  for (std::size_t d = 0; d < spec.dims(); ++d) {
    params.push_back(spec.first(d));
    params.push_back(spec.second(d));
  }
  j = nlohmann::json{{"family", to_string(spec.family())},
                     {"dims", spec.dims()},
                     {"lo", spec.support().lo()},
                     {"hi", spec.support().hi()},
                     {"params", params}};
}

inline DistributionSpec spec_from_json(const nlohmann::json& j) {
  const auto family = family_from_string(j.at("family").get<std::string>());
  BoundedSupport support(j.at("lo").get<Vector>(), j.at("hi").get<Vector>());
  if (j.contains("dims") && j.at("dims").get<std::size_t>() != support.dims())
    throw DistributionError("'dims' does not match the bounds");
  const auto params = j.at("params").get<Vector>();
  if (params.size() != 2 * support.dims()) throw DistributionError("'params' must hold two values per dimension");
  Vector first(support.dims()), second(support.dims());
  for (std::size_t d = 0; d < support.dims(); ++d) {
    first[d] = params[2 * d];
    second[d] = params[2 * d + 1];
  }
  return DistributionSpec::make(std::move(support), family, std::move(first), std::move(second));
}

inline void to_json(nlohmann::json& j, const BoundedSupport& s) { j = {{"lo", s.lo()}, {"hi", s.hi()}}; }

inline BoundedSupport support_from_json(const nlohmann::json& j) {
  return {j.at("lo").get<Vector>(), j.at("hi").get<Vector>()};
}

}  // namespace doraemon
