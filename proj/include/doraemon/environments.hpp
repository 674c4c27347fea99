#pragma once

// Latent-dynamics test environments.
//
// InclinedPlane: a unit-mass cart on a frictionless plane of unknown
// inclination omega, pushed by a bounded force. Gravity can only be cancelled
// when |omega| <= arcsin(a_max / F_g).
//
// SkillRegion: a policy-free task whose success set is a box in dynamics space
// that grows with the number of training episodes seen so far.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "doraemon/distributions.hpp"
#include "doraemon/estimator.hpp"
#include "doraemon/history.hpp"

namespace doraemon {

class EnvironmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline const std::string kBalancedPredicate = "balanced";
inline const std::string kSkillPredicate = "in_skill_region";

/// Angular allowance around omega_c inside which success is not decided by
/// feasibility alone: a cart can stay in band for hold_steps while drifting
/// slightly beyond omega_c, and a saturated controller loses some episodes just
/// below it.
inline constexpr double kFeasibilityMargin = 0.05;

// ----------------------------------------------------------- inclined plane

struct InclinedPlaneConfig {
  double gravity = 9.81;                         // F_g, unit mass
  double max_force = 9.81 / std::sqrt(2.0);      // a_max
  double dt = 0.05;
  int horizon = 200;
  double band = 0.1;                             // half-width of the balanced region
  int hold_steps = 25;                           // in-band steps needed for success
  double half_length = 1.0;                      // episode ends once |x| exceeds this
  double initial_spread = 0.05;                  // x0 ~ U(-spread, spread), v0 = 0

  void validate() const {
    if (!(max_force > 0.0 && max_force <= gravity)) throw EnvironmentError("inclined plane needs 0 < a_max <= F_g");
    if (!(dt > 0.0) || horizon < 1) throw EnvironmentError("inclined plane needs dt > 0 and horizon >= 1");
    if (hold_steps < 0 || hold_steps > horizon) throw EnvironmentError("hold_steps must lie in [0, horizon]");
    if (!(band > 0.0 && band < half_length)) throw EnvironmentError("band must lie inside the plane");
  }

  BoundedSupport support() const { return {{-M_PI / 2}, {M_PI / 2}}; }
};

struct PlaneState {
  double x = 0.0;
  double v = 0.0;
  int t = 0;
};

/// Semi-implicit Euler step; the action is clamped to [-a_max, a_max].
inline PlaneState plane_step(const PlaneState& s, double action, double omega, const InclinedPlaneConfig& cfg) {
  const double a = std::clamp(action, -cfg.max_force, cfg.max_force);
  PlaneState n;
  n.v = s.v + cfg.dt * (a - cfg.gravity * std::sin(omega));
  n.x = s.x + cfg.dt * n.v;
  n.t = s.t + 1;
  return n;
}

/// omega_c = arcsin(a_max / F_g).
inline double feasible_half_width(const InclinedPlaneConfig& cfg) {
  if (!(cfg.max_force > 0.0)) throw EnvironmentError("feasible_half_width needs a_max > 0");
  if (cfg.max_force > cfg.gravity) throw EnvironmentError("feasible_half_width needs a_max <= F_g");
  return std::asin(cfg.max_force / cfg.gravity);
}

struct PlaneRollout {
  TrajectorySummary summary;
  int in_band_steps = 0;
  bool success = false;
};

/// Per-step reward: 1 inside the band, -|x| / half_length outside. Leaving the
/// plane ends the episode and charges -1 for every remaining step.
template <class Policy>
PlaneRollout plane_rollout(Policy&& policy, std::size_t window, double omega, const InclinedPlaneConfig& cfg, Rng& rng) {
  PlaneState s;
  s.x = cfg.initial_spread > 0.0 ? std::uniform_real_distribution<double>(-cfg.initial_spread, cfg.initial_spread)(rng)
                                 : 0.0;
  History history(window, 2);
  PlaneRollout out;
  double ret = 0.0;
  while (s.t < cfg.horizon) {
    const double obs[2] = {s.x, s.v};
    const double a = std::clamp(static_cast<double>(policy(history, std::span<const double>(obs, 2))), -cfg.max_force,
                                cfg.max_force);
    history.push(std::span<const double>(obs, 2), a);
    s = plane_step(s, a, omega, cfg);
    const double ax = std::abs(s.x);
    if (ax <= cfg.band) {
      ret += 1.0;
      ++out.in_band_steps;
    } else {
      ret -= std::min(ax, cfg.half_length) / cfg.half_length;
    }
    if (ax > cfg.half_length) {
      ret -= static_cast<double>(cfg.horizon - s.t);
      break;
    }
  }
  out.success = out.in_band_steps >= cfg.hold_steps;
  out.summary.return_value = ret;
  out.summary.steps = std::max(s.t, 1);
  out.summary.predicates[kBalancedPredicate] = out.success;
  return out;
}

/// Saturated PD controller towards the plane centre; needs no history.
struct ScriptedPdPolicy {
  double kp = 200.0;
  double kd = 25.0;
  double operator()(const History&, std::span<const double> s) const { return -kp * s[0] - kd * s[1]; }
};

// ----------------------------------------------------------- skill region

struct SkillRegionConfig {
  Vector center, half_width;
  double initial_multiplier = 0.2;
  int growth_episodes = 2000;  // episodes until the box reaches full size

  double multiplier(long long training_episode_index) const {
    if (growth_episodes <= 0) return 1.0;
    const double m = initial_multiplier +
                     (1.0 - initial_multiplier) * static_cast<double>(training_episode_index) / growth_episodes;
    return std::clamp(m, 0.0, 1.0);
  }

  void validate(const BoundedSupport& support) const {
    if (center.size() != support.dims() || half_width.size() != support.dims())
      throw EnvironmentError("skill box dimensions must match the support");
    for (std::size_t d = 0; d < support.dims(); ++d) {
      if (!(half_width[d] > 0.0)) throw EnvironmentError("skill box half widths must be positive");
      if (center[d] - half_width[d] < support.lo(d) || center[d] + half_width[d] > support.hi(d))
        throw EnvironmentError("skill box must lie inside the support");
    }
    if (!(initial_multiplier >= 0.0 && initial_multiplier <= 1.0))
      throw EnvironmentError("initial skill multiplier must lie in [0, 1]");
  }
};

/// Closed-box membership test at the current skill level.
inline TrajectorySummary skill_rollout(const SkillRegionConfig& cfg, std::span<const double> xi,
                                       long long training_episode_index) {
  const double m = cfg.multiplier(training_episode_index);
  bool inside = m > 0.0;
  for (std::size_t d = 0; d < xi.size() && inside; ++d)
    inside = std::abs(xi[d] - cfg.center[d]) <= m * cfg.half_width[d];
  TrajectorySummary s;
  s.return_value = inside ? 1.0 : 0.0;
  s.steps = 1;
  s.predicates[kSkillPredicate] = inside;
  return s;
}

/// Probability mass the spec assigns to the skill box at multiplier `m`.
inline double skill_box_mass(const DistributionSpec& spec, const SkillRegionConfig& cfg, double m) {
  double mass = 1.0;
  const auto& s = spec.support();
  for (std::size_t d = 0; d < spec.dims(); ++d) {
    const double lo = std::clamp((cfg.center[d] - m * cfg.half_width[d] - s.lo(d)) / s.width(d), 0.0, 1.0);
    const double hi = std::clamp((cfg.center[d] + m * cfg.half_width[d] - s.lo(d)) / s.width(d), 0.0, 1.0);
    if (spec.family() == Family::IndependentBeta) {
      mass *= boost::math::ibeta(spec.first(d), spec.second(d), hi) - boost::math::ibeta(spec.first(d), spec.second(d), lo);
    } else {
      const auto [mu, sd] = spec.unit_gaussian(d);
      auto cdf = [&](double u) { return 0.5 * std::erfc(-(u - mu) / (sd * M_SQRT2)); };
      mass *= (cdf(hi) - cdf(lo)) / (cdf(1.0) - cdf(0.0));
    }
  }
  return mass;
}

}  // namespace doraemon
