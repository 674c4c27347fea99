#pragma once

// Per-iteration distribution updates.
//
// doraemon_step maximizes entropy subject to an importance-sampled success
// constraint and a KL trust region around the start point; backup_step
// maximizes the estimated success inside the same trust region. Both run a
// log-barrier interior method with BFGS inner solves in an unconstrained
// parameterization:
//   Beta:               theta = (log(a - floor), log(b - floor)) per dimension
//   truncated Gaussian: theta = (unit-space mean, log unit-space std)
// Every barrier iterate is strictly feasible, so returned specs satisfy the
// constraints without a separate repair pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "doraemon/distributions.hpp"
#include "doraemon/estimator.hpp"
#include "doraemon/math/dual.hpp"
#include "doraemon/math/families.hpp"

namespace doraemon {

/// Smallest Beta shape the optimizer will produce.
inline constexpr double kBetaShapeFloor = 0.05;

struct Tolerances {
  double kl = 1e-4;
  double g = 1e-3;
  double entropy = 1e-6;
};

struct SolverControls {
  int max_iterations = 300;  // BFGS iterations per barrier stage
  int restarts = 4;          // perturbed starts in addition to the start point
  double mu_initial = 1e-1;
  double mu_final = 1e-10;
  double mu_factor = 0.1;
  std::uint64_t seed = 0x5eed;
};

struct StepConfig {
  double alpha = 0.5;
  double epsilon = 0.05;
  Tolerances tol;
  SolverControls solver;
  std::optional<double> clip;  // importance-weight cap; none by default

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    if (clip && !(*clip > 0.0)) throw std::invalid_argument("clip must be positive");
  }
};

enum class StepStatus { MainStepOk, BackupStepOk, Stalled };

inline std::string to_string(StepStatus s) {
  switch (s) {
    case StepStatus::MainStepOk: return "main_ok";
    case StepStatus::BackupStepOk: return "backup_ok";
    default: return "stalled";
  }
}

struct StepResult {
  DistributionSpec phi_next;
  double entropy = 0.0;
  double kl_from_start = 0.0;
  double estimated_success = 0.0;
  StepStatus status = StepStatus::Stalled;
  int solver_iterations = 0;
};

class InfeasibleStartError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------- parameterization

inline Vector to_params(const DistributionSpec& spec) {
  Vector theta(2 * spec.dims());
  for (std::size_t d = 0; d < spec.dims(); ++d) {
    if (spec.family() == Family::IndependentBeta) {
      theta[2 * d] = std::log(std::max(spec.first(d) - kBetaShapeFloor, 1e-300));
      theta[2 * d + 1] = std::log(std::max(spec.second(d) - kBetaShapeFloor, 1e-300));
    } else {
      const auto [m, s] = spec.unit_gaussian(d);
      theta[2 * d] = m;
      theta[2 * d + 1] = std::log(s);
    }
  }
  return theta;
}

inline DistributionSpec from_params(const DistributionSpec& like, std::span<const double> theta) {
  const auto n = like.dims();
  Vector first(n), second(n);
  for (std::size_t d = 0; d < n; ++d) {
    if (like.family() == Family::IndependentBeta) {
      first[d] = kBetaShapeFloor + std::exp(theta[2 * d]);
      second[d] = kBetaShapeFloor + std::exp(theta[2 * d + 1]);
    } else {
      const double w = like.support().width(d);
      first[d] = like.support().lo(d) + theta[2 * d] * w;
      second[d] = std::exp(theta[2 * d + 1]) * w;
    }
  }
  return DistributionSpec::make(like.support(), like.family(), std::move(first), std::move(second));
}

// ------------------------------------------------------- objective model

namespace detail {

using D2 = math::Dual<2>;

/// Entropy, KL to a fixed centre and importance-sampled success, with
/// gradients in theta-space, for the records of one distribution update.
class StepModel {
 public:
  struct Eval {
    double entropy = 0.0, kl = 0.0, success = 0.0;
    Vector g_entropy, g_kl, g_success;
  };

  StepModel(const DistributionSpec& center, const DistributionSpec& proposal, std::span<const EpisodeRecord> records,
            std::optional<double> clip)
      : center_(center), clip_(clip) {
    if (records.empty()) throw EstimatorError("distribution update needs at least one record");
    require_compatible(center, proposal);
    inv_k_ = 1.0 / static_cast<double>(records.size());
    const auto& s = proposal.support();
    for (const auto& r : records) {
      if (!r.success) continue;
      Vector u = to_unit(s, r.xi);
      double lp = 0.0;
      for (std::size_t d = 0; d < s.dims(); ++d) lp += unit_log_pdf(proposal, d, u[d]);
      if (!std::isfinite(lp)) continue;
      units_.push_back(std::move(u));
      proposal_log_.push_back(lp);
    }
    if (center.family() == Family::IndependentTruncatedGaussian) {
      for (std::size_t d = 0; d < center.dims(); ++d) center_unit_.push_back(center.unit_gaussian(d));
    }
  }

  std::size_t dims() const { return center_.dims(); }
  bool has_successes() const { return !units_.empty(); }

  Eval evaluate(std::span<const double> theta, bool with_grad) const {
    const std::size_t n = dims();
    const bool beta = center_.family() == Family::IndependentBeta;
    Eval e;
    if (with_grad) e.g_entropy.assign(2 * n, 0.0), e.g_kl.assign(2 * n, 0.0), e.g_success.assign(2 * n, 0.0);

    std::vector<D2> p1(n), p2(n), norm(n);
    for (std::size_t d = 0; d < n; ++d) {
      const D2 t0 = D2::variable(theta[2 * d], 0);
      const D2 t1 = D2::variable(theta[2 * d + 1], 1);
      D2 h, kl;
      if (beta) {
        p1[d] = kBetaShapeFloor + exp(t0);
        p2[d] = kBetaShapeFloor + exp(t1);
        norm[d] = math::log_beta(p1[d], p2[d]);
        h = math::beta_entropy(p1[d], p2[d]);
        kl = math::beta_kl(p1[d], p2[d], center_.first(d), center_.second(d));
      } else {
        p1[d] = t0;
        p2[d] = exp(t1);
        const math::TruncatedUnitGaussian<D2> g(p1[d], p2[d]);
        norm[d] = log(p2[d]) + math::kLogSqrt2Pi + log(g.mass);
        h = g.entropy();
        kl = math::truncated_gaussian_kl(p1[d], p2[d], center_unit_[d].first, center_unit_[d].second);
      }
      e.entropy += h.v;
      e.kl += kl.v;
      if (with_grad) {
        for (int j = 0; j < 2; ++j) {
          e.g_entropy[2 * d + j] = h.d[j];
          e.g_kl[2 * d + j] = kl.d[j];
        }
      }
    }
    e.entropy += center_.support().log_volume();

    std::vector<D2> lp(n);
    for (std::size_t k = 0; k < units_.size(); ++k) {
      double total = -proposal_log_[k];
      for (std::size_t d = 0; d < n; ++d) {
        const double u = units_[k][d];
        if (beta) {
          lp[d] = (p1[d] - 1.0) * std::log(u) + (p2[d] - 1.0) * std::log1p(-u) - norm[d];
        } else {
          const D2 z = (u - p1[d]) / p2[d];
          lp[d] = -0.5 * z * z - norm[d];
        }
        total += lp[d].v;
      }
      double w = std::exp(total);
      if (clip_ && w > *clip_) {
        e.success += *clip_;
        continue;
      }
      e.success += w;
      if (with_grad)
        for (std::size_t d = 0; d < n; ++d)
          for (int j = 0; j < 2; ++j) e.g_success[2 * d + j] += w * lp[d].d[j];
    }
    e.success *= inv_k_;
    if (with_grad)
      for (auto& g : e.g_success) g *= inv_k_;
    return e;
  }

 private:
  DistributionSpec center_;
  std::optional<double> clip_;
  double inv_k_ = 0.0;
  std::vector<Vector> units_;
  Vector proposal_log_;
  std::vector<std::pair<double, double>> center_unit_;
};

// ------------------------------------------------------- BFGS

/// Returns false when theta lies outside the barrier's domain.
using ObjectiveFn = std::function<bool(std::span<const double>, double&, Vector&)>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct MinimizeResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
};

/// Quasi-Newton minimization with Armijo backtracking. `x0` must be in the domain.
inline MinimizeResult minimize_bfgs(const ObjectiveFn& fn, Vector x0, int max_iterations) {
  const std::size_t n = x0.size();
  MinimizeResult res{std::move(x0), 0.0, 0};
  Vector g(n), g_new(n), x_new(n), p(n), s(n), y(n);
  if (!fn(res.x, res.f, g)) throw std::runtime_error("minimize_bfgs: start point outside the domain");
  std::vector<double> hinv(n * n, 0.0);
  auto reset = [&] {
    std::fill(hinv.begin(), hinv.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) hinv[i * n + i] = 1.0;
  };
  reset();
  bool scaled = false;
  int flat = 0;
  for (; res.iterations < max_iterations; ++res.iterations) {
    double gmax = 0.0;
    for (double gi : g) gmax = std::max(gmax, std::abs(gi));
    if (gmax < 1e-12) break;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) p[i] -= hinv[i * n + j] * g[j];
    }
    double slope = dot(g, p);
    if (!(slope < 0.0)) {
      reset();
      scaled = false;
      for (std::size_t i = 0; i < n; ++i) p[i] = -g[i];
      slope = dot(g, p);
    }
    double t = 1.0;
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 80; ++ls, t *= 0.5) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = res.x[i] + t * p[i];
      if (fn(x_new, f_new, g_new) && std::isfinite(f_new) && f_new <= res.f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (scaled || hinv[0] != 1.0) {  // retry once along the gradient
        reset();
        scaled = false;
        continue;
      }
      break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - res.x[i];
      y[i] = g_new[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 1e-300) {
      if (!scaled) {
        const double scale = sy / dot(y, y);
        for (auto& h : hinv) h *= scale;
        scaled = true;
      }
      // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      const double rho = 1.0 / sy;
      Vector hy(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) hy[i] += hinv[i * n + j] * y[j];
      const double yhy = dot(y, hy);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          hinv[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
    }
    const double improvement = res.f - f_new;
    res.x = x_new;
    g = g_new;
    res.f = f_new;
    flat = improvement <= 1e-15 * (1.0 + std::abs(f_new)) ? flat + 1 : 0;
    if (flat >= 3) break;
  }
  return res;
}

enum class Problem { Entropy, Backup };

struct Candidate {
  Vector theta;
  StepModel::Eval eval;
  int iterations = 0;
};

/// Runs the barrier schedule from a strictly feasible `theta0`.
inline Candidate solve_barrier(const StepModel& model, Problem problem, const Vector& theta0, double alpha_eff,
                               double epsilon, const SolverControls& ctl) {
  const bool success_barrier = problem == Problem::Entropy && alpha_eff > 0.0;
  double mu = ctl.mu_initial;
  auto fn = [&](std::span<const double> th, double& f, Vector& g) {
    const auto e = model.evaluate(th, true);
    const double slack_kl = epsilon - e.kl;
    if (!(slack_kl > 0.0) || !std::isfinite(e.entropy) || !std::isfinite(e.success)) return false;
    const std::size_t n = th.size();
    g.assign(n, 0.0);
    if (problem == Problem::Entropy) {
      f = -e.entropy - mu * std::log(slack_kl);
      for (std::size_t i = 0; i < n; ++i) g[i] = -e.g_entropy[i] + mu * e.g_kl[i] / slack_kl;
      if (success_barrier) {
        const double slack_g = e.success - alpha_eff;
        if (!(slack_g > 0.0)) return false;
        f -= mu * std::log(slack_g);
        for (std::size_t i = 0; i < n; ++i) g[i] -= mu * e.g_success[i] / slack_g;
      }
    } else {
      if (!(e.success > 0.0)) return false;
      f = -std::log(e.success) - mu * std::log(slack_kl);
      for (std::size_t i = 0; i < n; ++i) g[i] = -e.g_success[i] / e.success + mu * e.g_kl[i] / slack_kl;
    }
    return std::isfinite(f);
  };
  Candidate c{theta0, {}, 0};
  for (; mu >= ctl.mu_final * (1.0 - 1e-9); mu *= ctl.mu_factor) {
    auto r = minimize_bfgs(fn, c.theta, ctl.max_iterations);
    c.theta = std::move(r.x);
    c.iterations += r.iterations;
  }
  c.eval = model.evaluate(c.theta, false);
  return c;
}

/// Start points for the multi-start: theta0 plus random perturbations placed
/// at a fraction of the trust region (and inside the success constraint).
inline std::vector<Vector> start_points(const StepModel& model, Problem problem, const Vector& theta0,
                                        double alpha_eff, double epsilon, const SolverControls& ctl) {
  std::vector<Vector> starts{theta0};
  Rng rng(ctl.seed);
  std::normal_distribution<double> normal;
  const double target = 0.3 * epsilon;
  for (int r = 0; r < ctl.restarts; ++r) {
    Vector dir(theta0.size());
    for (auto& v : dir) v = normal(rng);
    auto at = [&](double t) {
      Vector th = theta0;
      for (std::size_t i = 0; i < th.size(); ++i) th[i] += t * dir[i];
      return th;
    };
    // Bisection on the step length for KL == target along the ray.
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 60 && model.evaluate(at(hi), false).kl < target; ++i) hi *= 2.0;
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (lo + hi);
      const auto e = model.evaluate(at(mid), false);
      (std::isfinite(e.kl) && e.kl < target ? lo : hi) = mid;
    }
    double t = lo;
    for (int shrink = 0; shrink < 30 && t > 0.0; ++shrink, t *= 0.5) {
      const auto e = model.evaluate(at(t), false);
      const bool ok_kl = e.kl < epsilon;
      const bool ok_g = problem == Problem::Backup ? e.success > 0.0 : (alpha_eff <= 0.0 || e.success > alpha_eff);
      if (ok_kl && ok_g && std::isfinite(e.entropy)) {
        starts.push_back(at(t));
        break;
      }
    }
  }
  return starts;
}

inline StepResult make_result(const DistributionSpec& spec, const StepModel::Eval& e, StepStatus status,
                              int iterations) {
  return StepResult{spec, e.entropy, e.kl, e.success, status, iterations};
}

}  // namespace detail

// ------------------------------------------------------- public operations

struct SolverGradients {
  Vector grad_entropy, grad_kl, grad_success;
};

/// Gradients of entropy(phi), KL(phi || phi_ref) and the success estimate of
/// records drawn from phi_ref, with respect to the transformed parameters of phi.
inline SolverGradients solver_gradients(const DistributionSpec& phi, std::span<const EpisodeRecord> records,
                                        const DistributionSpec& phi_ref, std::optional<double> clip = std::nullopt) {
  const detail::StepModel model(phi_ref, phi_ref, records, clip);
  auto e = model.evaluate(to_params(phi), true);
  return {std::move(e.g_entropy), std::move(e.g_kl), std::move(e.g_success)};
}

/// Entropy-maximizing update inside the KL ball around `phi_start`, subject to
/// the success estimate of `records` staying at or above alpha.
///
/// `proposal` is the distribution the records were sampled from; it defaults
/// to `phi_start`. Throws InfeasibleStartError when the start point violates the
/// success constraint.
inline StepResult doraemon_step(const DistributionSpec& phi_start, std::span<const EpisodeRecord> records,
                                const StepConfig& cfg, const std::optional<DistributionSpec>& proposal = std::nullopt) {
  cfg.validate();
  const DistributionSpec& prop = proposal ? *proposal : phi_start;
  const detail::StepModel model(phi_start, prop, records, cfg.clip);
  const Vector theta0 = to_params(phi_start);
  const double g0 = is_success_rate(records, prop, phi_start, cfg.clip);
  if (g0 < cfg.alpha - 1e-12)
    throw InfeasibleStartError("doraemon_step: start point has estimated success " + std::to_string(g0) +
                               " below alpha " + std::to_string(cfg.alpha) + "; run backup_step first");
  const detail::StepModel::Eval start_eval{entropy(phi_start), 0.0, g0, {}, {}, {}};

  // A start sitting exactly on the constraint is admitted through tol_g.
  const double alpha_eff = g0 > cfg.alpha ? cfg.alpha : cfg.alpha - 0.5 * cfg.tol.g;
  const auto from_theta0 = model.evaluate(theta0, false);
  const bool theta0_ok = from_theta0.kl < cfg.epsilon && (alpha_eff <= 0.0 || from_theta0.success > alpha_eff);
  if (!theta0_ok) return detail::make_result(phi_start, start_eval, StepStatus::Stalled, 0);

  const auto starts = detail::start_points(model, detail::Problem::Entropy, theta0, alpha_eff, cfg.epsilon, cfg.solver);
  std::optional<detail::Candidate> best;
  int iterations = 0;
  bool any_finished = false;
  for (const auto& s : starts) {
    try {
      auto c = detail::solve_barrier(model, detail::Problem::Entropy, s, alpha_eff, cfg.epsilon, cfg.solver);
      iterations += c.iterations;
      any_finished = true;
      const bool feasible = c.eval.kl <= cfg.epsilon + cfg.tol.kl && c.eval.success >= cfg.alpha - cfg.tol.g;
      if (feasible && std::isfinite(c.eval.entropy) && (!best || c.eval.entropy > best->eval.entropy))
        best = std::move(c);
    } catch (const std::exception&) {
      // A failed start contributes no candidate.
    }
  }
  if (!any_finished) return detail::make_result(phi_start, start_eval, StepStatus::Stalled, iterations);
  if (!best || best->eval.entropy <= start_eval.entropy)
    return detail::make_result(phi_start, start_eval, StepStatus::MainStepOk, iterations);
  return detail::make_result(from_params(phi_start, best->theta), best->eval, StepStatus::MainStepOk, iterations);
}

/// Success-maximizing update inside the KL ball around `phi_current`, for
/// records sampled from `phi_current`.
inline StepResult backup_step(const DistributionSpec& phi_current, std::span<const EpisodeRecord> records,
                              const StepConfig& cfg) {
  cfg.validate();
  const detail::StepModel model(phi_current, phi_current, records, cfg.clip);
  const double g0 = is_success_rate(records, phi_current, phi_current, cfg.clip);
  const detail::StepModel::Eval start_eval{entropy(phi_current), 0.0, g0, {}, {}, {}};
  if (!model.has_successes()) return detail::make_result(phi_current, start_eval, StepStatus::BackupStepOk, 0);

  const Vector theta0 = to_params(phi_current);
  const auto e0 = model.evaluate(theta0, false);
  if (!(e0.kl < cfg.epsilon && e0.success > 0.0))
    return detail::make_result(phi_current, start_eval, StepStatus::Stalled, 0);

  const auto starts = detail::start_points(model, detail::Problem::Backup, theta0, 0.0, cfg.epsilon, cfg.solver);
  std::optional<detail::Candidate> best;
  int iterations = 0;
  bool any_finished = false;
  // Near-equal success values count as ties and go to the higher entropy.
  const double tie = 1e-12;
  for (const auto& s : starts) {
    try {
      auto c = detail::solve_barrier(model, detail::Problem::Backup, s, 0.0, cfg.epsilon, cfg.solver);
      iterations += c.iterations;
      any_finished = true;
      if (!(c.eval.kl <= cfg.epsilon + cfg.tol.kl) || !std::isfinite(c.eval.success)) continue;
      if (!best || c.eval.success > best->eval.success + tie ||
          (std::abs(c.eval.success - best->eval.success) <= tie && c.eval.entropy > best->eval.entropy))
        best = std::move(c);
    } catch (const std::exception&) {
    }
  }
  if (!any_finished) return detail::make_result(phi_current, start_eval, StepStatus::Stalled, iterations);
  const bool improves = best && (best->eval.success > g0 + tie ||
                                 (std::abs(best->eval.success - g0) <= tie && best->eval.entropy > start_eval.entropy));
  if (!improves) return detail::make_result(phi_current, start_eval, StepStatus::BackupStepOk, iterations);
  return detail::make_result(from_params(phi_current, best->theta), best->eval, StepStatus::BackupStepOk, iterations);
}

}  // namespace doraemon
