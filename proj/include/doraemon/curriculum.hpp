#pragma once

// Training-distribution schedulers: DORAEMON and the No-DR, Fixed-DR and
// AutoDR baselines, all behind one Scheduler interface.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "doraemon/distributions.hpp"
#include "doraemon/estimator.hpp"
#include "doraemon/optimizer.hpp"

namespace doraemon {

class CurriculumError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ------------------------------------------------------------ DORAEMON

enum class Branch { Main, BackupThenMain, BackupContinue, Skipped };

inline std::string to_string(Branch b) {
  switch (b) {
    case Branch::Main: return "main";
    case Branch::BackupThenMain: return "backup_main";
    case Branch::BackupContinue: return "backup_continue";
    default: return "skipped";
  }
}

/// Diagnostics of one distribution update.
struct IterationDiagnostics {
  int iter = 0;
  Branch branch = Branch::Main;
  StepStatus status = StepStatus::MainStepOk;
  double entropy_before = 0.0, entropy_after = 0.0;
  double kl = 0.0;               // KL(phi_{i+1} || phi_i)
  double g_hat_before = 0.0;     // Monte-Carlo success of the records
  double g_hat_after = 0.0;      // estimated success of phi_{i+1}
  double start_success = 0.0;    // estimated success at the main step's start point
  int solver_iters = 0;
};

struct BestSnapshot {
  int iteration = -1;
  double global_success = -1.0;
  std::optional<DistributionSpec> phi;
  nlohmann::json policy;
};

struct CurriculumState {
  DistributionSpec phi_current;
  int iteration = 0;
  int episodes_per_update = 50;  // K
  int max_iterations = 100;      // M
  std::vector<IterationDiagnostics> history;
  BestSnapshot best;
};

/// One distribution update. With the backup enabled this follows the
/// feasibility-restoring scheme: when the records' success rate is below
/// alpha, first maximize estimated success inside the trust region; if that
/// still falls short, adopt the backup solution and stop, otherwise run the
/// entropy step from it. With the backup disabled an infeasible iteration
/// leaves the distribution unchanged.
inline IterationDiagnostics doraemon_iteration(CurriculumState& state, std::span<const EpisodeRecord> records,
                                               const StepConfig& cfg, bool backup_enabled = true) {
  if (state.iteration >= state.max_iterations) throw CurriculumError("curriculum already ran its M iterations");
  const DistributionSpec phi_i = state.phi_current;
  IterationDiagnostics diag;
  diag.iter = state.iteration + 1;
  diag.entropy_before = entropy(phi_i);
  diag.g_hat_before = mc_success_rate(records);

  DistributionSpec start = phi_i;
  diag.start_success = diag.g_hat_before;
  bool run_main = true;
  if (diag.g_hat_before < cfg.alpha) {
    if (!backup_enabled) {
      diag.branch = Branch::Skipped;
      diag.status = StepStatus::Stalled;
      run_main = false;
    } else {
      const auto backup = backup_step(phi_i, records, cfg);
      diag.solver_iters += backup.solver_iterations;
      diag.status = backup.status;
      start = backup.phi_next;
      diag.start_success = backup.estimated_success;
      if (backup.estimated_success < cfg.alpha) {
        diag.branch = Branch::BackupContinue;
        run_main = false;
      } else {
        diag.branch = Branch::BackupThenMain;
      }
    }
  }

  DistributionSpec next = start;
  if (run_main) {
    // Records were drawn from phi_i, so importance weights stay relative to it.
    const auto main = doraemon_step(start, records, cfg, phi_i);
    diag.solver_iters += main.solver_iterations;
    diag.status = main.status;
    next = main.phi_next;
  }

  diag.entropy_after = entropy(next);
  diag.kl = kl_divergence(next, phi_i);
  diag.g_hat_after = is_success_rate(records, phi_i, next, cfg.clip);
  state.phi_current = next;
  ++state.iteration;
  state.history.push_back(diag);
  return diag;
}

// ------------------------------------------------------------ baselines

/// Fixed-DR trains on the maximum-entropy (uniform) distribution.
inline DistributionSpec fixed_dr_spec(const BoundedSupport& support) {
  return max_entropy_spec(support, Family::IndependentBeta);
}

/// No-DR: a degenerate sampler that always yields the nominal parameters.
struct NoDrSampler {
  Vector nominal;
  std::vector<Vector> sample(int count) const { return std::vector<Vector>(static_cast<std::size_t>(count), nominal); }
};

inline NoDrSampler no_dr_spec(const BoundedSupport& support, std::optional<Vector> nominal = std::nullopt) {
  Vector xi = nominal ? *nominal : support.midpoint();
  if (!support.contains(xi)) throw CurriculumError("No-DR nominal parameters lie outside the support");
  return {std::move(xi)};
}

// ------------------------------------------------------------ AutoDR

struct AutoDRConfig {
  int buffer_size = 10;          // m, returns per boundary before a decision
  double delta_fraction = 0.02;  // expansion step as a fraction of each range
  double t_high = 0.0;           // widen when boundary mean return >= t_high
  std::optional<double> t_low;   // shrink when mean < t_low; defaults to t_high / 2
  double boundary_prob = 0.5;
  double initial_half_width = 1e-6;  // relative to each range
};

struct BoundaryTag {
  std::size_t dim = 0;
  bool upper = false;
  std::size_t index() const { return 2 * dim + (upper ? 1 : 0); }
  bool operator==(const BoundaryTag&) const = default;
};

struct AutoDRState {
  BoundedSupport benchmark;
  Vector lo_cur, hi_cur;
  std::vector<std::vector<double>> buffers;  // 2 * dims, indexed by BoundaryTag::index
  Vector delta;
  double t_high = 0.0, t_low = 0.0;
  double boundary_prob = 0.5;
  int buffer_size = 10;

  /// Entropy of the current uniform distribution.
  double entropy() const {
    double h = 0.0;
    for (std::size_t d = 0; d < lo_cur.size(); ++d) h += std::log(hi_cur[d] - lo_cur[d]);
    return h;
  }
};

inline AutoDRState make_autodr_state(const BoundedSupport& benchmark, const AutoDRConfig& cfg) {
  if (cfg.buffer_size < 1) throw CurriculumError("AutoDR buffer size must be at least 1");
  if (!(cfg.boundary_prob >= 0.0 && cfg.boundary_prob <= 1.0)) throw CurriculumError("boundary_prob must lie in [0, 1]");
  AutoDRState s{benchmark, {}, {}, std::vector<std::vector<double>>(2 * benchmark.dims()), {}, cfg.t_high,
                cfg.t_low.value_or(0.5 * cfg.t_high), cfg.boundary_prob, cfg.buffer_size};
  const auto mid = benchmark.midpoint();
  for (std::size_t d = 0; d < benchmark.dims(); ++d) {
    const double w = benchmark.width(d);
    s.lo_cur.push_back(mid[d] - cfg.initial_half_width * w);
    s.hi_cur.push_back(mid[d] + cfg.initial_half_width * w);
    s.delta.push_back(cfg.delta_fraction * w);
  }
  return s;
}

struct AutoDRDraw {
  Vector xi;
  std::optional<BoundaryTag> tag;
};

/// With probability boundary_prob pins one uniformly chosen bound and tags the
/// draw; all other coordinates are uniform in the current bounds.
inline AutoDRDraw autodr_sample(const AutoDRState& state, Rng& rng) {
  const std::size_t n = state.lo_cur.size();
  AutoDRDraw draw;
  draw.xi.resize(n);
  for (std::size_t d = 0; d < n; ++d)
    draw.xi[d] = std::uniform_real_distribution<double>(state.lo_cur[d], state.hi_cur[d])(rng);
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < state.boundary_prob) {
    const std::size_t side = std::uniform_int_distribution<std::size_t>(0, 2 * n - 1)(rng);
    BoundaryTag tag{side / 2, side % 2 == 1};
    draw.xi[tag.dim] = tag.upper ? state.hi_cur[tag.dim] : state.lo_cur[tag.dim];
    draw.tag = tag;
  }
  return draw;
}

/// Adds a boundary episode's return to its buffer; a full buffer widens or
/// shrinks that bound by delta and is then cleared.
inline AutoDRState& autodr_update(AutoDRState& state, const EpisodeRecord& record, std::optional<BoundaryTag> tag) {
  if (!tag) throw CurriculumError("AutoDR update needs a boundary-tagged record");
  auto& buf = state.buffers.at(tag->index());
  buf.push_back(record.return_value);
  if (static_cast<int>(buf.size()) < state.buffer_size) return state;
  double mean = 0.0;
  for (double r : buf) mean += r;
  mean /= static_cast<double>(buf.size());
  buf.clear();
  const std::size_t d = tag->dim;
  double& lo = state.lo_cur[d];
  double& hi = state.hi_cur[d];
  if (mean >= state.t_high) {
    if (tag->upper) hi = std::min(hi + state.delta[d], state.benchmark.hi(d));
    else lo = std::max(lo - state.delta[d], state.benchmark.lo(d));
  } else if (mean < state.t_low) {
    if (tag->upper) hi = std::max(hi - state.delta[d], lo);
    else lo = std::min(lo + state.delta[d], hi);
  }
  return state;
}

// ------------------------------------------------------------ scheduler interface

/// Common driver-facing surface: draw K dynamics vectors, then learn from
/// the records obtained for them.
class Scheduler {
 public:
  virtual ~Scheduler() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Vector> propose(int k, Rng& rng) = 0;
  /// Updates the distribution; `records[k]` must correspond to proposal k.
  virtual void update(std::span<const EpisodeRecord> records) = 0;
  virtual double training_entropy() const = 0;
  /// Serializable current training distribution.
  virtual nlohmann::json distribution() const = 0;
  /// Scheduler-specific fields for the per-iteration log row.
  virtual nlohmann::json last_update() const { return nlohmann::json::object(); }
  virtual std::string last_branch() const { return "fixed"; }
};

class DoraemonScheduler final : public Scheduler {
 public:
  DoraemonScheduler(DistributionSpec initial, StepConfig step, int k, int m, bool backup_enabled)
      : state_{std::move(initial), 0, k, m, {}, {}}, step_(step), backup_(backup_enabled) {
    step_.validate();
  }

  std::string name() const override { return "doraemon"; }
  std::vector<Vector> propose(int k, Rng& rng) override { return sample(state_.phi_current, k, rng); }
  void update(std::span<const EpisodeRecord> records) override { doraemon_iteration(state_, records, step_, backup_); }
  double training_entropy() const override { return entropy(state_.phi_current); }
  nlohmann::json distribution() const override { return state_.phi_current; }
  std::string last_branch() const override {
    return state_.history.empty() ? "init" : to_string(state_.history.back().branch);
  }
  nlohmann::json last_update() const override {
    if (state_.history.empty()) return nlohmann::json::object();
    const auto& h = state_.history.back();
    return {{"status", to_string(h.status)},   {"entropy_before", h.entropy_before},
            {"entropy_after", h.entropy_after}, {"kl", h.kl},
            {"G_hat_before", h.g_hat_before},   {"G_hat_after", h.g_hat_after},
            {"start_success", h.start_success}, {"solver_iters", h.solver_iters}};
  }

  const CurriculumState& state() const noexcept { return state_; }

 private:
  CurriculumState state_;
  StepConfig step_;
  bool backup_;
};

class FixedScheduler final : public Scheduler {
 public:
  explicit FixedScheduler(DistributionSpec spec) : spec_(std::move(spec)) {}
  std::string name() const override { return "fixed"; }
  std::vector<Vector> propose(int k, Rng& rng) override { return sample(spec_, k, rng); }
  void update(std::span<const EpisodeRecord>) override {}
  double training_entropy() const override { return entropy(spec_); }
  nlohmann::json distribution() const override { return spec_; }

 private:
  DistributionSpec spec_;
};

class NoDrScheduler final : public Scheduler {
 public:
  explicit NoDrScheduler(NoDrSampler sampler) : sampler_(std::move(sampler)) {}
  std::string name() const override { return "nodr"; }
  std::vector<Vector> propose(int k, Rng&) override { return sampler_.sample(k); }
  void update(std::span<const EpisodeRecord>) override {}
  /// A point mass has no finite differential entropy.
  double training_entropy() const override { return -std::numeric_limits<double>::infinity(); }
  nlohmann::json distribution() const override { return {{"family", "point"}, {"xi", sampler_.nominal}}; }
  std::string last_branch() const override { return "nodr"; }

 private:
  NoDrSampler sampler_;
};

class AutoDrScheduler final : public Scheduler {
 public:
  AutoDrScheduler(const BoundedSupport& benchmark, const AutoDRConfig& cfg) : state_(make_autodr_state(benchmark, cfg)) {}
  std::string name() const override { return "autodr"; }
  std::vector<Vector> propose(int k, Rng& rng) override {
    tags_.clear();
    std::vector<Vector> out;
    for (int i = 0; i < k; ++i) {
      auto d = autodr_sample(state_, rng);
      out.push_back(std::move(d.xi));
      tags_.push_back(d.tag);
    }
    return out;
  }
  void update(std::span<const EpisodeRecord> records) override {
    if (records.size() != tags_.size()) throw CurriculumError("AutoDR records do not match the last proposal");
    for (std::size_t k = 0; k < records.size(); ++k)
      if (tags_[k]) autodr_update(state_, records[k], tags_[k]);
  }
  double training_entropy() const override { return state_.entropy(); }
  nlohmann::json distribution() const override {
    return {{"family", "uniform"}, {"lo", state_.lo_cur}, {"hi", state_.hi_cur}};
  }
  std::string last_branch() const override { return "autodr"; }
  const AutoDRState& state() const noexcept { return state_; }

 private:
  AutoDRState state_;
  std::vector<std::optional<BoundaryTag>> tags_;
};

}  // namespace doraemon
