#pragma once

// History-conditioned policies and the trainers that produce episode records.
//
// Schedulers only see the Trainer interface: hand it dynamics parameters, get
// back one EpisodeRecord per parameter vector. Which learning algorithm runs
// behind it is the trainer's business.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doraemon/distributions.hpp"
#include "doraemon/environments.hpp"
#include "doraemon/estimator.hpp"
#include "doraemon/history.hpp"

namespace doraemon {

// ------------------------------------------------------------ policy

struct PolicyShape {
  std::size_t window = 5;     // past (state, action) pairs
  std::size_t state_dim = 2;
  std::vector<std::size_t> hidden;  // hidden tanh layer widths; empty means linear
  double action_scale = 1.0;

  std::size_t input_dim() const { return state_dim + window * (state_dim + 1); }

  std::size_t parameter_count() const {
    std::size_t n = 0, in = input_dim();
    for (auto h : hidden) {
      n += (in + 1) * h;
      in = h;
    }
    return n + in + 1;
  }
};

/// Feedforward map from (current state, flattened history) to an action in
/// [-action_scale, action_scale]. Past actions enter normalized by the scale.
class HistoryPolicy {
 public:
  explicit HistoryPolicy(PolicyShape shape) : shape_(std::move(shape)), weights_(shape_.parameter_count(), 0.0) {}
  HistoryPolicy(PolicyShape shape, Vector weights) : shape_(std::move(shape)), weights_(std::move(weights)) {
    if (weights_.size() != shape_.parameter_count()) throw std::invalid_argument("policy weight count mismatch");
  }

  const PolicyShape& shape() const noexcept { return shape_; }
  const Vector& weights() const noexcept { return weights_; }
  Vector& weights() noexcept { return weights_; }

  double act(const History& history, std::span<const double> state) const {
    Vector input(state.begin(), state.end());
    input.reserve(shape_.input_dim());
    const std::size_t first_hist = input.size();
    history.append_features(input);
    for (std::size_t i = first_hist + shape_.state_dim; i < input.size(); i += shape_.state_dim + 1)
      input[i] /= shape_.action_scale;

    std::size_t w = 0;
    Vector layer = std::move(input), next;
    for (auto width : shape_.hidden) {
      next.assign(width, 0.0);
      for (std::size_t j = 0; j < width; ++j) {
        double z = weights_[w++];
        for (double x : layer) z += weights_[w++] * x;
        next[j] = std::tanh(z);
      }
      layer.swap(next);
    }
    double z = weights_[w++];
    for (double x : layer) z += weights_[w++] * x;
    return shape_.action_scale * std::tanh(z);
  }

  double operator()(const History& history, std::span<const double> state) const { return act(history, state); }

 private:
  PolicyShape shape_;
  Vector weights_;
};

inline void to_json(nlohmann::json& j, const HistoryPolicy& p) {
  j = {{"window", p.shape().window},
       {"state_dim", p.shape().state_dim},
       {"layer_sizes", p.shape().hidden},
       {"action_scale", p.shape().action_scale},
       {"weights", p.weights()}};
}

inline HistoryPolicy policy_from_json(const nlohmann::json& j) {
  PolicyShape shape;
  shape.window = j.at("window").get<std::size_t>();
  shape.state_dim = j.at("state_dim").get<std::size_t>();
  shape.hidden = j.at("layer_sizes").get<std::vector<std::size_t>>();
  shape.action_scale = j.at("action_scale").get<double>();
  return {shape, j.at("weights").get<Vector>()};
}

// ------------------------------------------------------------ trainers

class Trainer {
 public:
  virtual ~Trainer() = default;

  /// Runs one training episode per entry of `xis` (in order) and updates the
  /// policy. Records carry the given dynamics parameters unchanged.
  virtual std::vector<EpisodeRecord> train_on(std::span<const Vector> xis) = 0;

  /// Samples K dynamics vectors from `nu` and trains on them.
  std::vector<EpisodeRecord> collect_and_train(const DistributionSpec& nu, int k, Rng& rng) {
    const auto xis = sample(nu, k, rng);
    return train_on(xis);
  }

  /// Evaluation episode of the current policy; never changes trainer state
  /// apart from the supplied rng.
  virtual TrajectorySummary evaluate(std::span<const double> xi, Rng& rng) const = 0;

  /// Serializable description of the current policy, enough to re-evaluate it.
  virtual nlohmann::json snapshot() const = 0;

  long long episodes_trained() const noexcept { return episodes_; }

 protected:
  long long episodes_ = 0;
};

struct CemConfig {
  int population = 32;
  double elite_fraction = 0.25;
  double initial_std = 1.0;
  double extra_noise = 0.5;   // added std, annealed geometrically per generation
  double noise_decay = 0.97;
  double min_std = 0.02;
};

/// Cross-entropy-method search over HistoryPolicy weights on the inclined
/// plane. Each call to train_on is one generation: episode k is run by
/// population member k mod P, and a member's fitness is the mean return of
/// its episodes.
class PlaneCemTrainer final : public Trainer {
 public:
  PlaneCemTrainer(InclinedPlaneConfig env, PolicyShape shape, CemConfig cem, SuccessIndicator indicator,
                  std::uint64_t seed)
      : env_(env), cem_(cem), indicator_(std::move(indicator)), policy_(prepare(std::move(shape), env)), rng_(seed) {
    env_.validate();
    std_.assign(policy_.weights().size(), cem_.initial_std);
  }

  const HistoryPolicy& policy() const noexcept { return policy_; }
  const InclinedPlaneConfig& environment() const noexcept { return env_; }

  /// Replaces the search mean, e.g. with a policy loaded from a snapshot.
  void set_policy(HistoryPolicy p) {
    if (p.weights().size() != policy_.weights().size()) throw std::invalid_argument("policy shape mismatch");
    policy_ = std::move(p);
  }
  int generation() const noexcept { return generation_; }

  std::vector<EpisodeRecord> train_on(std::span<const Vector> xis) override {
    const std::size_t pop = static_cast<std::size_t>(std::max(1, cem_.population));
    const std::size_t n = policy_.weights().size();
    std::normal_distribution<double> normal;
    std::vector<Vector> members(pop, Vector(n));
    for (auto& m : members)
      for (std::size_t i = 0; i < n; ++i) m[i] = policy_.weights()[i] + std_[i] * normal(rng_);

    std::vector<double> fitness(pop, 0.0);
    std::vector<int> counts(pop, 0);
    std::vector<EpisodeRecord> records;
    records.reserve(xis.size());
    for (std::size_t k = 0; k < xis.size(); ++k) {
      const std::size_t m = k % pop;
      const HistoryPolicy member(policy_.shape(), members[m]);
      const auto roll = plane_rollout(member, member.shape().window, xis[k].at(0), env_, rng_);
      records.push_back({xis[k], roll.summary.return_value, evaluate_sigma(indicator_, roll.summary), roll.summary.steps});
      fitness[m] += roll.summary.return_value;
      ++counts[m];
    }
    episodes_ += static_cast<long long>(xis.size());

    std::vector<std::size_t> ranked;
    for (std::size_t m = 0; m < pop; ++m)
      if (counts[m] > 0) {
        fitness[m] /= counts[m];
        ranked.push_back(m);
      }
    if (ranked.empty()) return records;
    std::stable_sort(ranked.begin(), ranked.end(), [&](auto a, auto b) { return fitness[a] > fitness[b]; });
    const auto elites = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(cem_.elite_fraction * static_cast<double>(ranked.size()))));

    const double noise = cem_.extra_noise * std::pow(cem_.noise_decay, generation_);
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0;
      for (std::size_t e = 0; e < elites; ++e) mean += members[ranked[e]][i];
      mean /= static_cast<double>(elites);
      double var = 0.0;
      for (std::size_t e = 0; e < elites; ++e) var += std::pow(members[ranked[e]][i] - mean, 2);
      var /= static_cast<double>(elites);
      policy_.weights()[i] = mean;
      std_[i] = std::max(cem_.min_std, std::sqrt(var + noise * noise));
    }
    ++generation_;
    return records;
  }

  TrajectorySummary evaluate(std::span<const double> xi, Rng& rng) const override {
    return plane_rollout(policy_, policy_.shape().window, xi[0], env_, rng).summary;
  }

  nlohmann::json snapshot() const override;

 private:
  static HistoryPolicy prepare(PolicyShape shape, const InclinedPlaneConfig& env) {
    shape.state_dim = 2;
    shape.action_scale = env.max_force;
    return HistoryPolicy(std::move(shape));
  }

  InclinedPlaneConfig env_;
  CemConfig cem_;
  SuccessIndicator indicator_;
  HistoryPolicy policy_;
  Vector std_;
  Rng rng_;
  int generation_ = 0;
};

/// Policy-free trainer for the skill-region task: "training" only advances
/// the episode counter that drives the skill schedule.
class SkillTrainer final : public Trainer {
 public:
  SkillTrainer(SkillRegionConfig cfg, SuccessIndicator indicator, long long start_index = 0)
      : cfg_(std::move(cfg)), indicator_(std::move(indicator)) {
    episodes_ = start_index;
  }

  const SkillRegionConfig& config() const noexcept { return cfg_; }

  std::vector<EpisodeRecord> train_on(std::span<const Vector> xis) override {
    std::vector<EpisodeRecord> out;
    out.reserve(xis.size());
    for (const auto& xi : xis) {
      const auto s = skill_rollout(cfg_, xi, episodes_++);
      out.push_back({xi, s.return_value, evaluate_sigma(indicator_, s), s.steps});
    }
    return out;
  }

  TrajectorySummary evaluate(std::span<const double> xi, Rng&) const override {
    return skill_rollout(cfg_, xi, episodes_);
  }

  nlohmann::json snapshot() const override;

 private:
  SkillRegionConfig cfg_;
  SuccessIndicator indicator_;
};

/// Replays a recorded (xi, success) stream, ignoring the xi it is handed
/// beyond checking that they match. Used to verify that schedulers depend on
/// nothing but the records.
class ReplayTrainer final : public Trainer {
 public:
  explicit ReplayTrainer(std::vector<std::vector<EpisodeRecord>> batches) : batches_(std::move(batches)) {}

  std::vector<EpisodeRecord> train_on(std::span<const Vector> xis) override {
    if (next_ >= batches_.size()) throw std::out_of_range("replay stream exhausted");
    auto batch = batches_[next_++];
    if (batch.size() != xis.size()) throw std::runtime_error("replay batch size mismatch");
    for (std::size_t k = 0; k < xis.size(); ++k)
      if (batch[k].xi != xis[k]) throw std::runtime_error("replay dynamics differ from the sampled ones");
    episodes_ += static_cast<long long>(xis.size());
    return batch;
  }

  TrajectorySummary evaluate(std::span<const double>, Rng&) const override { return {}; }
  nlohmann::json snapshot() const override { return {{"kind", "replay"}}; }

 private:
  std::vector<std::vector<EpisodeRecord>> batches_;
  std::size_t next_ = 0;
};

/// Constant-outcome trainer for state-machine tests.
class StubTrainer final : public Trainer {
 public:
  StubTrainer(bool succeed, double return_value) : succeed_(succeed), return_(return_value) {}

  std::vector<EpisodeRecord> train_on(std::span<const Vector> xis) override {
    std::vector<EpisodeRecord> out;
    for (const auto& xi : xis) out.push_back({xi, return_, succeed_, 1});
    episodes_ += static_cast<long long>(xis.size());
    return out;
  }
  TrajectorySummary evaluate(std::span<const double>, Rng&) const override {
    TrajectorySummary s;
    s.return_value = return_;
    s.steps = 1;
    s.predicates[kBalancedPredicate] = succeed_;
    s.predicates[kSkillPredicate] = succeed_;
    return s;
  }
  nlohmann::json snapshot() const override { return {{"kind", "stub"}, {"succeed", succeed_}, {"return", return_}}; }

 private:
  bool succeed_;
  double return_;
};

// ------------------------------------------------------------ serialization

inline void to_json(nlohmann::json& j, const InclinedPlaneConfig& c) {
  j = {{"gravity", c.gravity}, {"max_force", c.max_force}, {"dt", c.dt},
       {"horizon", c.horizon}, {"band", c.band},           {"hold_steps", c.hold_steps},
       {"half_length", c.half_length}, {"initial_spread", c.initial_spread}};
}

inline void from_json(const nlohmann::json& j, InclinedPlaneConfig& c) {
  const InclinedPlaneConfig d;
  c.gravity = j.value("gravity", d.gravity);
  c.max_force = j.value("max_force", d.max_force);
  c.dt = j.value("dt", d.dt);
  c.horizon = j.value("horizon", d.horizon);
  c.band = j.value("band", d.band);
  c.hold_steps = j.value("hold_steps", d.hold_steps);
  c.half_length = j.value("half_length", d.half_length);
  c.initial_spread = j.value("initial_spread", d.initial_spread);
}

inline void to_json(nlohmann::json& j, const SkillRegionConfig& c) {
  j = {{"center", c.center}, {"half_width", c.half_width}, {"initial_multiplier", c.initial_multiplier},
       {"growth_episodes", c.growth_episodes}};
}

inline void from_json(const nlohmann::json& j, SkillRegionConfig& c) {
  c.center = j.at("center").get<Vector>();
  c.half_width = j.at("half_width").get<Vector>();
  c.initial_multiplier = j.value("initial_multiplier", 0.2);
  c.growth_episodes = j.value("growth_episodes", 2000);
}

inline nlohmann::json PlaneCemTrainer::snapshot() const {
  return {{"kind", "inclined_plane"}, {"environment", env_}, {"policy", policy_}};
}

inline nlohmann::json SkillTrainer::snapshot() const {
  return {{"kind", "skill_region"}, {"environment", cfg_}, {"episode_index", episodes_}};
}

}  // namespace doraemon
