#pragma once

// Experiment driver: configuration, evaluation metrics, per-seed runs,
// sweeps and run-directory logging.
//
// A run directory holds
//   config.json          the resolved configuration
//   iterations.jsonl     one row per scheduler iteration (row 0 is the initial state)
//   episodes.jsonl       one line per training episode
//   best_snapshot.json   policy with the highest global success rate so far
//   summary.json         final summary, written last (or on failure)

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "doraemon/curriculum.hpp"
#include "doraemon/distributions.hpp"
#include "doraemon/environments.hpp"
#include "doraemon/estimator.hpp"
#include "doraemon/learner.hpp"
#include "doraemon/optimizer.hpp"

namespace doraemon {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ------------------------------------------------------------ configuration

struct EnvironmentSettings {
  std::string id = "inclined_plane";  // inclined_plane | skill_region
  InclinedPlaneConfig plane;
  SkillRegionConfig skill;
  std::optional<BoundedSupport> skill_support;  // defaults to the unit box of the skill dimension

  BoundedSupport support() const {
    if (id == "inclined_plane") return plane.support();
    if (skill_support) return *skill_support;
    return BoundedSupport::unit(skill.center.size());
  }
};

struct SchedulerSettings {
  std::string id = "doraemon";  // doraemon | fixed | nodr | autodr
  double alpha = 0.5;
  double epsilon = 0.05;
  int k = 50;
  int m = 100;
  bool backup_enabled = true;
  Family family = Family::IndependentBeta;
  double init_concentration = 100.0;  // initial Be(c, c), or the Gaussian with the same variance
  std::optional<double> clip;
  std::optional<Vector> nominal;       // No-DR parameters; support midpoint by default
  AutoDRConfig autodr;
};

struct LearnerSettings {
  PolicyShape shape;
  CemConfig cem;
};

struct EvaluationSettings {
  int n_eval = 500;
  int eval_every = 5;
  int grid_repeats = 5;
};

struct ExperimentConfig {
  EnvironmentSettings environment;
  SchedulerSettings scheduler;
  LearnerSettings learner;
  EvaluationSettings evaluation;
  std::optional<SuccessIndicator> indicator;  // environment predicate by default
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "runs";
  int jobs = 0;  // concurrent seeds; 0 picks the hardware concurrency

  SuccessIndicator success_indicator() const {
    if (indicator) return *indicator;
    return EnvironmentPredicate{environment.id == "skill_region" ? kSkillPredicate : kBalancedPredicate};
  }

  void validate() const {
    if (environment.id != "inclined_plane" && environment.id != "skill_region")
      throw ConfigError("unknown environment '" + environment.id + "'");
    const auto& s = scheduler;
    if (s.id != "doraemon" && s.id != "fixed" && s.id != "nodr" && s.id != "autodr")
      throw ConfigError("unknown scheduler '" + s.id + "'");
    if (!(s.alpha >= 0.0 && s.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(s.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (s.k < 1) throw ConfigError("K must be at least 1");
    if (s.m < 0) throw ConfigError("M must be non-negative");
    if (!(s.init_concentration > 0.05)) throw ConfigError("init_concentration must exceed the shape floor");
    if (seeds.empty()) throw ConfigError("seed list is empty");
    if (evaluation.n_eval < 1) throw ConfigError("n_eval must be at least 1");
    if (evaluation.eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (evaluation.grid_repeats < 1) throw ConfigError("grid_repeats must be at least 1");
    try {
      if (environment.id == "inclined_plane") {
        environment.plane.validate();
      } else {
        environment.skill.validate(environment.support());
      }
    } catch (const EnvironmentError& e) {
      throw ConfigError(e.what());
    }
    const auto ind = success_indicator();
    if (const auto* p = std::get_if<EnvironmentPredicate>(&ind)) {
      const auto& want = environment.id == "skill_region" ? kSkillPredicate : kBalancedPredicate;
      if (p->id != want) throw ConfigError("predicate '" + p->id + "' is not provided by " + environment.id);
    }
    if (s.nominal && !environment.support().contains(*s.nominal))
      throw ConfigError("No-DR nominal parameters lie outside the support");
  }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const SuccessIndicator& ind) {
  if (const auto* lb = std::get_if<ReturnLowerBound>(&ind)) {
    j = {{"type", "return_lower_bound"}, {"threshold", lb->threshold}};
  } else {
    j = {{"type", "predicate"}, {"id", std::get<EnvironmentPredicate>(ind).id}};
  }
}

inline SuccessIndicator indicator_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "return_lower_bound") return ReturnLowerBound{j.at("threshold").get<double>()};
  if (type == "predicate") return EnvironmentPredicate{j.at("id").get<std::string>()};
  throw ConfigError("unknown indicator type '" + type + "'");
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& s = c.scheduler;
  nlohmann::json autodr = {{"buffer_size", s.autodr.buffer_size},
                           {"delta_fraction", s.autodr.delta_fraction},
                           {"t_high", s.autodr.t_high},
                           {"boundary_prob", s.autodr.boundary_prob}};
  if (s.autodr.t_low) autodr["t_low"] = *s.autodr.t_low;
  nlohmann::json env = {{"id", c.environment.id}};
  if (c.environment.id == "inclined_plane") {
    env["params"] = c.environment.plane;
  } else {
    env["params"] = c.environment.skill;
    env["support"] = c.environment.support();
  }
  nlohmann::json sched = {{"id", s.id},
                          {"alpha", s.alpha},
                          {"epsilon", s.epsilon},
                          {"K", s.k},
                          {"M", s.m},
                          {"backup_enabled", s.backup_enabled},
                          {"family", to_string(s.family)},
                          {"init_concentration", s.init_concentration},
                          {"autodr", autodr}};
  if (s.clip) sched["clip"] = *s.clip;
  if (s.nominal) sched["nominal"] = *s.nominal;
  const auto& cem = c.learner.cem;
  nlohmann::json j = {
      {"environment", env},
      {"scheduler", sched},
      {"learner",
       {{"window", c.learner.shape.window},
        {"hidden", c.learner.shape.hidden},
        {"population", cem.population},
        {"elite_fraction", cem.elite_fraction},
        {"initial_std", cem.initial_std},
        {"extra_noise", cem.extra_noise},
        {"noise_decay", cem.noise_decay},
        {"min_std", cem.min_std}}},
      {"evaluation",
       {{"n_eval", c.evaluation.n_eval}, {"eval_every", c.evaluation.eval_every}, {"grid_repeats", c.evaluation.grid_repeats}}},
      {"indicator", c.success_indicator()},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir},
      {"jobs", c.jobs}};
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("environment")) {
      const auto& e = j.at("environment");
      detail::read_opt(e, "id", c.environment.id);
      if (c.environment.id == "inclined_plane") {
        if (e.contains("params")) c.environment.plane = e.at("params").get<InclinedPlaneConfig>();
      } else if (c.environment.id == "skill_region") {
        c.environment.skill = e.at("params").get<SkillRegionConfig>();
        if (e.contains("support")) c.environment.skill_support = support_from_json(e.at("support"));
      }
    }
    if (j.contains("scheduler")) {
      const auto& s = j.at("scheduler");
      auto& o = c.scheduler;
      detail::read_opt(s, "id", o.id);
      detail::read_opt(s, "alpha", o.alpha);
      detail::read_opt(s, "epsilon", o.epsilon);
      detail::read_opt(s, "K", o.k);
      detail::read_opt(s, "M", o.m);
      detail::read_opt(s, "backup_enabled", o.backup_enabled);
      detail::read_opt(s, "init_concentration", o.init_concentration);
      if (s.contains("family")) o.family = family_from_string(s.at("family").get<std::string>());
      if (s.contains("clip") && !s.at("clip").is_null()) o.clip = s.at("clip").get<double>();
      if (s.contains("nominal")) o.nominal = s.at("nominal").get<Vector>();
      if (s.contains("autodr")) {
        const auto& a = s.at("autodr");
        detail::read_opt(a, "buffer_size", o.autodr.buffer_size);
        detail::read_opt(a, "delta_fraction", o.autodr.delta_fraction);
        detail::read_opt(a, "t_high", o.autodr.t_high);
        detail::read_opt(a, "boundary_prob", o.autodr.boundary_prob);
        if (a.contains("t_low")) o.autodr.t_low = a.at("t_low").get<double>();
      }
    }
    if (j.contains("learner")) {
      const auto& l = j.at("learner");
      detail::read_opt(l, "window", c.learner.shape.window);
      detail::read_opt(l, "hidden", c.learner.shape.hidden);
      auto& cem = c.learner.cem;
      detail::read_opt(l, "population", cem.population);
      detail::read_opt(l, "elite_fraction", cem.elite_fraction);
      detail::read_opt(l, "initial_std", cem.initial_std);
      detail::read_opt(l, "extra_noise", cem.extra_noise);
      detail::read_opt(l, "noise_decay", cem.noise_decay);
      detail::read_opt(l, "min_std", cem.min_std);
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      detail::read_opt(e, "n_eval", c.evaluation.n_eval);
      detail::read_opt(e, "eval_every", c.evaluation.eval_every);
      detail::read_opt(e, "grid_repeats", c.evaluation.grid_repeats);
    }
    if (j.contains("indicator")) c.indicator = indicator_from_json(j.at("indicator"));
    detail::read_opt(j, "seeds", c.seeds);
    detail::read_opt(j, "output_dir", c.output_dir);
    detail::read_opt(j, "jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// DORAEMON_OUTPUT_DIR replaces the output directory; DORAEMON_SEEDS takes a
/// comma-separated seed list.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* dir = std::getenv("DORAEMON_OUTPUT_DIR"); dir && *dir) c.output_dir = dir;
  if (const char* seeds = std::getenv("DORAEMON_SEEDS"); seeds && *seeds) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(seeds);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      try {
        std::size_t used = 0;
        out.push_back(std::stoull(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError("DORAEMON_SEEDS entry '" + item + "' is not an unsigned integer");
      }
    }
    c.seeds = std::move(out);
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto c = config_from_json(j);
  apply_env_overrides(c);
  c.validate();
  return c;
}

// ------------------------------------------------------------ factories

/// Independent RNG stream for (seed, purpose).
inline Rng stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return Rng(seq);
}

enum Stream : std::uint64_t { kSampling = 1, kLearner = 2, kEvaluation = 3 };

inline DistributionSpec initial_spec(const ExperimentConfig& c) {
  const auto sup = c.environment.support();
  const double conc = c.scheduler.init_concentration;
  if (c.scheduler.family == Family::IndependentBeta) return DistributionSpec::beta(sup, conc, conc);
  // Match the variance of Be(c, c): 1 / (4 (2c + 1)) in unit coordinates.
  Vector sd;
  for (std::size_t d = 0; d < sup.dims(); ++d) sd.push_back(sup.width(d) / std::sqrt(4.0 * (2.0 * conc + 1.0)));
  return DistributionSpec::truncated_gaussian(sup, sup.midpoint(), sd);
}

inline StepConfig step_config(const ExperimentConfig& c) {
  StepConfig s;
  s.alpha = c.scheduler.alpha;
  s.epsilon = c.scheduler.epsilon;
  s.clip = c.scheduler.clip;
  return s;
}

inline std::unique_ptr<Scheduler> make_scheduler(const ExperimentConfig& c) {
  const auto sup = c.environment.support();
  const auto& id = c.scheduler.id;
  if (id == "doraemon")
    return std::make_unique<DoraemonScheduler>(initial_spec(c), step_config(c), c.scheduler.k, c.scheduler.m,
                                               c.scheduler.backup_enabled);
  if (id == "fixed") return std::make_unique<FixedScheduler>(fixed_dr_spec(sup));
  if (id == "nodr") return std::make_unique<NoDrScheduler>(no_dr_spec(sup, c.scheduler.nominal));
  if (id == "autodr") return std::make_unique<AutoDrScheduler>(sup, c.scheduler.autodr);
  throw ConfigError("unknown scheduler '" + id + "'");
}

inline std::unique_ptr<Trainer> make_trainer(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.environment.id == "inclined_plane") {
    Rng r = stream(seed, kLearner);
    return std::make_unique<PlaneCemTrainer>(c.environment.plane, c.learner.shape, c.learner.cem, c.success_indicator(),
                                             r());
  }
  return std::make_unique<SkillTrainer>(c.environment.skill, c.success_indicator());
}

/// A policy-plus-context snapshot that can be evaluated without the config.
inline nlohmann::json make_snapshot(const Trainer& t, const ExperimentConfig& c) {
  auto j = t.snapshot();
  j["support"] = c.environment.support();
  j["indicator"] = c.success_indicator();
  j["grid_repeats"] = c.evaluation.grid_repeats;
  return j;
}

/// Rebuilds an evaluation-only trainer from a snapshot.
inline std::unique_ptr<Trainer> trainer_from_snapshot(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  const auto ind = indicator_from_json(j.at("indicator"));
  if (kind == "inclined_plane") {
    const auto env = j.at("environment").get<InclinedPlaneConfig>();
    auto policy = policy_from_json(j.at("policy"));
    auto t = std::make_unique<PlaneCemTrainer>(env, policy.shape(), CemConfig{}, ind, 0);
    t->set_policy(std::move(policy));
    return t;
  }
  if (kind == "skill_region")
    return std::make_unique<SkillTrainer>(j.at("environment").get<SkillRegionConfig>(), ind,
                                          j.at("episode_index").get<long long>());
  throw ConfigError("unknown snapshot kind '" + kind + "'");
}

// ------------------------------------------------------------ evaluation

struct SuccessEstimate {
  double rate = 0.0;
  double half_width = 0.0;  // 95% normal-approximation binomial interval
  int episodes = 0;
};

/// Success rate of the trainer's current policy under the uniform
/// distribution over `support`.
inline SuccessEstimate global_success_rate(const Trainer& t, const BoundedSupport& support,
                                           const SuccessIndicator& indicator, int n_eval, Rng& rng) {
  if (n_eval < 1) throw std::invalid_argument("n_eval must be at least 1");
  const auto numax = max_entropy_spec(support, Family::IndependentBeta);
  int hits = 0;
  for (const auto& xi : sample(numax, n_eval, rng)) hits += evaluate_sigma(indicator, t.evaluate(xi, rng));
  SuccessEstimate e;
  e.episodes = n_eval;
  e.rate = static_cast<double>(hits) / n_eval;
  e.half_width = 1.96 * std::sqrt(e.rate * (1.0 - e.rate) / n_eval);
  return e;
}

struct GridResult {
  std::vector<std::size_t> dims;        // one or two dimension indices
  std::vector<Vector> axes;             // grid values per listed dimension
  std::vector<Vector> mean_return;      // [i][j], j over the second axis (size 1 for 1-D grids)
  std::vector<std::vector<bool>> success;
};

/// Grid values for one axis: `size` evenly spaced points spanning the
/// support, or the nominal value when size is 1.
inline Vector grid_axis(const BoundedSupport& s, std::size_t d, int size, double nominal) {
  if (size == 1) return {nominal};
  Vector v;
  for (int i = 0; i < size; ++i) v.push_back(s.lo(d) + s.width(d) * i / (size - 1));
  return v;
}

/// Rolls out `repeats` episodes on each cell of a 1-D or 2-D slice; other
/// dimensions stay at `nominal` (support midpoint by default). A cell counts
/// as successful when a strict majority of its episodes succeed.
inline GridResult evaluate_grid(const Trainer& t, const BoundedSupport& support, std::vector<std::size_t> dims,
                                std::vector<int> sizes, const SuccessIndicator& indicator, int repeats, Rng& rng,
                                std::optional<Vector> nominal = std::nullopt) {
  if (dims.empty() || dims.size() > 2 || dims.size() != sizes.size())
    throw std::invalid_argument("grid needs one or two dimensions with matching sizes");
  for (auto d : dims)
    if (d >= support.dims()) throw std::invalid_argument("grid dimension out of range");
  if (dims.size() == 2 && dims[0] == dims[1]) throw std::invalid_argument("grid dimensions must be distinct");
  for (int s : sizes)
    if (s < 1) throw std::invalid_argument("grid sizes must be positive");
  if (repeats < 1) throw std::invalid_argument("grid repeats must be positive");
  const Vector base = nominal ? *nominal : support.midpoint();
  if (!support.contains(base)) throw std::invalid_argument("grid nominal lies outside the support");

  GridResult g;
  g.dims = dims;
  for (std::size_t a = 0; a < dims.size(); ++a) g.axes.push_back(grid_axis(support, dims[a], sizes[a], base[dims[a]]));
  const std::size_t ni = g.axes[0].size(), nj = dims.size() == 2 ? g.axes[1].size() : 1;
  g.mean_return.assign(ni, Vector(nj, 0.0));
  g.success.assign(ni, std::vector<bool>(nj, false));
  for (std::size_t i = 0; i < ni; ++i) {
    for (std::size_t j = 0; j < nj; ++j) {
      Vector xi = base;
      xi[dims[0]] = g.axes[0][i];
      if (dims.size() == 2) xi[dims[1]] = g.axes[1][j];
      int hits = 0;
      double total = 0.0;
      for (int r = 0; r < repeats; ++r) {
        const auto s = t.evaluate(xi, rng);
        total += s.return_value;
        hits += evaluate_sigma(indicator, s);
      }
      g.mean_return[i][j] = total / repeats;
      g.success[i][j] = 2 * hits > repeats;
    }
  }
  return g;
}

/// Matrix CSV: the header names both dimensions and lists the second axis;
/// each row starts with its first-axis value.
inline std::string grid_csv(const GridResult& g, bool success_matrix) {
  std::ostringstream out;
  out.precision(17);
  const std::string second = g.dims.size() == 2 ? "dim" + std::to_string(g.dims[1]) : "value";
  out << "dim" << g.dims[0] << "\\" << second;
  if (g.dims.size() == 2) {
    for (double v : g.axes[1]) out << ',' << v;
  } else {
    out << ',' << (success_matrix ? "success" : "mean_return");
  }
  out << '\n';
  for (std::size_t i = 0; i < g.axes[0].size(); ++i) {
    out << g.axes[0][i];
    for (std::size_t j = 0; j < g.mean_return[i].size(); ++j) {
      if (success_matrix) {
        out << ',' << (g.success[i][j] ? 1 : 0);
      } else {
        out << ',' << g.mean_return[i][j];
      }
    }
    out << '\n';
  }
  return out.str();
}

// ------------------------------------------------------------ runs

struct RunLog {
  std::uint64_t seed = 0;
  std::filesystem::path directory;
  std::vector<nlohmann::json> rows;
  std::vector<std::vector<EpisodeRecord>> batches;  // training records per iteration
  nlohmann::json best_snapshot;
  nlohmann::json summary;
  bool failed = false;
  std::string error;

  // Non-finite values are stored as JSON null.
  double final_entropy() const { return number(summary.at("final_entropy"), -HUGE_VAL); }
  double best_global_success() const { return number(summary.at("best_global_success"), std::nan("")); }

 private:
  static double number(const nlohmann::json& j, double fallback) { return j.is_number() ? j.get<double>() : fallback; }
};

namespace detail {

inline double mean_in_dist_last_half(const std::vector<nlohmann::json>& rows) {
  // rows[0] is the initial state and carries no records.
  const std::size_t n = rows.size() - 1;
  if (n == 0) return std::nan("");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 1 + n / 2; i < rows.size(); ++i, ++count) total += rows[i].at("in_dist_success").get<double>();
  return count ? total / count : std::nan("");
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  out << j.dump(2) << '\n';
}

}  // namespace detail

/// Runs one seed and writes its run directory. Failures are caught, flushed
/// into summary.json with "failed": true, and reported through the RunLog.
/// `before_iteration`, when set, is called with each iteration index before
/// its episodes are collected.
inline RunLog run_seed(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& dir,
                       const std::function<void(int)>& before_iteration = {}) {
  RunLog log;
  log.seed = seed;
  log.directory = dir;
  std::filesystem::create_directories(dir);
  detail::write_json(dir / "config.json", to_json(c));
  std::ofstream rows_out(dir / "iterations.jsonl"), episodes_out(dir / "episodes.jsonl");

  const auto support = c.environment.support();
  const auto indicator = c.success_indicator();
  long long eval_episodes = 0;
  int best_iter = -1;
  double best_rate = -1.0, entropy_at_best = 0.0;
  int iterations_done = 0;

  auto emit = [&](nlohmann::json row) {
    rows_out << row.dump() << '\n';
    rows_out.flush();
    log.rows.push_back(std::move(row));
  };

  auto finish = [&](std::unique_ptr<Scheduler>& sched, std::unique_ptr<Trainer>& trainer) {
    log.summary = {{"seed", seed},
                   {"scheduler", c.scheduler.id},
                   {"environment", c.environment.id},
                   {"iterations", iterations_done},
                   {"best_iteration", best_iter},
                   {"best_global_success", best_rate},
                   {"entropy_at_best", entropy_at_best},
                   {"final_entropy", sched ? sched->training_entropy() : std::nan("")},
                   {"final_distribution", sched ? sched->distribution() : nlohmann::json()},
                   {"training_episodes", trainer ? trainer->episodes_trained() : 0},
                   {"eval_episodes", eval_episodes},
                   {"mean_in_dist_success_last_half",
                    log.rows.empty() ? std::nan("") : detail::mean_in_dist_last_half(log.rows)},
                   {"failed", log.failed}};
    if (log.failed) log.summary["error"] = log.error;
    detail::write_json(dir / "summary.json", log.summary);
  };

  std::unique_ptr<Scheduler> sched;
  std::unique_ptr<Trainer> trainer;
  try {
    sched = make_scheduler(c);
    trainer = make_trainer(c, seed);
    Rng sample_rng = stream(seed, kSampling), eval_rng = stream(seed, kEvaluation);

    auto measure = [&](int iter, nlohmann::json& row) {
      const auto g = global_success_rate(*trainer, support, indicator, c.evaluation.n_eval, eval_rng);
      eval_episodes += g.episodes;
      row["global_success"] = g.rate;
      row["global_success_half_width"] = g.half_width;
      if (g.rate > best_rate) {  // ties keep the earlier iteration
        best_rate = g.rate;
        best_iter = iter;
        entropy_at_best = sched->training_entropy();
        log.best_snapshot = make_snapshot(*trainer, c);
        log.best_snapshot["iteration"] = iter;
        log.best_snapshot["global_success"] = g.rate;
        detail::write_json(dir / "best_snapshot.json", log.best_snapshot);
      }
    };

    nlohmann::json row0 = {{"iter", 0},
                           {"scheduler", sched->name()},
                           {"entropy", sched->training_entropy()},
                           {"in_dist_success", nullptr},
                           {"branch_taken", "init"},
                           {"phi", sched->distribution()},
                           {"training_episodes", 0}};
    measure(0, row0);
    emit(std::move(row0));

    for (int it = 1; it <= c.scheduler.m; ++it) {
      if (before_iteration) before_iteration(it);
      const auto xis = sched->propose(c.scheduler.k, sample_rng);
      auto records = trainer->train_on(xis);
      for (const auto& r : records) {
        auto j = nlohmann::json(r);
        j["iter"] = it;
        episodes_out << j.dump() << '\n';
      }
      episodes_out.flush();
      const double in_dist = mc_success_rate(records);
      sched->update(records);
      log.batches.push_back(std::move(records));
      nlohmann::json row = {{"iter", it},
                            {"scheduler", sched->name()},
                            {"entropy", sched->training_entropy()},
                            {"in_dist_success", in_dist},
                            {"branch_taken", sched->last_branch()},
                            {"phi", sched->distribution()},
                            {"training_episodes", trainer->episodes_trained()}};
      if (auto extra = sched->last_update(); !extra.empty()) row["optimizer"] = std::move(extra);
      if (it % c.evaluation.eval_every == 0 || it == c.scheduler.m) measure(it, row);
      emit(std::move(row));
      iterations_done = it;
    }
  } catch (const std::exception& e) {
    log.failed = true;
    log.error = e.what();
  }
  finish(sched, trainer);
  return log;
}

/// Runs every configured seed, `jobs` at a time, each into
/// <output_dir>/seed_<seed>. Logs come back in seed-list order.
inline std::vector<RunLog> run_experiment(const ExperimentConfig& c) {
  c.validate();
  std::vector<RunLog> logs(c.seeds.size());
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t jobs = std::min<std::size_t>(c.jobs > 0 ? static_cast<std::size_t>(c.jobs) : hw, c.seeds.size());
  std::size_t next = 0;
  std::mutex m;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(m);
        if (next >= c.seeds.size()) return;
        i = next++;
      }
      const auto seed = c.seeds[i];
      logs[i] = run_seed(c, seed, std::filesystem::path(c.output_dir) / ("seed_" + std::to_string(seed)));
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return logs;
}

// ------------------------------------------------------------ sweeps

/// Copy of `base` with one sweep axis set from its text value. Axes: alpha,
/// epsilon, J_LB (return threshold for success and the AutoDR widening
/// threshold) and family.
inline ExperimentConfig with_axis(const ExperimentConfig& base, const std::string& axis, const std::string& value) {
  ExperimentConfig c = base;
  auto number = [&] {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + value + "' is not a number");
    }
  };
  if (axis == "alpha") {
    c.scheduler.alpha = number();
  } else if (axis == "epsilon") {
    c.scheduler.epsilon = number();
  } else if (axis == "J_LB") {
    const double v = number();
    c.indicator = ReturnLowerBound{v};
    c.scheduler.autodr.t_high = v;
  } else if (axis == "family") {
    try {
      c.scheduler.family = family_from_string(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "'");
  }
  c.output_dir = (std::filesystem::path(base.output_dir) / (axis + "=" + value)).string();
  c.validate();
  return c;
}

struct Quartiles {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
};

/// Linear-interpolation quantiles of the sample.
inline Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) return {std::nan(""), std::nan(""), std::nan("")};
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {q(0.25), q(0.5), q(0.75)};
}

inline nlohmann::json to_json(const Quartiles& q) { return {{"q1", q.q1}, {"median", q.median}, {"q3", q.q3}}; }

struct SweepPoint {
  std::string value;
  std::vector<RunLog> runs;
  nlohmann::json aggregate;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepPoint> points;
  nlohmann::json summary;
};

namespace detail {

/// Per-iteration median and interquartile band of one row field across seeds.
inline nlohmann::json curve(const std::vector<RunLog>& runs, const char* field) {
  std::size_t len = 0;
  for (const auto& r : runs) len = std::max(len, r.rows.size());
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < len; ++i) {
    std::vector<double> vals;
    for (const auto& r : runs)
      if (i < r.rows.size() && r.rows[i].contains(field) && r.rows[i][field].is_number())
        vals.push_back(r.rows[i][field].get<double>());
    if (vals.empty()) continue;
    auto j = to_json(quartiles(vals));
    j["iter"] = i;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace detail

inline SweepResult run_sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  // Resolve every point before running anything.
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) configs.push_back(with_axis(base, axis, v));

  SweepResult res;
  res.axis = axis;
  res.summary = {{"axis", axis}, {"points", nlohmann::json::array()}};
  for (std::size_t p = 0; p < values.size(); ++p) {
    SweepPoint pt;
    pt.value = values[p];
    pt.runs = run_experiment(configs[p]);
    std::vector<double> final_h, best_g;
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& r : pt.runs) {
      per_seed.push_back(r.summary);
      if (r.failed) continue;
      final_h.push_back(r.final_entropy());
      best_g.push_back(r.best_global_success());
    }
    pt.aggregate = {{"value", pt.value},
                    {"final_entropy", to_json(quartiles(final_h))},
                    {"best_global_success", to_json(quartiles(best_g))},
                    {"entropy_curve", detail::curve(pt.runs, "entropy")},
                    {"in_dist_success_curve", detail::curve(pt.runs, "in_dist_success")},
                    {"global_success_curve", detail::curve(pt.runs, "global_success")},
                    {"seeds", per_seed}};
    res.summary["points"].push_back(pt.aggregate);
    res.points.push_back(std::move(pt));
  }
  std::filesystem::create_directories(base.output_dir);
  detail::write_json(std::filesystem::path(base.output_dir) / ("sweep_" + axis + ".json"), res.summary);
  return res;
}

// ------------------------------------------------------------ log replay

/// Reads a run directory back: rows, per-iteration training records, summary
/// and best snapshot.
inline RunLog load_run_log(const std::filesystem::path& dir) {
  RunLog log;
  log.directory = dir;
  std::ifstream rows(dir / "iterations.jsonl"), eps(dir / "episodes.jsonl");
  if (!rows || !eps) throw std::runtime_error("incomplete run directory " + dir.string());
  for (std::string line; std::getline(rows, line);)
    if (!line.empty()) log.rows.push_back(nlohmann::json::parse(line));
  for (std::string line; std::getline(eps, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto it = j.at("iter").get<std::size_t>();
    if (log.batches.size() < it) log.batches.resize(it);
    log.batches[it - 1].push_back(j.get<EpisodeRecord>());
  }
  if (std::ifstream s(dir / "summary.json"); s) {
    s >> log.summary;
    log.seed = log.summary.value("seed", std::uint64_t{0});
    log.failed = log.summary.value("failed", false);
  }
  if (std::ifstream b(dir / "best_snapshot.json"); b) b >> log.best_snapshot;
  return log;
}

/// Feeds a fresh scheduler the logged records (through a replay trainer) and
/// returns the distribution after each iteration, starting with the initial one.
inline std::vector<nlohmann::json> replay_distributions(const ExperimentConfig& c, std::uint64_t seed,
                                                        const std::vector<std::vector<EpisodeRecord>>& batches) {
  auto sched = make_scheduler(c);
  ReplayTrainer replay(batches);
  Rng sample_rng = stream(seed, kSampling);
  std::vector<nlohmann::json> out{sched->distribution()};
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto xis = sched->propose(c.scheduler.k, sample_rng);
    sched->update(replay.train_on(xis));
    out.push_back(sched->distribution());
  }
  return out;
}

}  // namespace doraemon
