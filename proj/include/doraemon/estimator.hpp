#pragma once

// Success-rate estimation from recycled training episodes.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "doraemon/distributions.hpp"

namespace doraemon {

class EstimatorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One training episode: the dynamics it ran under and how it went.
struct EpisodeRecord {
  Vector xi;  // physical units
  double return_value = 0.0;
  bool success = false;
  int steps = 1;

  bool operator==(const EpisodeRecord&) const = default;
};

/// What an environment reports about a finished episode.
struct TrajectorySummary {
  double return_value = 0.0;
  int steps = 0;
  std::map<std::string, bool> predicates;  // environment-specific success flags
};

struct ReturnLowerBound {
  double threshold = 0.0;
};

struct EnvironmentPredicate {
  std::string id;
};

using SuccessIndicator = std::variant<ReturnLowerBound, EnvironmentPredicate>;

/// sigma(tau). Return thresholds are inclusive.
inline bool evaluate_sigma(const SuccessIndicator& indicator, const TrajectorySummary& summary) {
  if (const auto* lb = std::get_if<ReturnLowerBound>(&indicator)) return summary.return_value >= lb->threshold;
  const auto& id = std::get<EnvironmentPredicate>(indicator).id;
  const auto it = summary.predicates.find(id);
  if (it == summary.predicates.end()) throw EstimatorError("unknown success predicate '" + id + "'");
  return it->second;
}

/// Importance-sampling estimate of the success rate under `phi_new` from
/// episodes drawn under `phi_old`: (1/K) sum_k w_k 1{success_k} with
/// w_k = nu_new(xi_k) / nu_old(xi_k), optionally capped at `clip`.
/// The estimate is unnormalized and may exceed 1.
inline double is_success_rate(std::span<const EpisodeRecord> records, const DistributionSpec& phi_old,
                              const DistributionSpec& phi_new, std::optional<double> clip = std::nullopt) {
  if (records.empty()) throw EstimatorError("success estimate needs at least one record");
  require_compatible(phi_old, phi_new);
  const bool same = phi_old == phi_new;
  double total = 0.0;
  for (const auto& r : records) {
    if (!r.success) continue;
    double w = same ? 1.0 : std::exp(log_pdf(phi_new, r.xi) - log_pdf(phi_old, r.xi));
    if (clip) w = std::min(w, *clip);
    total += w;
  }
  return total / static_cast<double>(records.size());
}

/// Plain Monte-Carlo success fraction.
inline double mc_success_rate(std::span<const EpisodeRecord> records) {
  if (records.empty()) throw EstimatorError("success estimate needs at least one record");
  const auto hits = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.success; });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

inline void to_json(nlohmann::json& j, const EpisodeRecord& r) {
  j = nlohmann::json{{"xi", r.xi}, {"return", r.return_value}, {"success", r.success}, {"steps", r.steps}};
}

inline void from_json(const nlohmann::json& j, EpisodeRecord& r) {
  r.xi = j.at("xi").get<Vector>();
  r.return_value = j.at("return").get<double>();
  r.success = j.at("success").get<bool>();
  r.steps = j.at("steps").get<int>();
}

}  // namespace doraemon
