#pragma once

// The acquisition MDP. A state is the zero-filled observed vector plus the
// observation mask; actions acquire one unobserved feature or stop. Acquiring
// feature j pays -c_j immediately, and the stop reward is left undetermined
// (deferred) until a classifier scores the final state.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afa/nncore.hpp"

namespace afa {

using Mask = std::vector<std::uint8_t>;

struct PartialState {
  Vector x;  // observed values, 0 where unobserved
  Mask z;    // 1 where observed

  std::size_t num_features() const { return z.size(); }

  std::size_t observed_count() const {
    std::size_t n = 0;
    for (auto b : z) n += b ? 1 : 0;
    return n;
  }

  bool fully_observed() const { return observed_count() == z.size(); }

  /// Observed feature indices in ascending order.
  std::vector<std::size_t> observed() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < z.size(); ++j)
      if (z[j]) out.push_back(j);
    return out;
  }

  friend bool operator==(const PartialState&, const PartialState&) = default;
};

/// Either "acquire feature j" or the stop action. In Q-value vectors over p
/// features, feature j sits at index j and stop at index p.
class Action {
 public:
  static Action stop() { return Action(kStop); }
  static Action acquire(std::size_t feature) { return Action(feature); }
  static Action from_index(std::size_t index, std::size_t num_features) {
    if (index > num_features) throw DimensionError("action index out of range");
    return index == num_features ? stop() : acquire(index);
  }

  bool is_stop() const { return value_ == kStop; }
  std::size_t feature() const {
    if (is_stop()) throw ContractViolation("stop action has no feature");
    return value_;
  }
  std::size_t index(std::size_t num_features) const { return is_stop() ? num_features : value_; }

  friend bool operator==(const Action&, const Action&) = default;

 private:
  static constexpr std::size_t kStop = std::numeric_limits<std::size_t>::max();
  explicit Action(std::size_t v) : value_(v) {}
  std::size_t value_;
};

inline std::string to_string(const Action& a) {
  return a.is_stop() ? std::string("stop") : "f" + std::to_string(a.feature() + 1);
}

struct CostSchedule {
  Vector c;

  static CostSchedule uniform(std::size_t num_features, double cost) {
    CostSchedule s{Vector(num_features, cost)};
    s.validate();
    return s;
  }

  std::size_t size() const { return c.size(); }

  void validate() const {
    for (double v : c)
      if (!(v > 0.0) || !std::isfinite(v)) throw ContractViolation("acquisition costs must be > 0");
  }

  /// c^T z
  double total(std::span<const std::uint8_t> z) const {
    nn::require_dim(z.size(), c.size(), "CostSchedule::total");
    double s = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j)
      if (z[j]) s += c[j];
    return s;
  }
};

inline PartialState reset(std::span<const double> full_features,
                          std::span<const std::uint8_t> initial_mask) {
  nn::require_dim(initial_mask.size(), full_features.size(), "reset mask");
  PartialState s;
  s.x.assign(full_features.size(), 0.0);
  s.z.assign(initial_mask.begin(), initial_mask.end());
  for (std::size_t j = 0; j < s.z.size(); ++j) {
    s.z[j] = s.z[j] ? 1 : 0;
    if (s.z[j]) s.x[j] = full_features[j];
  }
  return s;
}

/// `available` optionally marks which features can be acquired at all (a
/// value missing from the source data, or refused by a user); empty means
/// every feature is available.
inline bool is_valid(const PartialState& s, const Action& a,
                     std::span<const std::uint8_t> available = {}) {
  if (a.is_stop()) return true;
  const std::size_t j = a.feature();
  if (j >= s.z.size() || s.z[j]) return false;
  return available.empty() || available[j];
}

/// Unobserved (and available) features in ascending order, then stop.
inline std::vector<Action> valid_actions(const PartialState& s,
                                         std::span<const std::uint8_t> available = {}) {
  if (!available.empty()) nn::require_dim(available.size(), s.z.size(), "availability mask");
  std::vector<Action> out;
  for (std::size_t j = 0; j < s.z.size(); ++j)
    if (!s.z[j] && (available.empty() || available[j])) out.push_back(Action::acquire(j));
  out.push_back(Action::stop());
  return out;
}

struct StepResult {
  PartialState next;
  std::optional<double> reward;  // nullopt = deferred (stop action)
};

inline StepResult step(const PartialState& s, const Action& a, std::span<const double> full_features,
                       const CostSchedule& costs) {
  nn::require_dim(full_features.size(), s.num_features(), "step features");
  nn::require_dim(costs.size(), s.num_features(), "step costs");
  if (a.is_stop()) return {s, std::nullopt};
  const std::size_t j = a.feature();
  if (j >= s.num_features()) throw ContractViolation("action refers to a nonexistent feature");
  if (s.z[j]) throw ContractViolation("feature " + std::to_string(j + 1) + " is already acquired");
  StepResult r{s, -costs.c[j]};
  r.next.z[j] = 1;
  r.next.x[j] = full_features[j];
  return r;
}

enum class RewardMode { continuous, discrete };

struct RewardConfig {
  RewardMode mode = RewardMode::continuous;
  double r_correct = 0.0;
  double r_wrong = -1.0;
};

/// Stop-action reward from the classifier's output at the final state:
/// -weighted cross-entropy, or r_correct / r_wrong on the argmax.
inline double terminal_reward(std::span<const double> probs, std::size_t label,
                              std::span<const double> class_weights, const RewardConfig& cfg) {
  if (cfg.mode == RewardMode::discrete) {
    if (label >= probs.size()) throw DimensionError("terminal_reward: label out of range");
    const auto best = static_cast<std::size_t>(
        std::max_element(probs.begin(), probs.end()) - probs.begin());
    return best == label ? cfg.r_correct : cfg.r_wrong;
  }
  return -nn::weighted_cross_entropy(probs, label, class_weights);
}

struct Experience {
  PartialState state;
  Action action = Action::stop();
  std::optional<double> reward;  // nullopt iff the action is stop
  double acquired_value = 0.0;   // value revealed by an acquisition
  std::size_t label = 0;
  bool terminal = false;
  Mask available;  // empty = all features available

  /// s_{t+1}: the state itself for stop, otherwise with the acquired value
  /// revealed.
  PartialState next_state() const {
    PartialState n = state;
    if (!action.is_stop()) {
      n.z[action.feature()] = 1;
      n.x[action.feature()] = acquired_value;
    }
    return n;
  }
};

struct Episode {
  std::vector<Experience> steps;
  std::size_t sample_index = 0;

  std::size_t acquisitions() const { return steps.empty() ? 0 : steps.size() - 1; }

  const PartialState& final_state() const { return steps.back().state; }

  /// Throws ContractViolation unless the episode ends with stop, every
  /// earlier step acquires a distinct feature, and rewards are consistent.
  void check() const {
    if (steps.empty()) throw ContractViolation("episode is empty");
    if (!steps.back().action.is_stop() || !steps.back().terminal || steps.back().reward)
      throw ContractViolation("episode must end with a deferred stop step");
    Mask seen(steps.front().state.num_features(), 0);
    for (std::size_t t = 0; t + 1 < steps.size(); ++t) {
      const auto& e = steps[t];
      if (e.action.is_stop() || e.terminal || !e.reward)
        throw ContractViolation("only the final step may stop");
      const std::size_t j = e.action.feature();
      if (seen[j] || e.state.z[j]) throw ContractViolation("feature acquired twice in one episode");
      seen[j] = 1;
      if (!(steps[t + 1].state == e.next_state()))
        throw ContractViolation("episode states are not chained");
    }
  }

  /// Sum of all rewards once the deferred stop reward is resolved.
  double total_reward(double terminal) const {
    double s = 0.0;
    for (auto& e : steps) s += e.reward ? *e.reward : terminal;
    return s;
  }
};

}  // namespace afa
