#pragma once

// Joint training loop: every sample yields one epsilon-greedy episode whose
// experiences enter replay, followed by one Q update and one classifier
// update on a uniformly drawn minibatch. Also owns the training
// configuration format and checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "afa/agent.hpp"
#include "afa/archive.hpp"
#include "afa/dataset.hpp"
#include "afa/evaluation.hpp"
#include "afa/rollout.hpp"

namespace afa {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 4;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double epsilon_decay_epochs = 2.0;
  double cost = 0.05;           // uniform acquisition cost
  std::string cost_file;        // per-feature costs; overrides `cost`
  RewardConfig reward;
  double learning_rate = 0.001;
  std::size_t replay_capacity = 50000;
  std::size_t batch_size = 64;
  std::size_t sync_period = 500;
  EncoderKind encoder = EncoderKind::set;
  std::vector<std::size_t> reading_hidden{40, 30};
  std::size_t memory_dim = 20;
  std::size_t process_steps = 5;
  std::vector<std::size_t> shared_hidden;  // naive encoder: layers shared by Q and C
  std::vector<std::size_t> q_hidden{100, 50};
  std::vector<std::size_t> c_hidden{20, 20};
  GradientFlow gradient_flow = GradientFlow::both;
  std::uint64_t seed = 1;
  std::size_t max_acquisitions = 0;  // 0 = p
  double initial_observed = 0.0;     // chance a feature is known at t = 0 during training
  std::size_t early_stop_patience = 0;  // epochs without validation improvement; 0 = off

  std::size_t shared_depth() const {
    return encoder == EncoderKind::naive ? shared_hidden.size() : 1;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!(epsilon_start >= 0 && epsilon_start <= 1 && epsilon_end >= 0 && epsilon_end <= 1))
      fail("epsilon values must lie in [0,1]");
    if (!(epsilon_decay_epochs > 0)) fail("epsilon_decay_epochs must be positive");
    if (epochs > 0 && epsilon_decay_epochs > static_cast<double>(epochs))
      fail("epsilon_decay_epochs must not exceed epochs");
    if (!(cost > 0)) fail("cost must be positive");
    if (!(learning_rate > 0)) fail("learning_rate must be positive");
    if (replay_capacity == 0 || batch_size == 0 || sync_period == 0)
      fail("replay_capacity, batch_size and sync_period must be positive");
    if (memory_dim == 0 || process_steps == 0) fail("memory_dim and process_steps must be positive");
    if (reward.mode == RewardMode::discrete && !(reward.r_correct > reward.r_wrong))
      fail("r_correct must exceed r_wrong");
    if (!(initial_observed >= 0 && initial_observed < 1)) fail("initial_observed must lie in [0,1)");
    for (auto* v : {&reading_hidden, &shared_hidden, &q_hidden, &c_hidden})
      for (auto h : *v)
        if (h == 0) fail("layer sizes must be positive");
  }

  NetworkShape shape(std::size_t num_features, std::size_t num_classes) const {
    NetworkShape s;
    s.num_features = num_features;
    s.num_classes = num_classes;
    s.encoder = encoder;
    s.encoder_hidden = encoder == EncoderKind::set ? reading_hidden : shared_hidden;
    s.memory_dim = memory_dim;
    s.process_steps = process_steps;
    s.q_hidden = q_hidden;
    s.c_hidden = c_hidden;
    return s;
  }

  LearnerConfig learner() const {
    return {learning_rate, replay_capacity, sync_period, gradient_flow};
  }

  double epsilon_at(double epochs_done) const {
    const double frac = std::min(1.0, epochs_done / epsilon_decay_epochs);
    return epsilon_start + (epsilon_end - epsilon_start) * frac;
  }
};

// ---------------------------------------------------------------------------
// key = value configuration text

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::string t = std::string(trim(v));
  if (t.empty() || t == "none") return out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    long long n = 0;
    if (!parse_long(item, n) || n <= 0)
      throw ConfigError("'" + key + "' expects comma-separated positive integers, got '" + v + "'");
    out.push_back(static_cast<std::size_t>(n));
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double d = 0;
  if (!parse_double(v, d)) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return d;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  long long n = 0;
  if (!parse_long(v, n) || n < 0)
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<std::uint64_t>(n);
}

}  // namespace detail

inline std::string to_string(EncoderKind k) { return k == EncoderKind::set ? "set" : "naive"; }
inline std::string to_string(GradientFlow g) {
  switch (g) {
    case GradientFlow::both: return "both";
    case GradientFlow::classifier_only: return "classifier_only";
    case GradientFlow::agent_only: return "agent_only";
  }
  return "both";
}
inline std::string to_string(RewardMode m) {
  return m == RewardMode::continuous ? "continuous" : "discrete";
}

/// Applies one `key = value` setting. Unknown keys are rejected.
inline void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  const std::string v = std::string(trim(value));
  if (key == "epochs") c.epochs = parse_count(key, v);
  else if (key == "epsilon_start") c.epsilon_start = parse_real(key, v);
  else if (key == "epsilon_end") c.epsilon_end = parse_real(key, v);
  else if (key == "epsilon_decay_epochs") c.epsilon_decay_epochs = parse_real(key, v);
  else if (key == "cost") c.cost = parse_real(key, v);
  else if (key == "cost_file") c.cost_file = v;
  else if (key == "reward_mode") {
    if (v == "continuous") c.reward.mode = RewardMode::continuous;
    else if (v == "discrete") c.reward.mode = RewardMode::discrete;
    else throw ConfigError("reward_mode must be 'continuous' or 'discrete'");
  } else if (key == "r_correct") c.reward.r_correct = parse_real(key, v);
  else if (key == "r_wrong") c.reward.r_wrong = parse_real(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_real(key, v);
  else if (key == "replay_capacity") c.replay_capacity = parse_count(key, v);
  else if (key == "batch_size") c.batch_size = parse_count(key, v);
  else if (key == "sync_period") c.sync_period = parse_count(key, v);
  else if (key == "encoder") {
    if (v == "set") c.encoder = EncoderKind::set;
    else if (v == "naive") c.encoder = EncoderKind::naive;
    else throw ConfigError("encoder must be 'set' or 'naive'");
  } else if (key == "reading_hidden") c.reading_hidden = parse_sizes(key, v);
  else if (key == "memory_dim") c.memory_dim = parse_count(key, v);
  else if (key == "process_steps") c.process_steps = parse_count(key, v);
  else if (key == "shared_hidden") c.shared_hidden = parse_sizes(key, v);
  else if (key == "q_hidden") c.q_hidden = parse_sizes(key, v);
  else if (key == "c_hidden") c.c_hidden = parse_sizes(key, v);
  else if (key == "gradient_flow") {
    if (v == "both") c.gradient_flow = GradientFlow::both;
    else if (v == "classifier_only") c.gradient_flow = GradientFlow::classifier_only;
    else if (v == "agent_only") c.gradient_flow = GradientFlow::agent_only;
    else throw ConfigError("gradient_flow must be both, classifier_only or agent_only");
  } else if (key == "seed") c.seed = parse_count(key, v);
  else if (key == "max_acquisitions") c.max_acquisitions = parse_count(key, v);
  else if (key == "initial_observed") c.initial_observed = parse_real(key, v);
  else if (key == "early_stop_patience") c.early_stop_patience = parse_count(key, v);
  else throw ConfigError("unknown configuration key '" + key + "'");
}

inline std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  auto real = [](double d) { return format_double(d); };
  return {
      {"epochs", std::to_string(c.epochs)},
      {"epsilon_start", real(c.epsilon_start)},
      {"epsilon_end", real(c.epsilon_end)},
      {"epsilon_decay_epochs", real(c.epsilon_decay_epochs)},
      {"cost", real(c.cost)},
      {"cost_file", c.cost_file},
      {"reward_mode", to_string(c.reward.mode)},
      {"r_correct", real(c.reward.r_correct)},
      {"r_wrong", real(c.reward.r_wrong)},
      {"learning_rate", real(c.learning_rate)},
      {"replay_capacity", std::to_string(c.replay_capacity)},
      {"batch_size", std::to_string(c.batch_size)},
      {"sync_period", std::to_string(c.sync_period)},
      {"encoder", to_string(c.encoder)},
      {"reading_hidden", detail::join_sizes(c.reading_hidden)},
      {"memory_dim", std::to_string(c.memory_dim)},
      {"process_steps", std::to_string(c.process_steps)},
      {"shared_hidden", c.shared_hidden.empty() ? "none" : detail::join_sizes(c.shared_hidden)},
      {"q_hidden", detail::join_sizes(c.q_hidden)},
      {"c_hidden", detail::join_sizes(c.c_hidden)},
      {"gradient_flow", to_string(c.gradient_flow)},
      {"seed", std::to_string(c.seed)},
      {"max_acquisitions", std::to_string(c.max_acquisitions)},
      {"initial_observed", real(c.initial_observed)},
      {"early_stop_patience", std::to_string(c.early_stop_patience)},
  };
}

inline std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

/// Parses line-oriented `key = value` text; '#' starts a comment.
inline TrainConfig parse_config(std::istream& is, TrainConfig base = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key(detail::trim(std::string_view(line).substr(0, eq)));
    std::string value(detail::trim(std::string_view(line).substr(eq + 1)));
    apply_setting(base, key, value);
  }
  base.validate();
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(is, std::move(base));
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  TrainConfig config;
  Policy policy;
  TargetNetwork target;
  nn::AdamState q_adam;
  nn::AdamState c_adam;
  std::uint64_t q_updates = 0;
  std::uint64_t c_updates = 0;
  std::size_t epochs_completed = 0;
  FeatureScaling scaling;  // applied to raw inputs before the policy, if set
};

inline CostSchedule resolve_costs(const TrainConfig& config, std::size_t num_features) {
  if (!config.cost_file.empty())
    return CostSchedule{load_cost_csv(config.cost_file, num_features)};
  return CostSchedule::uniform(num_features, config.cost);
}

inline Checkpoint snapshot(const TrainConfig& config, Learner& learner, std::size_t epochs_completed,
                           const FeatureScaling& scaling) {
  return {config,
          learner.policy(),
          learner.target(),
          learner.q_optimizer().state(),
          learner.c_optimizer().state(),
          learner.q_updates(),
          learner.c_updates(),
          epochs_completed,
          scaling};
}

inline Learner restore_learner(const Checkpoint& ck) {
  Learner l(ck.policy, ck.config.learner());
  l.target() = ck.target;
  l.q_optimizer().state() = ck.q_adam;
  l.c_optimizer().state() = ck.c_adam;
  l.set_counters(ck.q_updates, ck.c_updates);
  return l;
}

namespace detail {

inline void add_adam(Archive& ar, const std::string& prefix, const nn::AdamState& s) {
  ar.add_meta(prefix + ".step", std::to_string(s.step));
  ar.add_meta(prefix + ".count", std::to_string(s.first_moment.size()));
  for (std::size_t k = 0; k < s.first_moment.size(); ++k) {
    ar.add_tensor(prefix + ".m." + std::to_string(k), {s.first_moment[k].size()}, s.first_moment[k]);
    ar.add_tensor(prefix + ".v." + std::to_string(k), {s.second_moment[k].size()}, s.second_moment[k]);
  }
}

inline nn::AdamState read_adam(const Archive& ar, const std::string& prefix) {
  nn::AdamState s;
  s.step = parse_count(prefix + ".step", ar.require_meta(prefix + ".step"));
  const auto count = parse_count(prefix + ".count", ar.require_meta(prefix + ".count"));
  for (std::size_t k = 0; k < count; ++k) {
    s.first_moment.push_back(ar.require_tensor(prefix + ".m." + std::to_string(k)).values);
    s.second_moment.push_back(ar.require_tensor(prefix + ".v." + std::to_string(k)).values);
  }
  return s;
}

}  // namespace detail

inline Archive to_archive(Checkpoint& ck) {
  Archive ar;
  ar.add_meta("kind", "afa-checkpoint");
  ar.add_meta("num_features", std::to_string(ck.policy.num_features()));
  ar.add_meta("num_classes", std::to_string(ck.policy.num_classes()));
  ar.add_meta("q_updates", std::to_string(ck.q_updates));
  ar.add_meta("c_updates", std::to_string(ck.c_updates));
  ar.add_meta("epochs_completed", std::to_string(ck.epochs_completed));
  for (auto& [k, v] : config_entries(ck.config)) ar.add_meta("config." + k, v.empty() ? "-" : v);
  ar.add_tensor("task.costs", {ck.policy.costs().size()}, ck.policy.costs().c);
  ar.add_tensor("task.class_weights", {ck.policy.num_classes()}, ck.policy.class_weights());
  if (!ck.scaling.empty()) {
    ar.add_tensor("scaling.lo", {ck.scaling.lo.size()}, ck.scaling.lo);
    ar.add_tensor("scaling.hi", {ck.scaling.hi.size()}, ck.scaling.hi);
  }
  for (auto& p : ck.policy.params()) ar.add_tensor(p.name, *p.tensor);
  for (auto& p : ck.target.params()) ar.add_tensor(p.name, *p.tensor);
  detail::add_adam(ar, "adam.q", ck.q_adam);
  detail::add_adam(ar, "adam.c", ck.c_adam);
  return ar;
}

inline Checkpoint from_archive(const Archive& ar) {
  if (auto* kind = ar.find_meta("kind"); !kind || *kind != "afa-checkpoint")
    throw ArchiveError("archive is not a checkpoint");
  TrainConfig cfg;
  for (auto& [k, v] : ar.meta) {
    if (k.rfind("config.", 0) != 0) continue;
    apply_setting(cfg, k.substr(7), v == "-" ? "" : v);
  }
  const auto p = detail::parse_count("num_features", ar.require_meta("num_features"));
  const auto k = detail::parse_count("num_classes", ar.require_meta("num_classes"));
  CostSchedule costs{ar.require_tensor("task.costs").values};
  Vector weights = ar.require_tensor("task.class_weights").values;
  std::mt19937_64 rng(0);
  Checkpoint ck;
  ck.config = cfg;
  ck.policy = Policy(cfg.shape(p, k), costs, weights, cfg.reward, rng);
  ck.target = TargetNetwork(ck.policy);
  for (auto& prm : ck.policy.params()) ar.restore(prm.name, *prm.tensor);
  for (auto& prm : ck.target.params()) ar.restore(prm.name, *prm.tensor);
  ck.q_adam = detail::read_adam(ar, "adam.q");
  ck.c_adam = detail::read_adam(ar, "adam.c");
  ck.q_updates = detail::parse_count("q_updates", ar.require_meta("q_updates"));
  ck.c_updates = detail::parse_count("c_updates", ar.require_meta("c_updates"));
  ck.epochs_completed = detail::parse_count("epochs_completed", ar.require_meta("epochs_completed"));
  if (ar.find_tensor("scaling.lo")) {
    ck.scaling.lo = ar.require_tensor("scaling.lo").values;
    ck.scaling.hi = ar.require_tensor("scaling.hi").values;
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, Checkpoint& ck) {
  save_archive(path, to_archive(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) { return from_archive(load_archive(path)); }

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::size_t epoch = 0;
  double q_loss = 0.0;
  double c_loss = 0.0;
  double val_accuracy = 0.0;
  double val_mean_features = 0.0;
  double val_objective = 0.0;
};

/// CSV columns: epoch,q_loss,c_loss,val_accuracy,val_mean_features,val_objective
inline void write_log_csv(std::ostream& os, std::span<const EpochLog> log) {
  os << "epoch,q_loss,c_loss,val_accuracy,val_mean_features,val_objective\n";
  for (auto& e : log)
    os << e.epoch << ',' << format_double(e.q_loss) << ',' << format_double(e.c_loss) << ','
       << format_double(e.val_accuracy) << ',' << format_double(e.val_mean_features) << ','
       << format_double(e.val_objective) << '\n';
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

/// Thrown when a loss or gradient turns non-finite; carries the checkpoint
/// taken at the end of the last completed epoch.
struct TrainingDiverged : NumericalError {
  TrainingDiverged(const std::string& what, Checkpoint last)
      : NumericalError(what), last_good(std::move(last)) {}
  Checkpoint last_good;
};

/// Counts update calls; used to check the strict Q/C alternation.
struct UpdateTrace {
  std::vector<char> sequence;  // 'q' or 'c'
};

inline TrainResult train(const TrainConfig& config, const Dataset& train_set,
                         const Dataset* validation = nullptr, UpdateTrace* updates = nullptr) {
  config.validate();
  train_set.validate();
  if (train_set.size() == 0) throw ContractViolation("training set is empty");
  if (validation) nn::require_dim(validation->num_features, train_set.num_features, "validation features");

  std::mt19937_64 rng(config.seed);
  const std::size_t p = train_set.num_features;
  Policy policy(config.shape(p, train_set.num_classes), resolve_costs(config, p),
                train_set.class_weights, config.reward, rng);
  Learner learner(std::move(policy), config.learner());
  TrainResult result;

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution known(config.initial_observed);

  std::optional<Checkpoint> best;
  double best_objective = std::numeric_limits<double>::infinity();
  std::size_t stale_epochs = 0;
  Checkpoint last_good = snapshot(config, learner, 0, {});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double q_sum = 0.0, c_sum = 0.0;
    std::size_t n_updates = 0;
    try {
      for (std::size_t k = 0; k < n; ++k) {
        const double eps =
            config.epsilon_at(static_cast<double>(epoch) + static_cast<double>(k) / static_cast<double>(n));
        SampleView view = sample_view(train_set, order[k]);
        if (config.initial_observed > 0.0) {
          for (std::size_t j = 0; j < p; ++j)
            view.initial[j] = (view.available.empty() || view.available[j]) && known(rng) ? 1 : 0;
        }
        Episode ep = generate_episode(view, learner.policy(), eps, rng, config.max_acquisitions);
        for (auto& e : ep.steps) learner.replay().push(std::move(e));
        if (learner.replay().size() < config.batch_size) continue;
        auto batch = learner.replay().sample(config.batch_size, rng);
        q_sum += learner.q_update(batch);
        if (updates) updates->sequence.push_back('q');
        c_sum += learner.c_update(batch);
        if (updates) updates->sequence.push_back('c');
        ++n_updates;
      }
    } catch (const NumericalError& e) {
      throw TrainingDiverged(std::string("training diverged in epoch ") + std::to_string(epoch + 1) +
                                 ": " + e.what(),
                             std::move(last_good));
    }
    EpochLog row;
    row.epoch = epoch + 1;
    row.q_loss = n_updates ? q_sum / static_cast<double>(n_updates) : 0.0;
    row.c_loss = n_updates ? c_sum / static_cast<double>(n_updates) : 0.0;
    if (validation) {
      EvalReport rep = evaluate(learner.policy(), *validation, {config.max_acquisitions, 1});
      row.val_accuracy = rep.accuracy;
      row.val_mean_features = rep.mean_features;
      row.val_objective = rep.mean_objective;
    }
    result.log.push_back(row);
    last_good = snapshot(config, learner, epoch + 1, {});

    if (validation && config.early_stop_patience > 0) {
      if (row.val_objective < best_objective) {
        best_objective = row.val_objective;
        best = last_good;
        stale_epochs = 0;
      } else if (++stale_epochs >= config.early_stop_patience) {
        break;
      }
    }
  }
  result.checkpoint = best ? std::move(*best) : std::move(last_good);
  return result;
}

}  // namespace afa
