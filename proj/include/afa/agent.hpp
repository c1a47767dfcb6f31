#pragma once

// Q head, classifier head, replay memory, target network and the DQN-style
// updates that train them jointly over a shared encoder.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "afa/archive.hpp"
#include "afa/encoder.hpp"
#include "afa/environment.hpp"
#include "afa/nncore.hpp"

namespace afa {

/// Which losses train the shared encoder.
enum class GradientFlow { both, classifier_only, agent_only };

struct NetworkShape {
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  EncoderKind encoder = EncoderKind::set;
  std::vector<std::size_t> encoder_hidden{40, 30};  // reading block, or naive shared layers
  std::size_t memory_dim = 20;
  std::size_t process_steps = 5;
  std::vector<std::size_t> q_hidden{100, 50};
  std::vector<std::size_t> c_hidden{20, 20};
};

struct Prediction {
  std::size_t label;
  Vector probabilities;
};

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Encoder plus both heads, with the task constants needed to act: costs,
/// class weights and the stop-reward rule. This is the inference snapshot;
/// const member functions are safe to call from several threads.
class Policy {
 public:
  Policy() = default;
  Policy(const NetworkShape& shape, CostSchedule costs, Vector class_weights,
         RewardConfig reward, std::mt19937_64& rng)
      : shape_(shape), costs_(std::move(costs)), class_weights_(std::move(class_weights)),
        reward_(reward) {
    nn::require_dim(costs_.size(), shape.num_features, "Policy costs");
    nn::require_dim(class_weights_.size(), shape.num_classes, "Policy class weights");
    if (shape.encoder == EncoderKind::set)
      encoder_ = SetEncoder(shape.num_features, shape.encoder_hidden, shape.memory_dim,
                            shape.process_steps);
    else
      encoder_ = NaiveEncoder(shape.num_features, shape.encoder_hidden);
    q_head_ = nn::Mlp(encoder_.output_size(), shape.q_hidden, shape.num_features + 1);
    c_head_ = nn::Mlp(encoder_.output_size(), shape.c_hidden, shape.num_classes);
    encoder_.init(rng);
    q_head_.init(rng);
    c_head_.init(rng);
  }

  const NetworkShape& shape() const { return shape_; }
  std::size_t num_features() const { return shape_.num_features; }
  std::size_t num_classes() const { return shape_.num_classes; }
  const CostSchedule& costs() const { return costs_; }
  const Vector& class_weights() const { return class_weights_; }
  const RewardConfig& reward_config() const { return reward_; }

  StateEncoder& encoder() { return encoder_; }
  const StateEncoder& encoder() const { return encoder_; }
  nn::Mlp& q_head() { return q_head_; }
  const nn::Mlp& q_head() const { return q_head_; }
  nn::Mlp& c_head() { return c_head_; }
  const nn::Mlp& c_head() const { return c_head_; }

  Vector embed(const PartialState& s, EncoderCache* cache = nullptr) const {
    return encoder_.forward(s, cache);
  }

  /// Raw Q-values: features 0..p-1 then stop.
  Vector q_values(const PartialState& s) const { return q_head_.forward(embed(s)); }

  Vector class_logits(const PartialState& s) const { return c_head_.forward(embed(s)); }

  Vector class_probabilities(const PartialState& s) const { return nn::softmax(class_logits(s)); }

  /// Ties go to the lowest class index.
  Prediction predict(const PartialState& s) const {
    Vector probs = class_probabilities(s);
    return {argmax(probs), std::move(probs)};
  }

  /// Q-values with acquired (or unavailable) features set to -inf. The stop
  /// entry is always finite.
  Vector masked_q_values(const PartialState& s, std::span<const std::uint8_t> available = {}) const {
    return mask_q(q_values(s), s, available);
  }

  static Vector mask_q(Vector q, const PartialState& s, std::span<const std::uint8_t> available) {
    const std::size_t p = s.num_features();
    nn::require_dim(q.size(), p + 1, "Q-value vector");
    for (std::size_t j = 0; j < p; ++j)
      if (!is_valid(s, Action::acquire(j), available)) q[j] = -std::numeric_limits<double>::infinity();
    return q;
  }

  Action greedy_action(const PartialState& s, std::span<const std::uint8_t> available = {}) const {
    return Action::from_index(argmax(masked_q_values(s, available)), num_features());
  }

  /// Epsilon-greedy: uniform over valid actions with probability epsilon,
  /// otherwise the masked argmax (lowest index on ties).
  Action select_action(const PartialState& s, std::span<const std::uint8_t> available,
                       double epsilon, std::mt19937_64& rng) const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractViolation("epsilon must lie in [0,1]");
    if (epsilon > 0.0) {
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      if (coin(rng) < epsilon) {
        auto actions = valid_actions(s, available);
        std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
        return actions[pick(rng)];
      }
    }
    return greedy_action(s, available);
  }

  double stop_reward(const PartialState& s, std::size_t label) const {
    return terminal_reward(class_probabilities(s), label, class_weights_, reward_);
  }

  /// Batched counterparts; column b belongs to states[b].
  nn::Matrix q_values(StateBatch states) const { return q_head_.forward(encoder_.forward(states)); }

  nn::Matrix class_probabilities(StateBatch states) const {
    return softmax_columns(c_head_.forward(encoder_.forward(states)));
  }

  static nn::Matrix softmax_columns(const nn::Matrix& logits) {
    nn::Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
      const Vector p = nn::softmax(nn::column(logits, b));
      out.col(b) = nn::ConstColumnMap(p.data(), logits.rows());
    }
    return out;
  }

  nn::ParamList encoder_params() { return encoder_.params("enc"); }
  nn::ParamList q_params() { return q_head_.params("q"); }
  nn::ParamList c_params() { return c_head_.params("c"); }
  nn::ParamList params() {
    nn::ParamList out = encoder_params();
    nn::append(out, q_params());
    nn::append(out, c_params());
    return out;
  }

 private:
  NetworkShape shape_;
  CostSchedule costs_;
  Vector class_weights_;
  RewardConfig reward_;
  StateEncoder encoder_;
  nn::Mlp q_head_;
  nn::Mlp c_head_;
};

/// Frozen copy of the encoder and Q head used for bootstrap targets.
class TargetNetwork {
 public:
  TargetNetwork() = default;
  explicit TargetNetwork(const Policy& online) { sync(online); }

  void sync(const Policy& online) {
    encoder_ = online.encoder();
    q_head_ = online.q_head();
  }

  Vector q_values(const PartialState& s) const { return q_head_.forward(encoder_.forward(s)); }

  nn::Matrix q_values(StateBatch states) const { return q_head_.forward(encoder_.forward(states)); }

  nn::ParamList params() {
    nn::ParamList out = encoder_.params("target.enc");
    nn::append(out, q_head_.params("target.q"));
    return out;
  }

 private:
  StateEncoder encoder_;
  nn::Mlp q_head_;
};

/// Fixed-capacity FIFO of experiences; when full, the oldest is overwritten.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 50000) : capacity_(capacity) {
    if (capacity == 0) throw ContractViolation("replay capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  void push(Experience e) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(e));
    } else {
      items_[head_] = std::move(e);
      head_ = (head_ + 1) % capacity_;
    }
  }

  /// i = 0 is the oldest retained experience.
  const Experience& operator[](std::size_t i) const {
    return items_[(head_ + i) % items_.size()];
  }

  /// Uniform sampling with replacement.
  std::vector<const Experience*> sample(std::size_t count, std::mt19937_64& rng) const {
    if (items_.empty()) throw ContractViolation("cannot sample from an empty replay memory");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<const Experience*> out(count);
    for (auto& e : out) e = &items_[pick(rng)];
    return out;
  }

  void clear() {
    items_.clear();
    head_ = 0;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Experience> items_;
};

struct LearnerConfig {
  double learning_rate = 0.001;
  std::size_t replay_capacity = 50000;
  std::size_t sync_period = 500;
  GradientFlow gradient_flow = GradientFlow::both;
};

/// Everything that changes during training: the online policy, its target
/// copy, replay memory and one Adam optimizer per loss.
class Learner {
 public:
  Learner(Policy policy, const LearnerConfig& config)
      : policy_(std::move(policy)),
        target_(policy_),
        replay_(config.replay_capacity),
        q_opt_(nn::AdamConfig{config.learning_rate}),
        c_opt_(nn::AdamConfig{config.learning_rate}),
        config_(config) {
    if (config.sync_period == 0) throw ContractViolation("target sync period must be positive");
  }

  Policy& policy() { return policy_; }
  const Policy& policy() const { return policy_; }
  TargetNetwork& target() { return target_; }
  const TargetNetwork& target() const { return target_; }
  ReplayMemory& replay() { return replay_; }
  const ReplayMemory& replay() const { return replay_; }
  const LearnerConfig& config() const { return config_; }
  nn::Adam& q_optimizer() { return q_opt_; }
  nn::Adam& c_optimizer() { return c_opt_; }
  std::uint64_t q_updates() const { return q_updates_; }
  std::uint64_t c_updates() const { return c_updates_; }

  /// r + max over valid a' of Q'(s', a') for acquisitions (discount 1);
  /// for stop, the terminal reward from the current classifier, with no
  /// bootstrap term.
  double td_target(const Experience& e) const {
    const Experience* one[] = {&e};
    return td_targets(one)[0];
  }

  Vector td_targets(std::span<const Experience* const> batch) const {
    Vector targets(batch.size());
    std::vector<std::size_t> stop_idx, acq_idx;
    std::vector<const PartialState*> stop_states, next_ptrs;
    std::vector<PartialState> next_states;
    next_states.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Experience& e = *batch[b];
      if (e.action.is_stop()) {
        stop_idx.push_back(b);
        stop_states.push_back(&e.state);
      } else {
        if (!e.reward) throw ContractViolation("acquisition experience without a reward");
        acq_idx.push_back(b);
        next_states.push_back(e.next_state());
      }
    }
    if (!stop_idx.empty()) {
      const nn::Matrix probs = policy_.class_probabilities(StateBatch(stop_states));
      for (std::size_t k = 0; k < stop_idx.size(); ++k) {
        const Experience& e = *batch[stop_idx[k]];
        targets[stop_idx[k]] = terminal_reward(nn::column(probs, static_cast<Eigen::Index>(k)),
                                               e.label, policy_.class_weights(),
                                               policy_.reward_config());
      }
    }
    if (!acq_idx.empty()) {
      for (auto& s : next_states) next_ptrs.push_back(&s);
      const nn::Matrix q = target_.q_values(StateBatch(next_ptrs));
      for (std::size_t k = 0; k < acq_idx.size(); ++k) {
        const Experience& e = *batch[acq_idx[k]];
        const Vector masked =
            Policy::mask_q(nn::column(q, static_cast<Eigen::Index>(k)), next_states[k], e.available);
        targets[acq_idx[k]] = *e.reward + *std::max_element(masked.begin(), masked.end());
      }
    }
    return targets;
  }

  /// Mean squared TD error against fixed targets; accumulates its gradient
  /// into the Q head and, when the gradient-flow mode allows, the encoder.
  double q_gradients(std::span<const Experience* const> batch, std::span<const double> targets) {
    if (batch.empty()) throw ContractViolation("empty minibatch");
    nn::require_dim(targets.size(), batch.size(), "TD targets");
    const bool train_encoder = config_.gradient_flow != GradientFlow::classifier_only;
    const double scale = 1.0 / static_cast<double>(batch.size());
    const std::size_t p = policy_.num_features();
    const auto states = states_of(batch);
    EncoderCache ec;
    nn::MlpCache qc;
    const nn::Matrix h = policy_.encoder().forward(states, train_encoder ? &ec : nullptr);
    const nn::Matrix q = policy_.q_head().forward(h, &qc);
    nn::Matrix grad = nn::Matrix::Zero(q.rows(), q.cols());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto a = static_cast<Eigen::Index>(batch[b]->action.index(p));
      const auto col = static_cast<Eigen::Index>(b);
      const double diff = q(a, col) - targets[b];
      loss += diff * diff * scale;
      grad(a, col) = 2.0 * diff * scale;
    }
    if (!std::isfinite(loss)) throw NumericalError("non-finite Q loss");
    const nn::Matrix dh = policy_.q_head().backward(qc, grad, train_encoder);
    if (train_encoder) policy_.encoder().backward(ec, dh);
    return loss;
  }

  /// One Adam step on mean squared TD error. Targets are constants.
  double q_update(std::span<const Experience* const> batch) {
    const Vector targets = td_targets(batch);
    const double loss = q_gradients(batch, targets);
    q_opt_.step(q_trainable());
    ++q_updates_;
    if (q_updates_ % config_.sync_period == 0) target_.sync(policy_);
    return loss;
  }

  /// Parameters the Q loss updates: the Q head, plus the encoder unless it
  /// is trained by the classifier only.
  nn::ParamList q_trainable() {
    nn::ParamList params = config_.gradient_flow != GradientFlow::classifier_only
                               ? policy_.encoder_params()
                               : nn::ParamList{};
    nn::append(params, policy_.q_params());
    return params;
  }

  nn::ParamList c_trainable() {
    nn::ParamList params =
        config_.gradient_flow != GradientFlow::agent_only ? policy_.encoder_params() : nn::ParamList{};
    nn::append(params, policy_.c_params());
    return params;
  }

  /// Mean weighted cross-entropy of the stored labels; accumulates its
  /// gradient like q_gradients().
  double c_gradients(std::span<const Experience* const> batch) {
    if (batch.empty()) throw ContractViolation("empty minibatch");
    const bool train_encoder = config_.gradient_flow != GradientFlow::agent_only;
    const double scale = 1.0 / static_cast<double>(batch.size());
    const Vector& w = policy_.class_weights();
    const auto states = states_of(batch);
    EncoderCache ec;
    nn::MlpCache cc;
    const nn::Matrix h = policy_.encoder().forward(states, train_encoder ? &ec : nullptr);
    const nn::Matrix logits = policy_.c_head().forward(h, &cc);
    nn::Matrix grad(logits.rows(), logits.cols());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto col = static_cast<Eigen::Index>(b);
      const Vector probs = nn::softmax(nn::column(logits, col));
      loss += nn::weighted_cross_entropy(probs, batch[b]->label, w) * scale;
      const Vector g = nn::weighted_cross_entropy_grad(probs, batch[b]->label, w);
      grad.col(col) = nn::ConstColumnMap(g.data(), logits.rows()) * scale;
    }
    if (!std::isfinite(loss)) throw NumericalError("non-finite classifier loss");
    const nn::Matrix dh = policy_.c_head().backward(cc, grad, train_encoder);
    if (train_encoder) policy_.encoder().backward(ec, dh);
    return loss;
  }

  /// One Adam step on mean weighted cross-entropy of the stored labels.
  double c_update(std::span<const Experience* const> batch) {
    const double loss = c_gradients(batch);
    c_opt_.step(c_trainable());
    ++c_updates_;
    return loss;
  }

  void sync_target() { target_.sync(policy_); }

  void set_counters(std::uint64_t q_updates, std::uint64_t c_updates) {
    q_updates_ = q_updates;
    c_updates_ = c_updates;
  }

 private:
  static std::vector<const PartialState*> states_of(std::span<const Experience* const> batch) {
    std::vector<const PartialState*> out;
    out.reserve(batch.size());
    for (const Experience* e : batch) out.push_back(&e->state);
    return out;
  }

  Policy policy_;
  TargetNetwork target_;
  ReplayMemory replay_;
  nn::Adam q_opt_;
  nn::Adam c_opt_;
  LearnerConfig config_;
  std::uint64_t q_updates_ = 0;
  std::uint64_t c_updates_ = 0;
};

}  // namespace afa
