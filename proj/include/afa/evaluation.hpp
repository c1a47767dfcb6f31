#pragma once

// Greedy-policy evaluation, AUC, episode traces and attention dumps.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "afa/agent.hpp"
#include "afa/dataset.hpp"
#include "afa/rollout.hpp"

namespace afa {

/// Mann-Whitney AUC of `scores` for the positive class (label 1); tied
/// scores count one half.
inline double auc(std::span<const double> scores, std::span<const std::size_t> labels) {
  nn::require_dim(labels.size(), scores.size(), "auc labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] > 1) throw ContractViolation("auc expects binary labels");
      if (labels[order[k]] == 1) {
        pos_rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractViolation("auc needs both classes present");
  const double np = static_cast<double>(n_pos);
  const double nn_ = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn_);
}

struct EpisodeOutcome {
  std::size_t sample_index = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  Vector probabilities;
  std::vector<std::size_t> acquired;  // in acquisition order
  double loss = 0.0;                  // weighted cross-entropy at the stop state
  double cost = 0.0;                  // c^T z at the stop state
  double total_reward = 0.0;          // sum of rewards with the stop reward resolved
};

struct EvalOptions {
  std::size_t max_acquisitions = 0;  // 0 = p
  std::size_t threads = 1;
};

inline EpisodeOutcome evaluate_sample(const Policy& policy, const SampleView& sample,
                                      std::size_t max_acquisitions = 0) {
  Episode ep = greedy_episode(sample, policy, max_acquisitions);
  const PartialState& final_state = ep.final_state();
  EpisodeOutcome out;
  out.sample_index = sample.index;
  out.label = sample.label;
  Prediction pred = policy.predict(final_state);
  out.predicted = pred.label;
  out.loss = nn::weighted_cross_entropy(pred.probabilities, sample.label, policy.class_weights());
  out.probabilities = std::move(pred.probabilities);
  out.cost = policy.costs().total(final_state.z);
  for (std::size_t t = 0; t + 1 < ep.steps.size(); ++t)
    out.acquired.push_back(ep.steps[t].action.feature());
  out.total_reward = ep.total_reward(-out.loss);
  return out;
}

/// Greedy rollouts for every sample, in dataset order.
inline std::vector<EpisodeOutcome> rollout_all(const Policy& policy, const Dataset& ds,
                                               const EvalOptions& opts = {}) {
  nn::require_dim(ds.num_features, policy.num_features(), "dataset feature count vs model");
  if (ds.num_classes > policy.num_classes())
    throw DimensionError("dataset has more classes than the model");
  std::vector<EpisodeOutcome> out(ds.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      out[i] = evaluate_sample(policy, sample_view(ds, i), opts.max_acquisitions);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, ds.size()));
  if (threads == 1) {
    work(0, ds.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (ds.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(ds.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

struct EvalReport {
  std::size_t samples = 0;
  double accuracy = 0.0;
  Vector per_class_accuracy;
  std::optional<double> auc;  // binary tasks only
  double mean_features = 0.0;
  double stddev_features = 0.0;
  double mean_cost = 0.0;
  double mean_loss = 0.0;
  double mean_objective = 0.0;                 // mean_loss + mean_cost
  std::vector<std::size_t> length_histogram;   // index = acquisitions
  std::vector<std::size_t> acquisition_counts; // per feature
  double informative_fraction(std::size_t informative) const {
    std::size_t total = 0, hit = 0;
    for (std::size_t j = 0; j < acquisition_counts.size(); ++j) {
      total += acquisition_counts[j];
      if (j < informative) hit += acquisition_counts[j];
    }
    return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
  }
};

inline EvalReport summarize(std::span<const EpisodeOutcome> outcomes, std::size_t num_features,
                            std::size_t num_classes) {
  EvalReport r;
  r.samples = outcomes.size();
  r.length_histogram.assign(num_features + 1, 0);
  r.acquisition_counts.assign(num_features, 0);
  r.per_class_accuracy.assign(num_classes, 0.0);
  if (outcomes.empty()) return r;
  std::vector<std::size_t> class_total(num_classes, 0), class_hit(num_classes, 0);
  double correct = 0.0, feat = 0.0, feat_sq = 0.0, cost = 0.0, loss = 0.0;
  for (auto& o : outcomes) {
    const bool hit = o.predicted == o.label;
    correct += hit ? 1.0 : 0.0;
    ++class_total[o.label];
    class_hit[o.label] += hit ? 1 : 0;
    const double k = static_cast<double>(o.acquired.size());
    feat += k;
    feat_sq += k * k;
    cost += o.cost;
    loss += o.loss;
    ++r.length_histogram[o.acquired.size()];
    for (auto j : o.acquired) ++r.acquisition_counts[j];
  }
  const double n = static_cast<double>(outcomes.size());
  r.accuracy = correct / n;
  for (std::size_t k = 0; k < num_classes; ++k)
    r.per_class_accuracy[k] =
        class_total[k] ? static_cast<double>(class_hit[k]) / static_cast<double>(class_total[k]) : 0.0;
  r.mean_features = feat / n;
  r.stddev_features = std::sqrt(std::max(0.0, feat_sq / n - r.mean_features * r.mean_features));
  r.mean_cost = cost / n;
  r.mean_loss = loss / n;
  r.mean_objective = r.mean_loss + r.mean_cost;
  if (num_classes == 2) {
    Vector scores;
    std::vector<std::size_t> labels;
    for (auto& o : outcomes) {
      scores.push_back(o.probabilities[1]);
      labels.push_back(o.label);
    }
    if (std::count(labels.begin(), labels.end(), 1u) > 0 &&
        std::count(labels.begin(), labels.end(), 0u) > 0)
      r.auc = auc(scores, labels);
  }
  return r;
}

inline EvalReport evaluate(const Policy& policy, const Dataset& ds, const EvalOptions& opts = {}) {
  auto outcomes = rollout_all(policy, ds, opts);
  return summarize(outcomes, policy.num_features(), policy.num_classes());
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["auc"] = r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr);
  j["mean_features"] = r.mean_features;
  j["stddev_features"] = r.stddev_features;
  j["mean_cost"] = r.mean_cost;
  j["mean_loss"] = r.mean_loss;
  j["mean_objective"] = r.mean_objective;
  j["length_histogram"] = r.length_histogram;
  j["acquisition_counts"] = r.acquisition_counts;
  return j;
}

inline void write_report_json(std::ostream& os, const EvalReport& r) {
  os << report_to_json(r).dump(2) << '\n';
}

struct TraceRow {
  std::size_t step = 0;
  std::optional<std::size_t> feature;  // none for the initial state
  double value = 0.0;
  double p_true = 0.0;                 // P(y = true class | s_t)
};

struct TraceRecord {
  std::size_t sample_index = 0;
  std::size_t label = 0;
  std::vector<TraceRow> rows;
  std::size_t predicted = 0;
  Vector probabilities;
};

inline TraceRecord trace(const Policy& policy, const SampleView& sample,
                         std::size_t max_acquisitions = 0) {
  Episode ep = greedy_episode(sample, policy, max_acquisitions);
  TraceRecord rec;
  rec.sample_index = sample.index;
  rec.label = sample.label;
  for (std::size_t t = 0; t < ep.steps.size(); ++t) {
    const Experience& e = ep.steps[t];
    TraceRow row;
    row.step = t;
    if (t > 0) {
      const Experience& prev = ep.steps[t - 1];
      row.feature = prev.action.feature();
      row.value = prev.acquired_value;
    }
    row.p_true = policy.class_probabilities(e.state)[sample.label];
    rec.rows.push_back(row);
  }
  Prediction pred = policy.predict(ep.final_state());
  rec.predicted = pred.label;
  rec.probabilities = std::move(pred.probabilities);
  return rec;
}

/// CSV columns: step,feature,value,p_true. Features are 1-based; the
/// initial-state row leaves feature and value empty.
inline void write_trace_csv(std::ostream& os, const TraceRecord& rec) {
  os << "step,feature,value,p_true\n";
  for (auto& r : rec.rows) {
    os << r.step << ',';
    if (r.feature) os << *r.feature + 1 << ',' << format_double(r.value);
    else os << ',';
    os << ',' << format_double(r.p_true) << '\n';
  }
}

struct AttentionRow {
  std::size_t episode = 0;
  std::size_t process_step = 0;
  std::size_t feature = 0;
  double weight = 0.0;
};

/// Attention weights of the set encoder at `state`; empty for other encoders
/// or an empty observed set.
inline std::vector<AttentionRow> attention_rows(const Policy& policy, const PartialState& state,
                                                std::size_t episode_id) {
  std::vector<AttentionRow> rows;
  const SetEncoder* enc = policy.encoder().set();
  if (!enc || state.observed_count() == 0) return rows;
  const auto observed = state.observed();
  const auto weights = enc->attention_weights(state);
  for (std::size_t t = 0; t < weights.size(); ++t)
    for (std::size_t k = 0; k < observed.size(); ++k)
      rows.push_back({episode_id, t + 1, observed[k], weights[t][k]});
  return rows;
}

/// CSV columns: episode,process_step,feature,weight (feature 1-based).
inline void write_attention_csv(std::ostream& os, std::span<const AttentionRow> rows) {
  os << "episode,process_step,feature,weight\n";
  for (auto& r : rows)
    os << r.episode << ',' << r.process_step << ',' << r.feature + 1 << ','
       << format_double(r.weight) << '\n';
}

}  // namespace afa
