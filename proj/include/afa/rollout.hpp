#pragma once

// Episode generation against a policy snapshot.

#include <cstdint>
#include <random>
#include <span>

#include "afa/agent.hpp"
#include "afa/dataset.hpp"
#include "afa/environment.hpp"

namespace afa {

/// One sample's view of the environment: its full feature vector, which
/// features can be acquired at all, and which are known before the first step.
struct SampleView {
  std::span<const double> features;
  Mask available;  // empty = all available
  Mask initial;    // observed at t = 0
  std::size_t label = 0;
  std::size_t index = 0;
};

inline Mask all_or_empty(std::span<const std::uint8_t> known) {
  for (auto b : known)
    if (!b) return Mask(known.begin(), known.end());
  return {};
}

/// Sample i with an empty start state. Missing values become unavailable.
inline SampleView sample_view(const Dataset& ds, std::size_t i) {
  return {ds.row(i), all_or_empty(ds.known(i)), Mask(ds.num_features, 0), ds.labels[i], i};
}

/// Rolls out the epsilon-greedy policy until it stops. The stop action is
/// forced once `max_acquisitions` features have been acquired (0 = p) or no
/// acquirable feature is left.
inline Episode generate_episode(const SampleView& sample, const Policy& policy, double epsilon,
                                std::mt19937_64& rng, std::size_t max_acquisitions = 0) {
  const std::size_t p = policy.num_features();
  nn::require_dim(sample.features.size(), p, "episode features");
  if (max_acquisitions == 0) max_acquisitions = p;
  Episode ep;
  ep.sample_index = sample.index;
  PartialState s = reset(sample.features, sample.initial);
  std::size_t acquired = 0;
  for (;;) {
    Action a = acquired >= max_acquisitions
                   ? Action::stop()
                   : policy.select_action(s, sample.available, epsilon, rng);
    if (a.is_stop()) {
      ep.steps.push_back({s, a, std::nullopt, 0.0, sample.label, true, sample.available});
      break;
    }
    StepResult r = step(s, a, sample.features, policy.costs());
    const double value = sample.features[a.feature()];
    ep.steps.push_back({std::move(s), a, r.reward, value, sample.label, false, sample.available});
    s = std::move(r.next);
    ++acquired;
  }
  return ep;
}

inline Episode greedy_episode(const SampleView& sample, const Policy& policy,
                              std::size_t max_acquisitions = 0) {
  std::mt19937_64 unused(0);
  return generate_episode(sample, policy, 0.0, unused, max_acquisitions);
}

}  // namespace afa
