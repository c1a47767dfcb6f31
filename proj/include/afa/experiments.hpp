#pragma once

// Multi-seed CUBE experiments: seed selection, the dummy-feature sweep, the
// encoder-sharing ablation and a full-information classifier baseline.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "afa/dataset.hpp"
#include "afa/evaluation.hpp"
#include "afa/trainer.hpp"

namespace afa {

struct CubeSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Independent stream seeds for the three splits of one data seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline CubeSplits make_cube_splits(std::size_t num_features, double sigma, std::size_t n_train,
                                   std::size_t n_validation, std::size_t n_test,
                                   std::uint64_t data_seed) {
  return {generate_cube({num_features, sigma, n_train, derive_seed(data_seed, 0)}),
          generate_cube({num_features, sigma, n_validation, derive_seed(data_seed, 1)}),
          generate_cube({num_features, sigma, n_test, derive_seed(data_seed, 2)})};
}

struct SeedRun {
  std::uint64_t seed = 0;
  double validation_objective = 0.0;
  double validation_accuracy = 0.0;
  EvalReport test;
  Checkpoint checkpoint;
};

inline SeedRun run_seed(TrainConfig config, std::uint64_t seed, const CubeSplits& data,
                        std::size_t eval_threads = 1) {
  config.seed = seed;
  TrainResult r = train(config, data.train, &data.validation);
  SeedRun run;
  run.seed = seed;
  EvalReport val = evaluate(r.checkpoint.policy, data.validation, {config.max_acquisitions, eval_threads});
  run.validation_objective = val.mean_objective;
  run.validation_accuracy = val.accuracy;
  run.test = evaluate(r.checkpoint.policy, data.test, {config.max_acquisitions, eval_threads});
  run.checkpoint = std::move(r.checkpoint);
  return run;
}

/// Index of the run with the lowest validation objective (loss + cost).
inline std::size_t select_by_validation(const std::vector<SeedRun>& runs) {
  if (runs.empty()) throw ContractViolation("no runs to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].validation_objective < runs[best].validation_objective) best = i;
  return best;
}

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

/// Linear-interpolation quantiles (type 7).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ContractViolation("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Quartiles quartiles(const std::vector<double>& v) {
  return {quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75)};
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct SweepPoint {
  EncoderKind encoder = EncoderKind::set;
  std::size_t dummies = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double mean_features = 0.0;
  double validation_objective = 0.0;
};

struct SweepOptions {
  double sigma = 0.3;
  std::size_t n_train = 10000;
  std::size_t n_validation = 1000;
  std::size_t n_test = 1000;
  std::uint64_t data_seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<EncoderKind> encoders{EncoderKind::set, EncoderKind::naive};
  std::size_t eval_threads = 1;
};

/// One training run per (encoder, dummy count, seed) on CUBE with 10
/// informative features plus `dummies` uniform ones.
inline std::vector<SweepPoint> dummy_sweep(const TrainConfig& base,
                                           const std::vector<std::size_t>& dummy_counts,
                                           const SweepOptions& opts = {}) {
  std::vector<SweepPoint> out;
  for (std::size_t dummies : dummy_counts) {
    const CubeSplits data = make_cube_splits(kCubeInformative + dummies, opts.sigma, opts.n_train,
                                             opts.n_validation, opts.n_test, opts.data_seed);
    for (EncoderKind kind : opts.encoders) {
      TrainConfig config = base;
      config.encoder = kind;
      for (std::uint64_t seed : opts.seeds) {
        SeedRun run = run_seed(config, seed, data, opts.eval_threads);
        out.push_back({kind, dummies, seed, run.test.accuracy, run.test.mean_features,
                       run.validation_objective});
      }
    }
  }
  return out;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& points) {
  os << "encoder,dummies,seed,accuracy,mean_features,validation_objective\n";
  for (auto& p : points)
    os << to_string(p.encoder) << ',' << p.dummies << ',' << p.seed << ','
       << format_double(p.accuracy) << ',' << format_double(p.mean_features) << ','
       << format_double(p.validation_objective) << '\n';
}

struct AblationRow {
  std::size_t depth = 0;
  std::vector<double> accuracy;  // one per seed
  std::vector<double> features;
  Quartiles accuracy_quartiles;
  double mean_accuracy = 0.0;
  double mean_features = 0.0;
};

struct AblationOptions {
  std::size_t num_features = 100;
  double sigma = 0.1;
  std::size_t n_train = 10000;
  std::size_t n_validation = 1000;
  std::size_t n_test = 1000;
  std::uint64_t data_seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::size_t> layer_sizes{50, 30, 50};
  std::size_t eval_threads = 1;
};

/// Naive-encoder runs where the first `depth` of three hidden layers are
/// shared and the rest belong to each head.
inline TrainConfig sharing_config(TrainConfig base, std::size_t depth,
                                  const std::vector<std::size_t>& sizes) {
  if (depth > sizes.size()) throw ConfigError("shared depth exceeds the layer stack");
  base.encoder = EncoderKind::naive;
  base.shared_hidden.assign(sizes.begin(), sizes.begin() + static_cast<std::ptrdiff_t>(depth));
  base.q_hidden.assign(sizes.begin() + static_cast<std::ptrdiff_t>(depth), sizes.end());
  base.c_hidden = base.q_hidden;
  return base;
}

inline std::vector<AblationRow> sharing_ablation(const TrainConfig& base,
                                                 const std::vector<std::size_t>& depths,
                                                 const AblationOptions& opts = {}) {
  const CubeSplits data = make_cube_splits(opts.num_features, opts.sigma, opts.n_train,
                                           opts.n_validation, opts.n_test, opts.data_seed);
  std::vector<AblationRow> rows;
  for (std::size_t depth : depths) {
    const TrainConfig config = sharing_config(base, depth, opts.layer_sizes);
    AblationRow row;
    row.depth = depth;
    for (std::uint64_t seed : opts.seeds) {
      SeedRun run = run_seed(config, seed, data, opts.eval_threads);
      row.accuracy.push_back(run.test.accuracy);
      row.features.push_back(run.test.mean_features);
    }
    row.accuracy_quartiles = quartiles(row.accuracy);
    row.mean_accuracy = mean(row.accuracy);
    row.mean_features = mean(row.features);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "depth,mean_accuracy,accuracy_q1,accuracy_median,accuracy_q3,mean_features,seeds\n";
  for (auto& r : rows)
    os << r.depth << ',' << format_double(r.mean_accuracy) << ','
       << format_double(r.accuracy_quartiles.q1) << ',' << format_double(r.accuracy_quartiles.median)
       << ',' << format_double(r.accuracy_quartiles.q3) << ',' << format_double(r.mean_features)
       << ',' << r.accuracy.size() << '\n';
}

// ---------------------------------------------------------------------------
// Full-information baseline: a plain MLP classifier that sees every feature.

struct BaselineConfig {
  std::vector<std::size_t> hidden{100, 50};
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  std::uint64_t seed = 1;
};

struct BaselineResult {
  nn::Mlp model;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
};

inline nn::Matrix feature_matrix(const Dataset& ds, std::span<const std::size_t> rows) {
  nn::Matrix x(static_cast<Eigen::Index>(ds.num_features), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t b = 0; b < rows.size(); ++b) {
    auto r = ds.row(rows[b]);
    x.col(static_cast<Eigen::Index>(b)) = nn::ConstColumnMap(r.data(), x.rows());
  }
  return x;
}

inline double mlp_accuracy(const nn::Mlp& model, const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const nn::Matrix logits = model.forward(feature_matrix(ds, all));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Eigen::Index k;
    logits.col(static_cast<Eigen::Index>(i)).maxCoeff(&k);
    hit += static_cast<std::size_t>(k) == ds.labels[i];
  }
  return ds.size() ? static_cast<double>(hit) / static_cast<double>(ds.size()) : 0.0;
}

/// Trains with weighted cross-entropy and keeps the epoch with the best
/// validation accuracy.
inline BaselineResult full_feature_baseline(const CubeSplits& data, const BaselineConfig& config = {}) {
  std::mt19937_64 rng(config.seed);
  const Dataset& tr = data.train;
  nn::Mlp model(tr.num_features, config.hidden, tr.num_classes);
  model.init(rng);
  nn::Adam opt(nn::AdamConfig{config.learning_rate});
  std::vector<std::size_t> order(tr.size());
  std::iota(order.begin(), order.end(), 0);
  BaselineResult best{model, -1.0, 0.0};
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      nn::MlpCache cache;
      const nn::Matrix logits = model.forward(feature_matrix(tr, rows), &cache);
      nn::Matrix grad(logits.rows(), logits.cols());
      const double scale = 1.0 / static_cast<double>(rows.size());
      for (std::size_t b = 0; b < rows.size(); ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        const Vector probs = nn::softmax(nn::column(logits, col));
        const Vector g = nn::weighted_cross_entropy_grad(probs, tr.labels[rows[b]], tr.class_weights);
        grad.col(col) = nn::ConstColumnMap(g.data(), logits.rows()) * scale;
      }
      model.backward(cache, grad, false);
      opt.step(model.params("baseline"));
    }
    const double val = mlp_accuracy(model, data.validation);
    if (val > best.validation_accuracy) best = {model, val, 0.0};
  }
  best.test_accuracy = mlp_accuracy(best.model, data.test);
  return best;
}

}  // namespace afa
