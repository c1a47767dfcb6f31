#pragma once

// Command-line front end. run_cli() is the whole program minus main() so the
// commands can be driven from tests with string streams.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "afa/dataset.hpp"
#include "afa/evaluation.hpp"
#include "afa/experiments.hpp"
#include "afa/trainer.hpp"

namespace afa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "AFA_OUT_DIR";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

inline std::string default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? std::string(env) : std::string(".");
}

inline fs::path output_path(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  return fs::path(dir) / name;
}

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

/// Plain file names only; outputs never leave the output directory.
inline void check_file_name(const std::string& name) {
  const fs::path p(name);
  if (name.empty() || p.has_parent_path() || p.is_absolute() || name == "." || name == "..")
    throw UsageError("'" + name + "' must be a plain file name inside the output directory");
}

struct DataSource {
  std::string csv;
  std::string label_column = "label";
  std::size_t cube_p = 20;
  double cube_sigma = 0.1;
  std::size_t cube_n = 10000;
  std::uint64_t cube_seed = 1;

  void add_options(CLI::App& cmd, bool with_cube) {
    cmd.add_option("--data", csv, "dataset CSV (empty cells = missing)");
    cmd.add_option("--label-column", label_column, "name of the label column");
    if (with_cube) {
      cmd.add_option("--cube-p", cube_p, "features of the generated CUBE set when --data is absent");
      cmd.add_option("--cube-sigma", cube_sigma, "CUBE noise level");
      cmd.add_option("--cube-n", cube_n, "CUBE sample count");
      cmd.add_option("--cube-seed", cube_seed, "CUBE generator seed");
    }
  }

  Dataset load() const {
    if (!csv.empty()) return load_csv(csv, label_column);
    return generate_cube({cube_p, cube_sigma, cube_n, cube_seed});
  }
};

inline Dataset prepare(const Dataset& ds, const Checkpoint& ck) {
  if (ds.num_features != ck.policy.num_features())
    throw DimensionError("dataset has " + std::to_string(ds.num_features) +
                         " features but the checkpoint expects " +
                         std::to_string(ck.policy.num_features()));
  if (ds.num_classes > ck.policy.num_classes())
    throw DimensionError("dataset has more classes than the checkpoint");
  Dataset out = ck.scaling.empty() ? ds : ck.scaling.apply(ds);
  out.num_classes = ck.policy.num_classes();
  out.class_weights = ck.policy.class_weights();
  return out;
}

inline std::vector<std::size_t> parse_list(const std::string& text) {
  return detail::parse_sizes("list", text);
}

// ---------------------------------------------------------------------------

inline int cmd_gen_cube(std::size_t p, double sigma, std::size_t n, std::uint64_t seed,
                        const std::string& name, const std::string& out_dir, std::ostream& out) {
  check_file_name(name + ".csv");
  CubeSpec spec{p, sigma, n, seed};
  try {
    spec.validate();
  } catch (const DatasetError& e) {
    throw UsageError(e.what());
  }
  Dataset ds = generate_cube(spec);
  const fs::path csv = output_path(out_dir, name + ".csv");
  {
    auto os = open_output(csv);
    save_csv(ds, os);
  }
  nlohmann::json manifest{{"generator", "cube"},
                          {"num_features", p},
                          {"sigma", sigma},
                          {"requested_samples", n},
                          {"samples", ds.size()},
                          {"classes", ds.num_classes},
                          {"seed", seed},
                          {"file", csv.filename().string()}};
  auto ms = open_output(output_path(out_dir, name + ".manifest.json"));
  ms << manifest.dump(2) << '\n';
  out << "wrote " << ds.size() << " samples to " << csv.string() << '\n';
  return kExitOk;
}

struct TrainOptions {
  std::string config_file;
  std::vector<std::string> settings;  // key=value
  DataSource data;
  std::string validation_csv;
  double validation_fraction = 0.1;
  bool scale = false;
};

inline int cmd_train(TrainConfig config, const TrainOptions& opts, const std::string& out_dir,
                     std::ostream& out) {
  for (const auto& kv : opts.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(config, std::string(detail::trim(kv.substr(0, eq))), std::string(detail::trim(kv.substr(eq + 1))));
  }
  config.validate();

  Dataset all = opts.data.load();
  Dataset train_set, val_set;
  if (!opts.validation_csv.empty()) {
    train_set = std::move(all);
    val_set = load_csv(opts.validation_csv, opts.data.label_column);
    if (val_set.num_features != train_set.num_features)
      throw DimensionError("validation set feature count differs from the training set");
  } else {
    if (!(opts.validation_fraction > 0.0 && opts.validation_fraction < 1.0))
      throw UsageError("--validation-fraction must lie in (0,1)");
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, 7));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(opts.validation_fraction * static_cast<double>(all.size())));
    if (n_val >= all.size()) throw DatasetError("dataset too small to hold out a validation split");
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> tr_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(tr_idx.begin(), tr_idx.end());
    train_set = all.subset(tr_idx);
    val_set = all.subset(val_idx);
  }
  val_set.num_classes = train_set.num_classes = std::max(train_set.num_classes, val_set.num_classes);
  train_set.class_weights = inverse_frequency_weights(train_set.labels, train_set.num_classes);
  val_set.class_weights = train_set.class_weights;

  FeatureScaling scaling;
  if (opts.scale) {
    scaling = FeatureScaling::fit(train_set);
    train_set = scaling.apply(train_set);
    val_set = scaling.apply(val_set);
  }

  TrainResult result = train(config, train_set, &val_set);
  result.checkpoint.scaling = scaling;

  save_checkpoint(output_path(out_dir, "checkpoint.afa").string(), result.checkpoint);
  {
    auto os = open_output(output_path(out_dir, "train_log.csv"));
    write_log_csv(os, result.log);
  }
  {
    auto os = open_output(output_path(out_dir, "config.txt"));
    os << config_to_text(config);
  }
  EvalReport report = evaluate(result.checkpoint.policy, val_set, {config.max_acquisitions, 1});
  {
    auto os = open_output(output_path(out_dir, "validation_report.json"));
    write_report_json(os, report);
  }
  for (auto& row : result.log)
    out << "epoch " << row.epoch << "  q_loss " << row.q_loss << "  c_loss " << row.c_loss
        << "  val_acc " << row.val_accuracy << "  val_features " << row.val_mean_features << '\n';
  out << "validation accuracy " << report.accuracy << ", mean features " << report.mean_features
      << '\n';
  return kExitOk;
}

inline int cmd_eval(const std::string& checkpoint, const DataSource& data, std::size_t threads,
                    const std::string& name, const std::string& out_dir, std::ostream& out) {
  check_file_name(name);
  Checkpoint ck = load_checkpoint(checkpoint);
  Dataset ds = prepare(data.load(), ck);
  EvalReport report = evaluate(ck.policy, ds, {ck.config.max_acquisitions, threads});
  auto os = open_output(output_path(out_dir, name));
  write_report_json(os, report);
  out << "accuracy " << report.accuracy << ", mean features " << report.mean_features
      << ", objective " << report.mean_objective << '\n';
  return kExitOk;
}

inline int cmd_trace(const std::string& checkpoint, const DataSource& data, std::size_t sample,
                     bool attention, const std::string& out_dir, std::ostream& out) {
  Checkpoint ck = load_checkpoint(checkpoint);
  Dataset ds = prepare(data.load(), ck);
  if (sample >= ds.size())
    throw UsageError("sample " + std::to_string(sample) + " out of range (dataset has " +
                     std::to_string(ds.size()) + ")");
  const SampleView view = sample_view(ds, sample);
  TraceRecord rec = trace(ck.policy, view, ck.config.max_acquisitions);
  {
    auto os = open_output(output_path(out_dir, "trace.csv"));
    write_trace_csv(os, rec);
  }
  if (attention) {
    if (!ck.policy.encoder().set()) throw UsageError("--attention needs a set-encoder checkpoint");
    Episode ep = greedy_episode(view, ck.policy, ck.config.max_acquisitions);
    auto rows = attention_rows(ck.policy, ep.final_state(), sample);
    auto os = open_output(output_path(out_dir, "attention.csv"));
    write_attention_csv(os, rows);
  }
  out << "sample " << sample << ": true class " << rec.label + 1 << ", predicted "
      << rec.predicted + 1 << " after " << rec.rows.size() - 1 << " acquisitions\n";
  return kExitOk;
}

struct ExperimentScale {
  std::size_t n_train = 10000;
  std::size_t n_validation = 1000;
  std::size_t n_test = 1000;
  std::uint64_t data_seed = 1;
  std::string seeds = "1,2,3";
  std::size_t threads = 1;

  void add_options(CLI::App& cmd) {
    cmd.add_option("--n-train", n_train, "training samples");
    cmd.add_option("--n-validation", n_validation, "validation samples");
    cmd.add_option("--n-test", n_test, "test samples");
    cmd.add_option("--seed", data_seed, "data seed");
    cmd.add_option("--seeds", seeds, "comma-separated training seeds");
    cmd.add_option("--threads", threads, "evaluation threads");
  }

  std::vector<std::uint64_t> seed_list() const {
    std::vector<std::uint64_t> out;
    for (auto s : parse_list(seeds)) out.push_back(s);
    if (out.empty()) throw UsageError("--seeds must list at least one seed");
    return out;
  }
};

inline int cmd_sweep(const TrainConfig& config, const ExperimentScale& scale, double sigma,
                     const std::string& dummies, const std::string& encoders,
                     const std::string& out_dir, std::ostream& out) {
  SweepOptions opts;
  opts.sigma = sigma;
  opts.n_train = scale.n_train;
  opts.n_validation = scale.n_validation;
  opts.n_test = scale.n_test;
  opts.data_seed = scale.data_seed;
  opts.seeds = scale.seed_list();
  opts.eval_threads = scale.threads;
  opts.encoders.clear();
  std::stringstream ss(encoders);
  for (std::string e; std::getline(ss, e, ',');) {
    const auto t = std::string(detail::trim(e));
    if (t == "set") opts.encoders.push_back(EncoderKind::set);
    else if (t == "naive") opts.encoders.push_back(EncoderKind::naive);
    else throw UsageError("unknown encoder '" + t + "'");
  }
  auto points = dummy_sweep(config, parse_list(dummies), opts);
  auto os = open_output(output_path(out_dir, "sweep.csv"));
  write_sweep_csv(os, points);
  write_sweep_csv(out, points);
  return kExitOk;
}

inline int cmd_ablate(const TrainConfig& config, const ExperimentScale& scale, std::size_t p,
                      double sigma, const std::string& depths, const std::string& sizes,
                      const std::string& out_dir, std::ostream& out) {
  AblationOptions opts;
  opts.num_features = p;
  opts.sigma = sigma;
  opts.n_train = scale.n_train;
  opts.n_validation = scale.n_validation;
  opts.n_test = scale.n_test;
  opts.data_seed = scale.data_seed;
  opts.seeds = scale.seed_list();
  opts.eval_threads = scale.threads;
  opts.layer_sizes = parse_list(sizes);
  auto rows = sharing_ablation(config, parse_list(depths), opts);
  auto os = open_output(output_path(out_dir, "ablation.csv"));
  write_ablation_csv(os, rows);
  write_ablation_csv(out, rows);
  return kExitOk;
}

/// Text session: the agent names the feature it wants, the user answers
/// with a value or `unknown`. End of input forces the stop action.
inline int cmd_interact(const std::string& checkpoint, const std::vector<std::string>& known,
                        std::istream& in, std::ostream& out) {
  Checkpoint ck = load_checkpoint(checkpoint);
  const Policy& policy = ck.policy;
  const std::size_t p = policy.num_features();
  const std::size_t cap = ck.config.max_acquisitions ? ck.config.max_acquisitions : p;
  auto scaled = [&](std::size_t j, double v) {
    if (ck.scaling.empty()) return v;
    const double span = ck.scaling.hi[j] - ck.scaling.lo[j];
    return span > 0.0 ? (v - ck.scaling.lo[j]) / span : 0.0;
  };

  PartialState s = reset(Vector(p, 0.0), Mask(p, 0));
  for (const auto& kv : known) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--known expects feature=value, got '" + kv + "'");
    long long j = 0;
    double v = 0.0;
    if (!detail::parse_long(kv.substr(0, eq), j) || !detail::parse_double(kv.substr(eq + 1), v))
      throw UsageError("cannot parse --known entry '" + kv + "'");
    if (j < 1 || static_cast<std::size_t>(j) > p)
      throw UsageError("--known feature index out of range: " + kv);
    const auto k = static_cast<std::size_t>(j - 1);
    s.x[k] = scaled(k, v);
    s.z[k] = 1;
  }
  Mask available(p, 1);
  std::size_t acquired = 0;
  double cost = 0.0;
  bool input_open = true;
  while (input_open && acquired < cap) {
    const Action a = policy.greedy_action(s, available);
    if (a.is_stop()) break;
    const std::size_t j = a.feature();
    out << "feature " << j + 1 << "? " << std::flush;
    std::string line;
    if (!std::getline(in, line)) {
      out << "\n(end of input: stopping)\n";
      input_open = false;
      break;
    }
    const std::string t{detail::trim(line)};
    if (t == "unknown") {
      available[j] = 0;
      continue;
    }
    double value = 0.0;
    if (!detail::parse_double(t, value) || !std::isfinite(value)) {
      out << "enter a number or 'unknown'\n";
      continue;
    }
    Vector full(p, 0.0);
    full[j] = scaled(j, value);
    StepResult r = step(s, a, full, policy.costs());
    cost += -*r.reward;
    s = std::move(r.next);
    ++acquired;
  }
  Prediction pred = policy.predict(s);
  out << "prediction: class " << pred.label + 1 << '\n' << "probabilities:";
  for (std::size_t k = 0; k < pred.probabilities.size(); ++k)
    out << ' ' << k + 1 << '=' << format_double(pred.probabilities[k]);
  out << '\n'
      << "acquired: " << acquired << '\n'
      << "total cost: " << format_double(cost) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline void add_config_options(CLI::App& cmd, std::string& config_file,
                               std::vector<std::string>& settings) {
  cmd.add_option("--config", config_file, "key = value configuration file");
  cmd.add_option("--set", settings, "override one configuration key (key=value), repeatable");
}

inline TrainConfig build_config(const std::string& config_file,
                                const std::vector<std::string>& settings) {
  TrainConfig config = config_file.empty() ? TrainConfig{} : load_config(config_file);
  for (const auto& kv : settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(config, std::string(detail::trim(kv.substr(0, eq))), std::string(detail::trim(kv.substr(eq + 1))));
  }
  config.validate();
  return config;
}

inline int run_cli(int argc, const char* const* argv, std::istream& in = std::cin,
                   std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cost-aware feature acquisition: train, evaluate and inspect agents"};
  app.require_subcommand(1);
  std::string out_dir = default_out_dir();
  app.add_option("--out-dir", out_dir,
                 std::string("output directory (default: $") + kOutDirEnv + " or .)");

  // gen-cube
  auto* gen = app.add_subcommand("gen-cube", "generate a CUBE dataset CSV and manifest");
  std::size_t gen_p = 20, gen_n = 10000;
  double gen_sigma = 0.1;
  std::uint64_t gen_seed = 1;
  std::string gen_name = "cube";
  gen->add_option("--p", gen_p, "number of features (>= 13)");
  gen->add_option("--sigma", gen_sigma, "noise level of the informative features");
  gen->add_option("--n", gen_n, "sample count (rounded down to a multiple of 8)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--name", gen_name, "output file stem");

  // train
  auto* tr = app.add_subcommand("train", "train an agent and classifier");
  TrainOptions topts;
  std::string tr_encoder;
  std::optional<std::size_t> tr_epochs;
  std::optional<std::uint64_t> tr_seed;
  std::optional<double> tr_cost;
  add_config_options(*tr, topts.config_file, topts.settings);
  topts.data.add_options(*tr, true);
  tr->add_option("--validation", topts.validation_csv, "validation CSV (default: hold out a split)");
  tr->add_option("--validation-fraction", topts.validation_fraction, "held-out fraction");
  tr->add_flag("--scale", topts.scale, "min-max scale features using the training split");
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--cost", tr_cost, "uniform acquisition cost");
  tr->add_option("--encoder", tr_encoder, "set or naive");

  // eval
  auto* ev = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  std::string ev_ck, ev_name = "report.json";
  DataSource ev_data;
  std::size_t ev_threads = 1;
  std::uint64_t ev_seed_unused = 0;
  ev->add_option("--checkpoint", ev_ck, "checkpoint file")->required();
  ev_data.add_options(*ev, true);
  ev->add_option("--threads", ev_threads, "rollout threads");
  ev->add_option("--report", ev_name, "report file name");
  ev->add_option("--seed", ev_seed_unused, "accepted for uniformity; evaluation is deterministic");

  // trace
  auto* tc = app.add_subcommand("trace", "step-by-step trace of one greedy episode");
  std::string tc_ck;
  DataSource tc_data;
  std::size_t tc_sample = 0;
  bool tc_attention = false;
  tc->add_option("--checkpoint", tc_ck, "checkpoint file")->required();
  tc_data.add_options(*tc, true);
  tc->add_option("--sample", tc_sample, "0-based sample index");
  tc->add_flag("--attention", tc_attention, "also dump attention weights at the stop state");

  // sweep
  auto* sw = app.add_subcommand("sweep", "dummy-feature sweep on CUBE for both encoders");
  std::string sw_cfg, sw_dummies = "10,30,50,70,90", sw_encoders = "set,naive";
  std::vector<std::string> sw_settings;
  ExperimentScale sw_scale;
  double sw_sigma = 0.3;
  add_config_options(*sw, sw_cfg, sw_settings);
  sw_scale.add_options(*sw);
  sw->add_option("--sigma", sw_sigma, "CUBE noise level");
  sw->add_option("--dummies", sw_dummies, "comma-separated dummy counts");
  sw->add_option("--encoders", sw_encoders, "comma-separated encoders (set, naive)");

  // ablate-sharing
  auto* ab = app.add_subcommand("ablate-sharing", "shared-depth ablation with the naive encoder");
  std::string ab_cfg, ab_depths = "0,1,2,3", ab_sizes = "50,30,50";
  std::vector<std::string> ab_settings;
  ExperimentScale ab_scale;
  ab_scale.seeds = "1,2,3,4,5";
  std::size_t ab_p = 100;
  double ab_sigma = 0.1;
  add_config_options(*ab, ab_cfg, ab_settings);
  ab_scale.add_options(*ab);
  ab->add_option("--p", ab_p, "CUBE features");
  ab->add_option("--sigma", ab_sigma, "CUBE noise level");
  ab->add_option("--depths", ab_depths, "comma-separated shared depths");
  ab->add_option("--sizes", ab_sizes, "hidden layer sizes split between trunk and heads");

  // interact
  auto* ia = app.add_subcommand("interact", "answer the agent's feature requests on stdin");
  std::string ia_ck;
  std::vector<std::string> ia_known;
  std::uint64_t ia_seed_unused = 0;
  ia->add_option("--checkpoint", ia_ck, "checkpoint file")->required();
  ia->add_option("--known", ia_known, "pre-observed feature, 1-based: j=value (repeatable)");
  ia->add_option("--seed", ia_seed_unused, "accepted for uniformity; the session is deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_cube(gen_p, gen_sigma, gen_n, gen_seed, gen_name, out_dir, out);
    if (tr->parsed()) {
      TrainConfig config =
          topts.config_file.empty() ? TrainConfig{} : load_config(topts.config_file);
      if (tr_epochs) {
        config.epochs = *tr_epochs;
        config.epsilon_decay_epochs =
            std::min(config.epsilon_decay_epochs, std::max<double>(1.0, static_cast<double>(*tr_epochs)));
      }
      if (tr_seed) config.seed = *tr_seed;
      if (tr_cost) config.cost = *tr_cost;
      if (!tr_encoder.empty()) apply_setting(config, "encoder", tr_encoder);
      return cmd_train(config, topts, out_dir, out);
    }
    if (ev->parsed()) return cmd_eval(ev_ck, ev_data, ev_threads, ev_name, out_dir, out);
    if (tc->parsed()) return cmd_trace(tc_ck, tc_data, tc_sample, tc_attention, out_dir, out);
    if (sw->parsed())
      return cmd_sweep(build_config(sw_cfg, sw_settings), sw_scale, sw_sigma, sw_dummies,
                       sw_encoders, out_dir, out);
    if (ab->parsed())
      return cmd_ablate(build_config(ab_cfg, ab_settings), ab_scale, ab_p, ab_sigma, ab_depths,
                        ab_sizes, out_dir, out);
    if (ia->parsed()) return cmd_interact(ia_ck, ia_known, in, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace afa::cli
