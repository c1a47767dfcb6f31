#pragma once

// Minimal deterministic differentiable kernel: dense layers, MLPs, an LSTM
// cell, softmax / weighted cross-entropy, Adam and a finite-difference
// gradient checker. Everything is 64-bit and single-sample; callers batch by
// accumulating gradients across samples before an optimizer step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace afa {

// Aligned storage keeps Eigen's vectorized reductions over mapped buffers
// bit-reproducible from run to run.
using Vector = std::vector<double, Eigen::aligned_allocator<double>>;

/// Input or argument shapes do not line up.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf reached a place where only finite values are legal.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

namespace nn {

inline void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    std::ostringstream os;
    os << what << ": expected length " << want << ", got " << got;
    throw DimensionError(os.str());
  }
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct ParamTensor {
  std::vector<std::size_t> shape;
  Vector values;
  Vector grad;

  ParamTensor() = default;
  explicit ParamTensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    values.assign(n, 0.0);
    grad.assign(n, 0.0);
  }

  std::size_t size() const { return values.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

struct NamedParam {
  std::string name;
  ParamTensor* tensor;
};
using ParamList = std::vector<NamedParam>;

inline void append(ParamList& dst, ParamList src) {
  dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(ParamTensor& t, std::size_t fan_in, std::size_t fan_out,
                           std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values) v = dist(rng);
}

enum class Activation { relu, identity };

/// Column-major batch: one column per sample.
using Matrix = Eigen::MatrixXd;
using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ColumnMap = Eigen::Map<Eigen::VectorXd>;
using ConstColumnMap = Eigen::Map<const Eigen::VectorXd>;

inline Matrix as_column(std::span<const double> v) {
  return ConstColumnMap(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Vector column(const Matrix& m, Eigen::Index j = 0) {
  Vector out(static_cast<std::size_t>(m.rows()));
  ColumnMap(out.data(), m.rows()) = m.col(j);
  return out;
}

/// One-hot-plus-value inputs: column e of the batch is zero except for
/// `value` at row 0 and 1 at row 1 + `index`. Stored sparsely.
struct IndicatorBatch {
  std::vector<std::size_t> index;
  Vector value;
  std::size_t size() const { return index.size(); }
};

struct DenseCache {
  Matrix input;
  IndicatorBatch indicator_input;
  Matrix pre;  // pre-activation
  bool sparse = false;
  bool valid = false;
};

class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act)
      : in_(in), out_(out), act_(act), weight_({out, in}), bias_({out}) {}

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  Activation activation() const { return act_; }
  ParamTensor& weight() { return weight_; }
  ParamTensor& bias() { return bias_; }
  const ParamTensor& weight() const { return weight_; }
  const ParamTensor& bias() const { return bias_; }

  void init(std::mt19937_64& rng) {
    glorot_uniform(weight_, in_, out_, rng);
    std::fill(bias_.values.begin(), bias_.values.end(), 0.0);
  }

  Matrix forward(const Matrix& input, DenseCache* cache = nullptr) const {
    require_dim(static_cast<std::size_t>(input.rows()), in_, "DenseLayer::forward");
    Matrix pre = weights() * input;
    pre.colwise() += biases();
    if (cache) {
      cache->input = input;
      cache->sparse = false;
    }
    return finish(std::move(pre), cache);
  }

  Vector forward(std::span<const double> input, DenseCache* cache = nullptr) const {
    return column(forward(as_column(input), cache));
  }

  /// Same as forward() on the dense expansion of an indicator batch.
  Matrix forward(const IndicatorBatch& input, DenseCache* cache = nullptr) const {
    const auto n = static_cast<Eigen::Index>(input.size());
    auto w = weights();
    Matrix pre(static_cast<Eigen::Index>(out_), n);
    for (Eigen::Index e = 0; e < n; ++e) {
      const auto j = static_cast<Eigen::Index>(input.index[static_cast<std::size_t>(e)]);
      if (static_cast<std::size_t>(j) + 1 >= in_) throw DimensionError("indicator index out of range");
      pre.col(e) = biases() + w.col(0) * input.value[static_cast<std::size_t>(e)] + w.col(1 + j);
    }
    if (cache) {
      cache->indicator_input = input;
      cache->sparse = true;
    }
    return finish(std::move(pre), cache);
  }

  /// Accumulates parameter gradients; returns d(loss)/d(input), or an empty
  /// matrix when `input_grad` is false or the input was an indicator batch.
  Matrix backward(const DenseCache& cache, const Matrix& grad_out, bool input_grad = true) {
    if (!cache.valid) throw ContractViolation("DenseLayer::backward called before forward");
    require_dim(static_cast<std::size_t>(grad_out.rows()), out_, "DenseLayer::backward");
    Matrix delta = grad_out;
    if (act_ == Activation::relu) delta = (cache.pre.array() > 0.0).select(delta, 0.0);
    ColumnMap(bias_.grad.data(), static_cast<Eigen::Index>(out_)) += delta.rowwise().sum();
    RowMajorMap gw(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    if (cache.sparse) {
      for (Eigen::Index e = 0; e < delta.cols(); ++e) {
        const auto k = static_cast<std::size_t>(e);
        gw.col(0) += delta.col(e) * cache.indicator_input.value[k];
        gw.col(1 + static_cast<Eigen::Index>(cache.indicator_input.index[k])) += delta.col(e);
      }
      return {};
    }
    gw.noalias() += delta * cache.input.transpose();
    if (!input_grad) return {};
    return weights().transpose() * delta;
  }

  Vector backward(const DenseCache& cache, std::span<const double> grad_out) {
    return column(backward(cache, as_column(grad_out)));
  }

  ParamList params(const std::string& prefix) {
    return {{prefix + ".weight", &weight_}, {prefix + ".bias", &bias_}};
  }

 private:
  ConstRowMajorMap weights() const {
    return {weight_.values.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_)};
  }
  ConstColumnMap biases() const { return {bias_.values.data(), static_cast<Eigen::Index>(out_)}; }

  Matrix finish(Matrix pre, DenseCache* cache) const {
    Matrix out = act_ == Activation::relu ? Matrix(pre.cwiseMax(0.0)) : pre;
    if (cache) {
      cache->pre = std::move(pre);
      cache->valid = true;
    }
    return out;
  }

  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Activation act_ = Activation::identity;
  ParamTensor weight_;
  ParamTensor bias_;
};

struct MlpCache {
  std::vector<DenseCache> layers;
};

/// Stack of dense layers: ReLU on hidden layers, configurable on the last.
/// An MLP with zero layers is the identity map.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
      Activation output_activation = Activation::identity)
      : in_(in) {
    std::size_t prev = in;
    for (auto h : hidden) {
      layers_.emplace_back(prev, h, Activation::relu);
      prev = h;
    }
    layers_.emplace_back(prev, out, output_activation);
  }

  // Hidden-only stack (every layer ReLU); with no sizes it is the identity.
  static Mlp trunk(std::size_t in, const std::vector<std::size_t>& sizes) {
    Mlp m;
    m.in_ = in;
    std::size_t prev = in;
    for (auto h : sizes) {
      m.layers_.emplace_back(prev, h, Activation::relu);
      prev = h;
    }
    return m;
  }

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return layers_.empty() ? in_ : layers_.back().out_dim(); }
  std::size_t depth() const { return layers_.size(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  void init(std::mt19937_64& rng) {
    for (auto& l : layers_) l.init(rng);
  }

  Matrix forward(const Matrix& input, MlpCache* cache = nullptr) const {
    require_dim(static_cast<std::size_t>(input.rows()), in_, "Mlp::forward");
    if (cache) cache->layers.assign(layers_.size(), {});
    if (layers_.empty()) return input;
    Matrix x = layers_[0].forward(input, cache ? &cache->layers[0] : nullptr);
    return forward_rest(std::move(x), cache);
  }

  Vector forward(std::span<const double> input, MlpCache* cache = nullptr) const {
    return column(forward(as_column(input), cache));
  }

  /// Forward pass whose first layer reads an indicator batch.
  Matrix forward(const IndicatorBatch& input, MlpCache* cache = nullptr) const {
    if (layers_.empty()) throw ContractViolation("indicator input needs at least one layer");
    if (cache) cache->layers.assign(layers_.size(), {});
    Matrix x = layers_[0].forward(input, cache ? &cache->layers[0] : nullptr);
    return forward_rest(std::move(x), cache);
  }

  /// Returns d(loss)/d(input); empty when `input_grad` is false or the
  /// first layer read an indicator batch.
  Matrix backward(const MlpCache& cache, const Matrix& grad_out, bool input_grad = true) {
    if (cache.layers.size() != layers_.size())
      throw ContractViolation("Mlp::backward called before forward");
    Matrix g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;)
      g = layers_[i].backward(cache.layers[i], g, i > 0 || input_grad);
    return g;
  }

  Vector backward(const MlpCache& cache, std::span<const double> grad_out) {
    return column(backward(cache, as_column(grad_out)));
  }

  ParamList params(const std::string& prefix) {
    ParamList out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      append(out, layers_[i].params(prefix + ".l" + std::to_string(i)));
    return out;
  }

 private:
  Matrix forward_rest(Matrix x, MlpCache* cache) const {
    for (std::size_t i = 1; i < layers_.size(); ++i)
      x = layers_[i].forward(x, cache ? &cache->layers[i] : nullptr);
    return x;
  }

  std::size_t in_ = 0;
  std::vector<DenseLayer> layers_;
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LstmCache {
  Matrix input;
  Matrix c_prev;
  Matrix i, f, o, g;  // gate activations
  Matrix tanh_c;
  bool valid = false;

  Matrix hidden() const { return o.cwiseProduct(tanh_c); }
};

/// LSTM cell whose only input is the recurrent vector fed back from the
/// previous step. Gates are stacked [input, forget, output, candidate] in a
/// single (4d x in) weight matrix.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(std::size_t in, std::size_t hidden)
      : in_(in), d_(hidden), weight_({4 * hidden, in}), bias_({4 * hidden}) {}

  std::size_t in_dim() const { return in_; }
  std::size_t hidden_dim() const { return d_; }
  ParamTensor& weight() { return weight_; }
  ParamTensor& bias() { return bias_; }

  void init(std::mt19937_64& rng) {
    glorot_uniform(weight_, in_, 4 * d_, rng);
    std::fill(bias_.values.begin(), bias_.values.end(), 0.0);
  }

  /// Batched step: h_prev is (in x B), c_prev is (d x B). Returns (h, c).
  std::pair<Matrix, Matrix> step(const Matrix& h_prev, const Matrix& c_prev,
                                 LstmCache* cache = nullptr) const {
    require_dim(static_cast<std::size_t>(h_prev.rows()), in_, "LstmCell::step (recurrent input)");
    require_dim(static_cast<std::size_t>(c_prev.rows()), d_, "LstmCell::step (cell state)");
    const auto d = static_cast<Eigen::Index>(d_);
    ConstRowMajorMap w(weight_.values.data(), 4 * d, static_cast<Eigen::Index>(in_));
    Matrix z = w * h_prev;
    z.colwise() += ConstColumnMap(bias_.values.data(), 4 * d);
    auto sig = [](double x) { return sigmoid(x); };
    Matrix i = z.topRows(d).unaryExpr(sig);
    Matrix f = z.middleRows(d, d).unaryExpr(sig);
    Matrix o = z.middleRows(2 * d, d).unaryExpr(sig);
    Matrix g = z.bottomRows(d).array().tanh().matrix();
    Matrix c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    Matrix tc = c.array().tanh().matrix();
    Matrix h = o.cwiseProduct(tc);
    if (cache) {
      cache->input = h_prev;
      cache->c_prev = c_prev;
      cache->i = std::move(i);
      cache->f = std::move(f);
      cache->o = std::move(o);
      cache->g = std::move(g);
      cache->tanh_c = std::move(tc);
      cache->valid = true;
    }
    return {std::move(h), std::move(c)};
  }

  std::pair<Vector, Vector> step(std::span<const double> h_prev, std::span<const double> c_prev,
                                 LstmCache* cache = nullptr) const {
    auto [h, c] = step(as_column(h_prev), as_column(c_prev), cache);
    return {column(h), column(c)};
  }

  /// Returns (d loss / d h_prev, d loss / d c_prev); accumulates parameter grads.
  std::pair<Matrix, Matrix> backward(const LstmCache& cache, const Matrix& dh, const Matrix& dc) {
    if (!cache.valid) throw ContractViolation("LstmCell::backward called before step");
    require_dim(static_cast<std::size_t>(dh.rows()), d_, "LstmCell::backward (dh)");
    require_dim(static_cast<std::size_t>(dc.rows()), d_, "LstmCell::backward (dc)");
    const auto d = static_cast<Eigen::Index>(d_);
    const auto b = dh.cols();
    auto one = [](const Matrix& m) { return (1.0 - m.array()); };
    Eigen::ArrayXXd dct = dc.array() + dh.array() * cache.o.array() * one(cache.tanh_c.cwiseAbs2());
    Matrix dz(4 * d, b);
    dz.topRows(d) = (dct * cache.g.array() * cache.i.array() * one(cache.i)).matrix();
    dz.middleRows(d, d) = (dct * cache.c_prev.array() * cache.f.array() * one(cache.f)).matrix();
    dz.middleRows(2 * d, d) =
        (dh.array() * cache.tanh_c.array() * cache.o.array() * one(cache.o)).matrix();
    dz.bottomRows(d) = (dct * cache.i.array() * one(cache.g.cwiseAbs2())).matrix();
    Matrix dc_prev = (dct * cache.f.array()).matrix();

    ColumnMap(bias_.grad.data(), 4 * d) += dz.rowwise().sum();
    RowMajorMap gw(weight_.grad.data(), 4 * d, static_cast<Eigen::Index>(in_));
    gw.noalias() += dz * cache.input.transpose();
    ConstRowMajorMap w(weight_.values.data(), 4 * d, static_cast<Eigen::Index>(in_));
    Matrix dinput = w.transpose() * dz;
    return {std::move(dinput), std::move(dc_prev)};
  }

  std::pair<Vector, Vector> backward(const LstmCache& cache, std::span<const double> dh,
                                     std::span<const double> dc) {
    auto [a, b] = backward(cache, as_column(dh), as_column(dc));
    return {column(a), column(b)};
  }

  ParamList params(const std::string& prefix) {
    return {{prefix + ".weight", &weight_}, {prefix + ".bias", &bias_}};
  }

 private:
  std::size_t in_ = 0;
  std::size_t d_ = 0;
  ParamTensor weight_;
  ParamTensor bias_;
};

inline Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of an empty vector");
  if (!all_finite(logits)) throw NumericalError("softmax: non-finite logit");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline constexpr double kLogEpsilon = 1e-12;

inline double weighted_cross_entropy(std::span<const double> probs, std::size_t label,
                                     std::span<const double> class_weights) {
  if (label >= probs.size()) throw DimensionError("cross-entropy: label out of range");
  require_dim(class_weights.size(), probs.size(), "cross-entropy class weights");
  return -class_weights[label] * std::log(probs[label] + kLogEpsilon);
}

/// Gradient of weighted_cross_entropy(softmax(logits)) with respect to the
/// logits, given the softmax output.
inline Vector weighted_cross_entropy_grad(std::span<const double> probs, std::size_t label,
                                          std::span<const double> class_weights) {
  if (label >= probs.size()) throw DimensionError("cross-entropy: label out of range");
  const double py = probs[label];
  const double scale = class_weights[label] * py / (py + kLogEpsilon);
  Vector g(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k)
    g[k] = scale * (probs[k] - (k == label ? 1.0 : 0.0));
  return g;
}

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
  std::uint64_t step = 0;
};

/// Adam with bias correction. Moments are sized on the first step and bound
/// to the order of the parameter list; gradients are zeroed after each step.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }

  void step(const ParamList& params) {
    for (auto& p : params) {
      if (!all_finite(p.tensor->grad))
        throw NumericalError("Adam: non-finite gradient in parameter '" + p.name + "' at step " +
                             std::to_string(state_.step + 1));
    }
    if (state_.first_moment.empty() && state_.step == 0) {
      for (auto& p : params) {
        state_.first_moment.emplace_back(p.tensor->size(), 0.0);
        state_.second_moment.emplace_back(p.tensor->size(), 0.0);
      }
    }
    require_dim(state_.first_moment.size(), params.size(), "Adam parameter count");
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      ParamTensor& p = *params[k].tensor;
      Vector& m = state_.first_moment[k];
      Vector& v = state_.second_moment[k];
      require_dim(m.size(), p.size(), "Adam moment size");
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p.values[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
      p.zero_grad();
    }
  }

 private:
  AdamConfig config_;
  AdamState state_;
};

/// Compares analytic gradients against central finite differences for every
/// entry of every listed parameter. `loss` must be a pure function of the
/// parameter values; `compute_grads` must leave d(loss)/d(param) in each
/// tensor's grad (the checker zeroes grads first). Returns the maximum of
/// |a - n| / max(|a|, |n|, floor).
inline double grad_check(const ParamList& params, const std::function<double()>& loss,
                         const std::function<void()>& compute_grads, double h = 1e-5,
                         double floor = 1e-6) {
  for (auto& p : params) p.tensor->zero_grad();
  compute_grads();
  double worst = 0.0;
  for (auto& p : params) {
    ParamTensor& t = *p.tensor;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.values[i];
      t.values[i] = saved + h;
      const double up = loss();
      t.values[i] = saved - h;
      const double down = loss();
      t.values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = t.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  for (auto& p : params) p.tensor->zero_grad();
  return worst;
}

/// Copies parameter values between two structurally identical lists.
inline void copy_values(const ParamList& from, const ParamList& to) {
  require_dim(to.size(), from.size(), "copy_values parameter count");
  for (std::size_t k = 0; k < from.size(); ++k) {
    require_dim(to[k].tensor->size(), from[k].tensor->size(), "copy_values tensor size");
    to[k].tensor->values = from[k].tensor->values;
  }
}

}  // namespace nn
}  // namespace afa
