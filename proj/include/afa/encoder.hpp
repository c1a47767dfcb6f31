#pragma once

// State encoders shared by the Q head and the classifier head.
//
// NaiveEncoder feeds concat(x, z) through a stack of shared ReLU layers
// (possibly none). SetEncoder treats each observed feature j as a set element
// u_j = (x_j, onehot(j)), maps it through a reading MLP to a memory vector
// m_j, then runs an input-free LSTM for a fixed number of attention steps:
//
//   q_t, c_t = lstm(q*_{t-1}, c_{t-1})
//   a        = softmax_j(m_j . q_t)
//   r_t      = sum_j a_j m_j            (zero when nothing is observed)
//   q*_t     = [q_t, r_t]
//
// with q*_0 = 0 and c_0 = 0. The embedding is q*_T. Elements are visited in
// ascending feature order so the result is bit-identical for a given set.

#include <algorithm>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "afa/environment.hpp"
#include "afa/nncore.hpp"

namespace afa {

struct FeatureElement {
  std::size_t index;
  double value;
};

/// u_j = (x_j, I(j)), length p + 1.
inline Vector element_input(const FeatureElement& e, std::size_t num_features) {
  if (e.index >= num_features) throw DimensionError("feature element index out of range");
  Vector u(num_features + 1, 0.0);
  u[0] = e.value;
  u[1 + e.index] = 1.0;
  return u;
}

inline std::vector<FeatureElement> observed_elements(const PartialState& s) {
  std::vector<FeatureElement> out;
  for (std::size_t j = 0; j < s.z.size(); ++j)
    if (s.z[j]) out.push_back({j, s.x[j]});
  return out;
}

/// Non-owning batch of states; column b of every encoder output belongs to
/// states[b].
using StateBatch = std::span<const PartialState* const>;

class NaiveEncoder {
 public:
  NaiveEncoder() = default;
  NaiveEncoder(std::size_t num_features, const std::vector<std::size_t>& shared_layers)
      : p_(num_features), trunk_(nn::Mlp::trunk(2 * num_features, shared_layers)) {}

  std::size_t num_features() const { return p_; }
  std::size_t output_size() const { return trunk_.out_dim(); }
  std::size_t shared_depth() const { return trunk_.depth(); }

  void init(std::mt19937_64& rng) { trunk_.init(rng); }

  static Vector concat_input(const PartialState& s) {
    Vector in(2 * s.num_features());
    for (std::size_t j = 0; j < s.num_features(); ++j) {
      in[j] = s.z[j] ? s.x[j] : 0.0;
      in[s.num_features() + j] = s.z[j] ? 1.0 : 0.0;
    }
    return in;
  }

  nn::Matrix forward(StateBatch states, nn::MlpCache* cache = nullptr) const {
    const auto p = static_cast<Eigen::Index>(p_);
    nn::Matrix in = nn::Matrix::Zero(2 * p, static_cast<Eigen::Index>(states.size()));
    for (std::size_t b = 0; b < states.size(); ++b) {
      const PartialState& s = *states[b];
      nn::require_dim(s.num_features(), p_, "NaiveEncoder input");
      for (Eigen::Index j = 0; j < p; ++j) {
        if (!s.z[static_cast<std::size_t>(j)]) continue;
        in(j, static_cast<Eigen::Index>(b)) = s.x[static_cast<std::size_t>(j)];
        in(p + j, static_cast<Eigen::Index>(b)) = 1.0;
      }
    }
    return trunk_.forward(in, cache);
  }

  Vector forward(const PartialState& s, nn::MlpCache* cache = nullptr) const {
    const PartialState* one[] = {&s};
    return nn::column(forward(StateBatch(one), cache));
  }

  void backward(const nn::MlpCache& cache, const nn::Matrix& grad) {
    trunk_.backward(cache, grad, false);
  }

  void backward(const nn::MlpCache& cache, std::span<const double> grad) {
    backward(cache, nn::as_column(grad));
  }

  nn::ParamList params(const std::string& prefix) { return trunk_.params(prefix + ".trunk"); }

 private:
  std::size_t p_ = 0;
  nn::Mlp trunk_;
};

struct SetEncoderCache {
  nn::IndicatorBatch elements;          // all sets, concatenated
  std::vector<std::size_t> offsets;     // set b owns elements [offsets[b], offsets[b+1])
  nn::MlpCache read;
  nn::Matrix memories;                  // d x elements
  std::vector<nn::LstmCache> steps;
  std::vector<Vector> attention;        // per step, over all elements
};

class SetEncoder {
 public:
  SetEncoder() = default;
  SetEncoder(std::size_t num_features, const std::vector<std::size_t>& reading_hidden,
             std::size_t memory_dim, std::size_t process_steps)
      : p_(num_features),
        d_(memory_dim),
        steps_(process_steps),
        reading_(num_features + 1, reading_hidden, memory_dim),
        process_(2 * memory_dim, memory_dim) {
    if (process_steps == 0) throw ContractViolation("SetEncoder needs at least one process step");
  }

  std::size_t num_features() const { return p_; }
  std::size_t memory_dim() const { return d_; }
  std::size_t process_steps() const { return steps_; }
  std::size_t output_size() const { return 2 * d_; }

  void init(std::mt19937_64& rng) {
    reading_.init(rng);
    process_.init(rng);
  }

  Vector read(const FeatureElement& e, nn::MlpCache* cache = nullptr) const {
    return reading_.forward(element_input(e, p_), cache);
  }

  /// Encodes a batch of sets given as concatenated elements and offsets.
  /// Within a set, elements are read in the order given.
  nn::Matrix encode(nn::IndicatorBatch elements, std::vector<std::size_t> offsets,
                    SetEncoderCache* cache = nullptr) const {
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != elements.size())
      throw ContractViolation("set offsets do not cover the element batch");
    for (auto j : elements.index)
      if (j >= p_) throw DimensionError("feature element index out of range");
    const std::size_t batch = offsets.size() - 1;
    const auto d = static_cast<Eigen::Index>(d_);
    const auto bsz = static_cast<Eigen::Index>(batch);
    nn::Matrix mem = elements.size() ? reading_.forward(elements, cache ? &cache->read : nullptr)
                                     : nn::Matrix(d, 0);
    if (cache) {
      cache->steps.assign(steps_, {});
      cache->attention.assign(steps_, Vector(elements.size()));
    }
    nn::Matrix qstar = nn::Matrix::Zero(2 * d, bsz);
    nn::Matrix c = nn::Matrix::Zero(d, bsz);
    for (std::size_t t = 0; t < steps_; ++t) {
      auto [q, c_next] = process_.step(qstar, c, cache ? &cache->steps[t] : nullptr);
      c = std::move(c_next);
      nn::Matrix r = nn::Matrix::Zero(d, bsz);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto off = static_cast<Eigen::Index>(offsets[b]);
        const auto n = static_cast<Eigen::Index>(offsets[b + 1] - offsets[b]);
        if (n == 0) continue;
        auto block = mem.middleCols(off, n);
        Eigen::VectorXd a = attend(block, q.col(static_cast<Eigen::Index>(b)));
        r.col(static_cast<Eigen::Index>(b)).noalias() = block * a;
        if (cache) nn::ColumnMap(cache->attention[t].data() + off, n) = a;
      }
      qstar.topRows(d) = q;
      qstar.bottomRows(d) = r;
    }
    if (cache) {
      cache->elements = std::move(elements);
      cache->offsets = std::move(offsets);
      cache->memories = std::move(mem);
    }
    return qstar;
  }

  /// Encodes the elements in the order given. Use forward() for the
  /// canonical ascending order.
  Vector encode_elements(std::span<const FeatureElement> elements,
                         SetEncoderCache* cache = nullptr) const {
    nn::IndicatorBatch batch;
    for (auto& e : elements) {
      batch.index.push_back(e.index);
      batch.value.push_back(e.value);
    }
    return nn::column(encode(std::move(batch), {0, elements.size()}, cache));
  }

  /// Encodes in ascending feature order whatever order the elements arrive
  /// in, so equal sets give bit-identical embeddings.
  Vector encode_canonical(std::span<const FeatureElement> elements,
                          SetEncoderCache* cache = nullptr) const {
    std::vector<FeatureElement> sorted(elements.begin(), elements.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });
    for (std::size_t k = 1; k < sorted.size(); ++k)
      if (sorted[k].index == sorted[k - 1].index) throw ContractViolation("duplicate set element");
    return encode_elements(sorted, cache);
  }

  nn::Matrix forward(StateBatch states, SetEncoderCache* cache = nullptr) const {
    nn::IndicatorBatch batch;
    std::vector<std::size_t> offsets{0};
    for (const PartialState* s : states) {
      nn::require_dim(s->num_features(), p_, "SetEncoder input");
      for (std::size_t j = 0; j < p_; ++j) {
        if (!s->z[j]) continue;
        batch.index.push_back(j);
        batch.value.push_back(s->x[j]);
      }
      offsets.push_back(batch.size());
    }
    return encode(std::move(batch), std::move(offsets), cache);
  }

  Vector forward(const PartialState& s, SetEncoderCache* cache = nullptr) const {
    const PartialState* one[] = {&s};
    return nn::column(forward(StateBatch(one), cache));
  }

  void backward(const SetEncoderCache& cache, const nn::Matrix& grad) {
    nn::require_dim(static_cast<std::size_t>(grad.rows()), 2 * d_, "SetEncoder::backward");
    if (cache.steps.size() != steps_ || cache.offsets.size() != static_cast<std::size_t>(grad.cols()) + 1)
      throw ContractViolation("SetEncoder::backward before forward");
    const auto d = static_cast<Eigen::Index>(d_);
    const std::size_t batch = cache.offsets.size() - 1;
    nn::Matrix dmem = nn::Matrix::Zero(d, cache.memories.cols());
    nn::Matrix dqstar = grad;
    nn::Matrix dc = nn::Matrix::Zero(d, grad.cols());
    for (std::size_t t = steps_; t-- > 0;) {
      const nn::LstmCache& lc = cache.steps[t];
      nn::Matrix dq = dqstar.topRows(d);
      const nn::Matrix q = lc.hidden();
      for (std::size_t b = 0; b < batch; ++b) {
        const auto off = static_cast<Eigen::Index>(cache.offsets[b]);
        const auto n = static_cast<Eigen::Index>(cache.offsets[b + 1] - cache.offsets[b]);
        if (n == 0) continue;
        const auto col = static_cast<Eigen::Index>(b);
        auto block = cache.memories.middleCols(off, n);
        nn::ConstColumnMap a(cache.attention[t].data() + off, n);
        auto dr = dqstar.col(col).tail(d);
        Eigen::VectorXd da = block.transpose() * dr;
        Eigen::VectorXd de = a.cwiseProduct((da.array() - a.dot(da)).matrix());
        dmem.middleCols(off, n).noalias() += dr * a.transpose() + q.col(col) * de.transpose();
        dq.col(col).noalias() += block * de;
      }
      auto [dprev, dcprev] = process_.backward(lc, dq, dc);
      dqstar = std::move(dprev);
      dc = std::move(dcprev);
    }
    if (dmem.cols() > 0) reading_.backward(cache.read, dmem, false);
  }

  void backward(const SetEncoderCache& cache, std::span<const double> grad) {
    backward(cache, nn::as_column(grad));
  }

  /// Attention distributions over the observed features (ascending order),
  /// one per process step.
  std::vector<Vector> attention_weights(const PartialState& s) const {
    if (s.observed_count() == 0)
      throw ContractViolation("attention weights need at least one observed feature");
    SetEncoderCache cache;
    forward(s, &cache);
    return cache.attention;
  }

  nn::ParamList params(const std::string& prefix) {
    nn::ParamList out = reading_.params(prefix + ".read");
    nn::append(out, process_.params(prefix + ".process"));
    return out;
  }

 private:
  template <typename Block, typename Query>
  static Eigen::VectorXd attend(const Block& memories, const Query& q) {
    Eigen::VectorXd e = memories.transpose() * q;
    if (!e.allFinite()) throw NumericalError("non-finite attention logits");
    e = (e.array() - e.maxCoeff()).exp();
    return e / e.sum();
  }

  std::size_t p_ = 0;
  std::size_t d_ = 0;
  std::size_t steps_ = 0;
  nn::Mlp reading_;
  nn::LstmCell process_;
};

enum class EncoderKind { naive, set };

struct EncoderCache {
  nn::MlpCache naive;
  SetEncoderCache set;
};

/// Value-semantic wrapper over the two encoders.
class StateEncoder {
 public:
  StateEncoder() = default;
  StateEncoder(NaiveEncoder e) : impl_(std::move(e)) {}
  StateEncoder(SetEncoder e) : impl_(std::move(e)) {}

  EncoderKind kind() const {
    return std::holds_alternative<NaiveEncoder>(impl_) ? EncoderKind::naive : EncoderKind::set;
  }
  const NaiveEncoder* naive() const { return std::get_if<NaiveEncoder>(&impl_); }
  const SetEncoder* set() const { return std::get_if<SetEncoder>(&impl_); }

  std::size_t output_size() const {
    return std::visit([](const auto& e) { return e.output_size(); }, impl_);
  }
  std::size_t num_features() const {
    return std::visit([](const auto& e) { return e.num_features(); }, impl_);
  }

  void init(std::mt19937_64& rng) {
    std::visit([&](auto& e) { e.init(rng); }, impl_);
  }

  Vector forward(const PartialState& s, EncoderCache* cache = nullptr) const {
    if (auto* n = std::get_if<NaiveEncoder>(&impl_)) return n->forward(s, cache ? &cache->naive : nullptr);
    return std::get<SetEncoder>(impl_).forward(s, cache ? &cache->set : nullptr);
  }

  nn::Matrix forward(StateBatch states, EncoderCache* cache = nullptr) const {
    if (auto* n = std::get_if<NaiveEncoder>(&impl_))
      return n->forward(states, cache ? &cache->naive : nullptr);
    return std::get<SetEncoder>(impl_).forward(states, cache ? &cache->set : nullptr);
  }

  void backward(const EncoderCache& cache, const nn::Matrix& grad) {
    if (auto* n = std::get_if<NaiveEncoder>(&impl_)) return n->backward(cache.naive, grad);
    std::get<SetEncoder>(impl_).backward(cache.set, grad);
  }

  void backward(const EncoderCache& cache, std::span<const double> grad) {
    backward(cache, nn::as_column(grad));
  }

  nn::ParamList params(const std::string& prefix) {
    return std::visit([&](auto& e) { return e.params(prefix); }, impl_);
  }

 private:
  std::variant<NaiveEncoder, SetEncoder> impl_;
};

}  // namespace afa
