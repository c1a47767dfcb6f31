#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "afa/archive.hpp"
#include "afa/nncore.hpp"

using namespace afa;
using namespace afa::nn;

namespace {

double sum(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// Independent scalar Adam, written from the textbook update.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g, double lr = 0.001, double b1 = 0.9, double b2 = 0.999,
              double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST(Softmax, HandComputedValues) {
  const Vector p = softmax(Vector{1.0, 2.0, 3.0});
  EXPECT_NEAR(p[0], 0.0900, 5e-5);
  EXPECT_NEAR(p[1], 0.2447, 5e-5);
  EXPECT_NEAR(p[2], 0.6652, 5e-5);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector z(1 + trial % 9);
    for (auto& v : z) v = n(rng);
    Vector shifted = z;
    for (auto& v : shifted) v += 123.456;
    const Vector a = softmax(z), b = softmax(shifted);
    EXPECT_NEAR(sum(a), 1.0, 1e-9);
    for (std::size_t k = 0; k < z.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-9);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Vector p = softmax(Vector{1000.0, 1000.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
}

TEST(Softmax, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(softmax(Vector{}), DimensionError);
  EXPECT_THROW(softmax(Vector{1.0, NAN}), NumericalError);
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(weighted_cross_entropy(Vector{1.0, 0.0}, 0, Vector{1.0, 1.0}), 0.0, 1e-11);
  EXPECT_NEAR(weighted_cross_entropy(Vector{0.5, 0.5}, 1, Vector{1.0, 2.0}), 2.0 * std::log(2.0),
              1e-11);
  for (std::size_t k : {2u, 5u, 8u}) {
    Vector u(k, 1.0 / static_cast<double>(k)), w(k, 1.0);
    EXPECT_NEAR(weighted_cross_entropy(u, k - 1, w), std::log(static_cast<double>(k)), 1e-11);
  }
}

TEST(CrossEntropy, ConfidentWrongIsClamped) {
  const double l = weighted_cross_entropy(Vector{1.0, 0.0}, 1, Vector{1.0, 1.0});
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, -std::log(kLogEpsilon), 1e-9);
}

TEST(CrossEntropy, LabelOutOfRange) {
  EXPECT_THROW(weighted_cross_entropy(Vector{0.5, 0.5}, 2, Vector{1.0, 1.0}), DimensionError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  const Vector logits{0.3, -1.2, 2.0, 0.1};
  const Vector w{1.0, 2.5, 0.7, 1.3};
  for (std::size_t y = 0; y < 4; ++y) {
    const Vector g = weighted_cross_entropy_grad(softmax(logits), y, w);
    for (std::size_t k = 0; k < 4; ++k) {
      Vector up = logits, down = logits;
      up[k] += 1e-6;
      down[k] -= 1e-6;
      const double num = (weighted_cross_entropy(softmax(up), y, w) -
                          weighted_cross_entropy(softmax(down), y, w)) / 2e-6;
      EXPECT_NEAR(g[k], num, 1e-7);
    }
  }
}

TEST(Dense, ForwardMatchesHandComputation) {
  DenseLayer layer(2, 2, Activation::relu);
  layer.weight().values = {1.0, -2.0, 0.5, 0.25};
  layer.bias().values = {0.1, -3.0};
  const Vector y = layer.forward(Vector{2.0, 1.0});
  EXPECT_DOUBLE_EQ(y[0], 2.0 - 2.0 + 0.1);
  EXPECT_DOUBLE_EQ(y[1], 0.0);  // 1.0 + 0.25 - 3.0 < 0
}

TEST(Dense, IndicatorInputEqualsDenseExpansion) {
  std::mt19937_64 rng(11);
  DenseLayer layer(6, 4, Activation::relu);
  layer.init(rng);
  IndicatorBatch batch{{0, 3, 4}, {0.7, -1.5, 0.0}};
  Matrix dense = Matrix::Zero(6, 3);
  for (std::size_t e = 0; e < 3; ++e) {
    dense(0, static_cast<Eigen::Index>(e)) = batch.value[e];
    dense(1 + static_cast<Eigen::Index>(batch.index[e]), static_cast<Eigen::Index>(e)) = 1.0;
  }
  DenseCache ca, cb;
  const Matrix a = layer.forward(batch, &ca);
  const Matrix b = layer.forward(dense, &cb);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);

  const Matrix g = Matrix::Ones(4, 3);
  layer.backward(ca, g);
  const Vector ga = layer.weight().grad;
  layer.weight().zero_grad();
  layer.bias().zero_grad();
  layer.backward(cb, g);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], layer.weight().grad[i], 1e-13);
}

TEST(Dense, DimensionMismatch) {
  DenseLayer layer(3, 2, Activation::identity);
  EXPECT_THROW(layer.forward(Vector{1.0, 2.0}), DimensionError);
}

TEST(GradCheck, IdentityLayerSquaredLoss) {
  std::mt19937_64 rng(1);
  DenseLayer layer(3, 2, Activation::identity);
  layer.init(rng);
  const Vector x{0.4, -0.7, 1.1};
  const Vector target{0.2, -0.3};
  auto loss = [&] {
    const Vector y = layer.forward(x);
    return (y[0] - target[0]) * (y[0] - target[0]) + (y[1] - target[1]) * (y[1] - target[1]);
  };
  auto grads = [&] {
    DenseCache c;
    const Vector y = layer.forward(x, &c);
    layer.backward(c, Vector{2 * (y[0] - target[0]), 2 * (y[1] - target[1])});
  };
  EXPECT_LT(grad_check(layer.params("l"), loss, grads), 1e-7);
}

TEST(GradCheck, TwoLayerReluMlpCrossEntropy) {
  std::mt19937_64 rng(2);
  Mlp mlp(5, {7}, 3);
  mlp.init(rng);
  Matrix x(5, 4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const std::size_t labels[] = {0, 2, 1, 2};
  const Vector w{1.0, 2.0, 0.5};
  auto loss = [&] {
    const Matrix logits = mlp.forward(x);
    double l = 0;
    for (Eigen::Index b = 0; b < 4; ++b)
      l += weighted_cross_entropy(softmax(column(logits, b)), labels[b], w);
    return l;
  };
  auto grads = [&] {
    MlpCache c;
    const Matrix logits = mlp.forward(x, &c);
    Matrix g(3, 4);
    for (Eigen::Index b = 0; b < 4; ++b) {
      const Vector gb = weighted_cross_entropy_grad(softmax(column(logits, b)), labels[b], w);
      g.col(b) = ConstColumnMap(gb.data(), 3);
    }
    mlp.backward(c, g);
  };
  EXPECT_LT(grad_check(mlp.params("m"), loss, grads), 1e-4);
}

TEST(GradCheck, MlpInputGradient) {
  std::mt19937_64 rng(4);
  Mlp mlp(3, {6, 4}, 2);
  mlp.init(rng);
  Vector x{0.3, -0.2, 0.9};
  MlpCache c;
  mlp.forward(x, &c);
  const Vector dx = mlp.backward(c, Vector{1.0, -0.5});
  for (std::size_t i = 0; i < 3; ++i) {
    Vector up = x, down = x;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const Vector yu = mlp.forward(up), yd = mlp.forward(down);
    const double num = ((yu[0] - 0.5 * yu[1]) - (yd[0] - 0.5 * yd[1])) / 2e-6;
    EXPECT_NEAR(dx[i], num, 1e-6);
  }
}

TEST(GradCheck, LstmUnrolled) {
  std::mt19937_64 rng(5);
  LstmCell cell(4, 2);
  cell.init(rng);
  // Feed [h, h] back as the next input, as the process block does.
  auto run = [&](std::vector<LstmCache>* caches) {
    Matrix in = Matrix::Constant(4, 1, 0.3);
    Matrix c = Matrix::Zero(2, 1);
    Matrix h;
    for (int t = 0; t < 3; ++t) {
      auto [hn, cn] = cell.step(in, c, caches ? &(*caches)[static_cast<std::size_t>(t)] : nullptr);
      h = hn;
      c = cn;
      in.topRows(2) = h;
      in.bottomRows(2) = 0.5 * h;
    }
    return h;
  };
  auto loss = [&] {
    const Matrix h = run(nullptr);
    return h(0, 0) + 2.0 * h(1, 0);
  };
  auto grads = [&] {
    std::vector<LstmCache> caches(3);
    run(&caches);
    Matrix dh(2, 1);
    dh << 1.0, 2.0;
    Matrix dc = Matrix::Zero(2, 1);
    for (int t = 2; t >= 0; --t) {
      auto [din, dcp] = cell.backward(caches[static_cast<std::size_t>(t)], dh, dc);
      dh = din.topRows(2) + 0.5 * din.bottomRows(2);
      dc = dcp;
    }
  };
  EXPECT_LT(grad_check(cell.params("lstm"), loss, grads), 1e-4);
}

TEST(Adam, ZeroGradientIsIdentity) {
  ParamTensor t({3});
  t.values = {0.1, -0.2, 0.3};
  Adam opt;
  for (int i = 0; i < 5; ++i) opt.step({{"t", &t}});
  EXPECT_EQ(t.values, (Vector{0.1, -0.2, 0.3}));
}

TEST(Adam, FirstStepWithUnitGradient) {
  ParamTensor t({1});
  t.grad = {1.0};
  Adam opt;
  opt.step({{"t", &t}});
  EXPECT_NEAR(t.values[0], -0.001, 1e-10);
  EXPECT_EQ(t.grad[0], 0.0);
}

TEST(Adam, MatchesScalarOracleOverManySteps) {
  ParamTensor t({1});
  t.values = {0.5};
  Adam opt;
  ScalarAdam oracle;
  double theta = 0.5;
  const double grads[] = {1.0, 1.0, -0.3, 2.0, 0.0, 0.7};
  for (double g : grads) {
    t.grad = {g};
    opt.step({{"t", &t}});
    theta = oracle.step(theta, g);
    EXPECT_NEAR(t.values[0], theta, 1e-15);
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamTensor t({2});
  t.grad = {0.0, INFINITY};
  Adam opt;
  try {
    opt.step({{"head.weight", &t}});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos);
  }
}

TEST(Determinism, ForwardIsRepeatable) {
  std::mt19937_64 a(9), b(9);
  Mlp m1(4, {8, 8}, 3), m2(4, {8, 8}, 3);
  m1.init(a);
  m2.init(b);
  const Vector x{0.1, 0.2, -0.3, 0.4};
  EXPECT_EQ(m1.forward(x), m2.forward(x));
  EXPECT_EQ(m1.forward(x), m1.forward(x));
}

TEST(Init, GlorotBounds) {
  std::mt19937_64 rng(1);
  ParamTensor t({30, 20});
  glorot_uniform(t, 20, 30, rng);
  const double limit = std::sqrt(6.0 / 50.0);
  double lo = 1, hi = -1;
  for (double v : t.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, -limit);
  EXPECT_LE(hi, limit);
  EXPECT_LT(lo, -0.8 * limit);
  EXPECT_GT(hi, 0.8 * limit);
}

TEST(Archive, RoundTripIsBitExact) {
  Archive ar;
  ar.add_meta("k", "v w");
  ParamTensor t({2, 3});
  t.values = {0.1, -0.0, 1e-300, 3.141592653589793, -7.5, 1e300};
  ar.add_tensor("t", t);
  std::stringstream ss;
  write_archive(ss, ar);
  const Archive back = read_archive(ss);
  EXPECT_EQ(back.require_meta("k"), "v w");
  const auto& bt = back.require_tensor("t");
  ASSERT_EQ(bt.values.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(bt.values[i]), std::bit_cast<std::uint64_t>(t.values[i]));
}

TEST(Archive, TruncatedInputFails) {
  Archive ar;
  ParamTensor t({4});
  ar.add_tensor("t", t);
  std::stringstream ss;
  write_archive(ss, ar);
  std::string s = ss.str();
  s.resize(s.size() - 5);
  std::stringstream cut(s);
  EXPECT_THROW(read_archive(cut), ArchiveError);
}
