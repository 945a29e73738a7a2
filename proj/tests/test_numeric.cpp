#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sgmpt/adam.hpp"
#include "sgmpt/autograd.hpp"
#include "sgmpt/checkpoint.hpp"
#include "sgmpt/errors.hpp"
#include "sgmpt/grad_check.hpp"
#include "sgmpt/kernels.hpp"
#include "sgmpt/tensor_ops.hpp"
#include "test_util.hpp"

using namespace sgmpt;
using namespace sgmpt::num;
using sgmpt::testing::random_tensor;
using sgmpt::testing::readout;

namespace {

// Naive triple loop, written independently of the library kernels.
Tensor oracle_matmul(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(TensorOps, IdentityTimesXIsX) {
  const Tensor x = random_tensor(4, 3, 1);
  EXPECT_EQ(matmul(Tensor::identity(4), x), x);
}

TEST(TensorOps, ScaleByZeroIsZero) {
  const Tensor x = random_tensor(3, 5, 2);
  EXPECT_EQ(scale(x, 0.0), Tensor(3, 5));
}

TEST(TensorOps, SmallMatmulByHand) {
  // [1 2 3; 4 5 6] * [1; 0; -1] = [-2; -2]
  const Tensor a = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  const Tensor b = Tensor::from_rows({{1}, {0}, {-1}});
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.rows(), 2u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_EQ(c(0, 0), -2.0);
  EXPECT_EQ(c(1, 0), -2.0);
}

TEST(TensorOps, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor(2, 3), Tensor(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(Tensor(2, 3), Tensor(3, 2)), DimensionError);
  EXPECT_THROW(slice_rows(Tensor(2, 3), 1, 2), DimensionError);
}

TEST(TensorOps, TransposedProductsMatchOracle) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Tensor a = random_tensor(5, 4, seed);
    const Tensor b = random_tensor(6, 4, seed + 10);
    const Tensor c = random_tensor(5, 3, seed + 20);
    expect_near(matmul_nt(a, b), oracle_matmul(a, transpose(b)), 1e-12);
    expect_near(matmul_tn(a, c), oracle_matmul(transpose(a), c), 1e-12);
  }
}

TEST(TensorOps, ConcatAndSliceRoundTrip) {
  const Tensor a = random_tensor(2, 3, 4);
  const Tensor b = random_tensor(3, 3, 5);
  const Tensor parts[] = {a, b};
  const Tensor c = concat_rows(parts);
  EXPECT_EQ(slice_rows(c, 0, 2), a);
  EXPECT_EQ(slice_rows(c, 2, 3), b);
}

TEST(Softmax, UniformInputGivesUniformOutput) {
  const Tensor s = softmax(Tensor(1, 7, 3.25));
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 7.0, 1e-15);
}

TEST(Softmax, RowsAreDistributions) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor s = softmax(random_tensor(6, 9, seed, 5.0));
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double sum = 0.0;
      for (double v : s.row_span(r)) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, ColumnAxis) {
  const Tensor s = softmax(random_tensor(4, 3, 9), Axis::Cols);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < 4; ++r) sum += s(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, ZeroLengthAxisIsDimensionError) { EXPECT_THROW(softmax(Tensor(2, 0)), DimensionError); }

TEST(Attention, SingleKeyReturnsValueRow) {
  const Tensor v = random_tensor(1, 4, 3);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Tensor out = scaled_dot_attention(random_tensor(3, 5, seed), random_tensor(1, 5, seed + 7), v);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(r, c), v(0, c), 1e-15);
  }
}

TEST(Attention, MatchesBruteForceOracle) {
  const Tensor q = random_tensor(2, 4, 11);
  const Tensor k = random_tensor(3, 4, 12);
  const Tensor v = random_tensor(3, 5, 13);
  const Tensor out = scaled_dot_attention(q, k, v);
  for (std::size_t i = 0; i < 2; ++i) {
    double w[3];
    double z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < 4; ++d) dot += q(i, d) * k(j, d);
      w[j] = std::exp(dot / 2.0);  // sqrt(4)
      z += w[j];
    }
    for (std::size_t c = 0; c < 5; ++c) {
      double expected = 0.0;
      for (std::size_t j = 0; j < 3; ++j) expected += w[j] / z * v(j, c);
      EXPECT_NEAR(out(i, c), expected, 1e-12);
    }
  }
}

TEST(Attention, OutputIsConvexCombinationOfValues) {
  const Tensor v = random_tensor(4, 3, 21);
  const Tensor out = scaled_dot_attention(random_tensor(5, 6, 22), random_tensor(4, 6, 23), v);
  for (std::size_t c = 0; c < 3; ++c) {
    double lo = v(0, c), hi = v(0, c);
    for (std::size_t j = 1; j < 4; ++j) {
      lo = std::min(lo, v(j, c));
      hi = std::max(hi, v(j, c));
    }
    for (std::size_t r = 0; r < 5; ++r) {
      EXPECT_GE(out(r, c), lo - 1e-12);
      EXPECT_LE(out(r, c), hi + 1e-12);
    }
  }
}

TEST(Attention, MaskBlocksKeys) {
  const Tensor v = Tensor::from_rows({{1, 0}, {0, 1}});
  Tensor allowed(1, 2, 0.0);
  allowed(0, 1) = 1.0;
  const Tensor out = scaled_dot_attention(random_tensor(1, 3, 1), random_tensor(2, 3, 2), v, &allowed);
  EXPECT_NEAR(out(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(out(0, 1), 1.0, 1e-15);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  const Tensor x = random_tensor(3, 8, 5, 4.0);
  const Tensor y = layer_norm(x, Tensor(1, 8, 1.0), Tensor(1, 8, 0.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row_span(r)) mean += v;
    mean /= 8.0;
    for (double v : y.row_span(r)) var += (v - mean) * (v - mean);
    var /= 8.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  ParameterStore store;
  Parameter& p = store.add("p", random_tensor(2, 2, 1));
  const Tensor before = p.value;
  Adam adam({0.1});
  for (int i = 0; i < 5; ++i) {
    store.zero_grad();
    adam.step(store);
  }
  EXPECT_EQ(p.value, before);
}

TEST(Adam, ConstantGradientMovesAgainstItsSign) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::row({0.0, 0.0}));
  Adam adam({0.01});
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 50; ++i) {
    p.grad = Tensor::row({2.0, -0.5});
    adam.step(store);
    EXPECT_LT(p.value[0], prev0);
    EXPECT_GT(p.value[1], prev1);
    prev0 = p.value[0];
    prev1 = p.value[1];
  }
  EXPECT_EQ(adam.steps(), 50);
}

TEST(Adam, SingleStepByHand) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::scalar(0.5));
  Adam adam({0.1, 0.9, 0.999, 1e-8});
  p.grad = Tensor::scalar(1.0);
  adam.step(store);
  // m = 0.1, v = 0.001; mhat = 1, vhat = 1; delta = -0.1 * 1 / (1 + 1e-8)
  const double m = 0.1 * 1.0, v = 0.001 * 1.0;
  const double mhat = m / (1.0 - 0.9), vhat = v / (1.0 - 0.999);
  EXPECT_NEAR(p.value.item(), 0.5 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-15);
}

TEST(Adam, FrozenParameterIsNotUpdated) {
  ParameterStore store;
  Parameter& p = store.add("frozen", Tensor::scalar(1.0), false);
  Adam adam({0.1});
  p.grad = Tensor::scalar(3.0);
  adam.step(store);
  EXPECT_EQ(p.value.item(), 1.0);
}

TEST(GradCheck, QuadraticIsExact) {
  ParameterStore store;
  Parameter& p = store.add("theta", random_tensor(3, 4, 17));
  const LossFunction loss = [&](GradientBuffer* buf) {
    double s = 0.0;
    for (double v : p.value.values()) s += v * v;
    if (buf != nullptr) buf->add(p, scale(p.value, 2.0));
    return s;
  };
  const GradCheckReport r = finite_diff_check(loss, {&p});
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(GradCheck, FrozenParameterExcluded) {
  ParameterStore store;
  Parameter& a = store.add("a", random_tensor(1, 3, 1));
  Parameter& b = store.add("b", random_tensor(1, 3, 2), false);
  const LossFunction loss = [&](GradientBuffer* buf) {
    Tape t;
    Var va = t.parameter(a), vb = t.parameter(b);
    Var y = readout(t, ag::add(t, va, vb));
    if (buf != nullptr) t.backward(y, buf);
    return t.value(y).item();
  };
  const GradCheckReport r = finite_diff_check(loss, {&a, &b});
  ASSERT_EQ(r.blocks.size(), 1u);
  EXPECT_EQ(r.blocks[0].name, "a");
  EXPECT_EQ(r.find("b"), nullptr);
}

TEST(GradCheck, NonFiniteLossIsAnError) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::scalar(1.0));
  const LossFunction loss = [&](GradientBuffer*) { return std::nan(""); };
  EXPECT_THROW(finite_diff_check(loss, {&p}), NumericError);
}

// Every differentiable op against central differences, three seeds each.
class OpGradient : public ::testing::TestWithParam<std::uint64_t> {
 protected:
  void check(const std::function<Var(Tape&, const std::vector<Var>&)>& op,
             const std::vector<std::pair<std::size_t, std::size_t>>& shapes, double scale = 1.0) {
    const std::uint64_t seed = GetParam();
    ParameterStore store;
    std::vector<Parameter*> params;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      params.push_back(&store.add("in" + std::to_string(i),
                                  random_tensor(shapes[i].first, shapes[i].second, seed * 31 + i, scale)));
    }
    const LossFunction loss = [&](GradientBuffer* buf) {
      Tape t;
      std::vector<Var> vars;
      for (Parameter* p : params) vars.push_back(t.parameter(*p));
      Var y = readout(t, op(t, vars));
      if (buf != nullptr) t.backward(y, buf);
      return t.value(y).item();
    };
    const GradCheckReport r = finite_diff_check(loss, params);
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
  }
};

TEST_P(OpGradient, Matmul) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::matmul(t, v[0], v[1]); }, {{3, 4}, {4, 2}});
}
TEST_P(OpGradient, MatmulNT) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::matmul_nt(t, v[0], v[1]); }, {{3, 4}, {5, 4}});
}
TEST_P(OpGradient, AddScaleAddRow) {
  check(
      [](Tape& t, const std::vector<Var>& v) {
        return ag::add_row(t, ag::scale(t, ag::add(t, v[0], v[1]), -1.5), v[2]);
      },
      {{3, 4}, {3, 4}, {1, 4}});
}
TEST_P(OpGradient, ConcatSliceReplace) {
  check(
      [](Tape& t, const std::vector<Var>& v) {
        const Var parts[] = {v[0], v[1]};
        Var c = ag::concat_rows(t, parts);
        return ag::replace_row(t, ag::slice_rows(t, c, 1, 3), 1, v[2]);
      },
      {{2, 3}, {2, 3}, {1, 3}});
}
TEST_P(OpGradient, RepeatAndMeanRows) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::mean_rows(t, ag::add(t, ag::repeat_rows(t, v[0], 3), v[1])); },
        {{1, 4}, {3, 4}});
}
TEST_P(OpGradient, Softmax) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::softmax_rows(t, v[0]); }, {{3, 5}});
}
TEST_P(OpGradient, LayerNorm) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::layer_norm(t, v[0], v[1], v[2]); }, {{3, 6}, {1, 6}, {1, 6}});
}
TEST_P(OpGradient, Gelu) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::gelu(t, v[0]); }, {{3, 4}}, 2.0);
}
TEST_P(OpGradient, GatherRows) {
  check(
      [](Tape& t, const std::vector<Var>& v) {
        const std::size_t rows[] = {2, 0, 2, 3};
        return ag::gather_rows(t, v[0], rows);
      },
      {{4, 3}});
}
TEST_P(OpGradient, Attention) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::scaled_dot_attention(t, v[0], v[1], v[2]); },
        {{2, 4}, {3, 4}, {3, 5}});
}
TEST_P(OpGradient, CrossEntropy) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::cross_entropy(t, v[0], 2); }, {{1, 6}});
}
TEST_P(OpGradient, CosineAlignment) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::cosine_alignment(t, v[0], v[1]); }, {{2, 3}, {2, 3}});
}
TEST_P(OpGradient, RowCosineAlignment) {
  check([](Tape& t, const std::vector<Var>& v) { return ag::row_cosine_alignment(t, v[0], v[1]); }, {{3, 4}, {3, 4}});
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Values(1u, 2u, 3u));

TEST(Tape, TiedLeafAccumulates) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::row({1.0, 2.0}));
  Tape t;
  Var a = t.parameter(p);
  Var y = ag::cosine_alignment(t, ag::add(t, a, a), t.constant(Tensor::row({1.0, 0.0})));
  GradientBuffer buf;
  t.backward(y, &buf);
  ASSERT_NE(buf.find(p), nullptr);
}

TEST(Tape, NonFiniteValueIsNumericError) {
  Tape t;
  Var a = t.constant(Tensor::row({1e308, 1e308}));
  EXPECT_THROW(ag::scale(t, a, 10.0), NumericError);
}

TEST(Determinism, OpsAreBitwiseRepeatable) {
  const Tensor q = random_tensor(4, 8, 1), k = random_tensor(5, 8, 2), v = random_tensor(5, 3, 3);
  EXPECT_EQ(scaled_dot_attention(q, k, v), scaled_dot_attention(q, k, v));
  EXPECT_EQ(layer_norm(q, Tensor(1, 8, 1.0), Tensor(1, 8, 0.5)), layer_norm(q, Tensor(1, 8, 1.0), Tensor(1, 8, 0.5)));
}

TEST(Kernels, SerialAndParallelAreBitwiseEqual) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Tensor a = random_tensor(67, 45, seed), b = random_tensor(45, 39, seed + 1), c = random_tensor(52, 45, seed + 2);
    const Tensor d = random_tensor(67, 30, seed + 3);
    Tensor s, p;
    kernels::serial::matmul(a, b, s);
    kernels::omp::matmul(a, b, p);
    EXPECT_EQ(s, p);
    kernels::serial::matmul_nt(a, c, s);
    kernels::omp::matmul_nt(a, c, p);
    EXPECT_EQ(s, p);
    kernels::serial::matmul_tn(a, d, s);
    kernels::omp::matmul_tn(a, d, p);
    EXPECT_EQ(s, p);
    expect_near(s, oracle_matmul(transpose(a), d), 1e-10);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = sgmpt::testing::scratch_dir("checkpoint");
  ParameterStore a;
  a.add("w", random_tensor(3, 4, 1, 1e-3));
  a.add("b", Tensor::row({0.1, -0.0, 1e-300, 123456789.123}), false);
  save_checkpoint(dir / "x.ckpt", a, {{"note", "hello world"}});
  ParameterStore b;
  b.add("w", Tensor(3, 4));
  b.add("b", Tensor(1, 4), false);
  const TensorFile f = load_checkpoint(dir / "x.ckpt", b);
  EXPECT_EQ(b.at("w").value, a.at("w").value);
  EXPECT_EQ(b.at("b").value, a.at("b").value);
  EXPECT_TRUE(std::signbit(b.at("b").value[1]));
  ASSERT_NE(f.meta_value("note"), nullptr);
  EXPECT_EQ(*f.meta_value("note"), "hello world");
}

TEST(Checkpoint, ShapeMismatchIsFormatError) {
  const auto dir = sgmpt::testing::scratch_dir("checkpoint_bad");
  ParameterStore a;
  a.add("w", random_tensor(3, 4, 1));
  save_checkpoint(dir / "x.ckpt", a);
  ParameterStore b;
  b.add("w", Tensor(4, 3));
  EXPECT_THROW(load_checkpoint(dir / "x.ckpt", b), FormatError);
  ParameterStore c;
  c.add("v", Tensor(3, 4));
  EXPECT_THROW(load_checkpoint(dir / "x.ckpt", c), FormatError);
}

TEST(Checkpoint, HexfloatRoundTrip) {
  for (double v : {0.0, -1.5, 1e-310, 3.141592653589793, -2.5e300}) EXPECT_EQ(parse_double(format_hexfloat(v)), v);
}
