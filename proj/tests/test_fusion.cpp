#include <gtest/gtest.h>

#include <cmath>

#include "sgmpt/errors.hpp"
#include "sgmpt/fusion.hpp"
#include "sgmpt/grad_check.hpp"
#include "sgmpt/tensor_ops.hpp"
#include "sgmpt/training.hpp"
#include "test_util.hpp"

using namespace sgmpt;
using namespace sgmpt::fusion;
using num::Tensor;
using sgmpt::testing::random_tensor;
using sgmpt::testing::tiny_world;

namespace {

FusionConfig flags(bool ws_ts, bool ws_vs, bool ac_ts, bool ac_vs) {
  FusionConfig c;
  c.ws_ts = ws_ts;
  c.ws_vs = ws_vs;
  c.ac_ts = ac_ts;
  c.ac_vs = ac_vs;
  return c;
}

FusionConfig all_off() { return flags(false, false, false, false); }

std::vector<num::Parameter*> trainable(num::ParameterStore& store) {
  std::vector<num::Parameter*> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].trainable) out.push_back(&store[i]);
  }
  return out;
}

// Independent flatten-and-cosine oracle.
double brute_alignment(const Tensor& a, const Tensor& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 2.0 - 2.0 * dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

TEST(WeightedSum, TextExamples) {
  const Tensor h_t = Tensor::row({1, 0});
  const Tensor h_s = Tensor::row({0, 2});
  EXPECT_EQ(weighted_sum_text(h_t, h_s, 0.0), h_t);
  const Tensor out = weighted_sum_text(h_t, h_s, 0.01);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], 0.02);
  EXPECT_THROW(weighted_sum_text(h_t, Tensor::row({1, 2, 3}), 0.1), DimensionError);
}

TEST(WeightedSum, DefaultWeights) {
  const FusionConfig c;
  EXPECT_EQ(c.lambda_s_ts, 0.01);
  EXPECT_EQ(c.lambda_s_vs, 0.01);
  EXPECT_EQ(c.lambda_a_ts, 0.001);
  EXPECT_EQ(c.lambda_a_vs, 0.001);
  EXPECT_TRUE(c.ws_ts && c.ws_vs && c.ac_ts && c.ac_vs);
  EXPECT_FALSE(c.per_row_alignment);
}

TEST(ReplaceRow, Examples) {
  const Tensor text = random_tensor(4, 3, 1);
  EXPECT_EQ(replace_entity_row(text, 1, num::slice_rows(text, 1, 1)), text);
  const Tensor h = Tensor::row({9, 8, 7});
  const Tensor out = replace_entity_row(text, 2, h);
  EXPECT_EQ(num::slice_rows(out, 2, 1), h);
  for (std::size_t r : {0u, 1u, 3u}) EXPECT_EQ(num::slice_rows(out, r, 1), num::slice_rows(text, r, 1));
  EXPECT_EQ(replace_entity_row(text, std::nullopt, h), text);
}

TEST(ExpandStructural, Examples) {
  const Tensor h = Tensor::row({1.5, -2});
  EXPECT_EQ(expand_structural(h, 3), Tensor::from_rows({{1.5, -2}, {1.5, -2}, {1.5, -2}}));
  EXPECT_EQ(expand_structural(h, 1), h);
  EXPECT_THROW(expand_structural(h, 0), ConfigError);
  EXPECT_THROW(expand_structural(h, -2), ConfigError);
  const Tensor r = random_tensor(1, 5, 2);
  EXPECT_NEAR(num::frobenius_norm(expand_structural(r, 4)), 2.0 * num::frobenius_norm(r), 1e-12);
}

TEST(WeightedSum, VisionExamples) {
  const Tensor v = random_tensor(3, 4, 3);
  const Tensor s = expand_structural(random_tensor(1, 4, 4), 3);
  EXPECT_EQ(weighted_sum_vision(v, s, 0.0), v);
  EXPECT_EQ(weighted_sum_vision(Tensor(3, 4), s, 1.0), s);
  EXPECT_THROW(weighted_sum_vision(v, expand_structural(random_tensor(1, 4, 4), 2), 0.1), DimensionError);
}

TEST(Alignment, TextExamples) {
  const Tensor h = Tensor::row({1, 2, -1});
  EXPECT_NEAR(align_loss_text(num::scale(h, 3.5), h), 0.0, 1e-15);
  EXPECT_NEAR(align_loss_text(Tensor::row({1, 0}), Tensor::row({0, 3})), 2.0, 1e-15);
  EXPECT_NEAR(align_loss_text(num::scale(h, -2.0), h), 4.0, 1e-15);
  EXPECT_THROW(align_loss_text(Tensor(1, 3), h), NumericError);
}

TEST(Alignment, VisionExamples) {
  const Tensor s = expand_structural(random_tensor(1, 3, 5), 2);
  EXPECT_NEAR(align_loss_vision(num::scale(s, 0.3), s), 0.0, 1e-15);
  EXPECT_NEAR(align_loss_vision(Tensor::from_rows({{1, 0}, {0, 0}}), Tensor::from_rows({{0, 1}, {0, 1}})), 2.0, 1e-15);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Tensor a = random_tensor(2, 3, seed * 10), b = random_tensor(2, 3, seed * 10 + 1);
    EXPECT_NEAR(align_loss_vision(a, b), brute_alignment(a, b), 1e-14);
  }
  EXPECT_THROW(align_loss_vision(Tensor(2, 3), s), NumericError);
}

TEST(Alignment, PerRowVariant) {
  const Tensor a = random_tensor(3, 4, 6), b = random_tensor(3, 4, 7);
  double mean = 0;
  for (std::size_t r = 0; r < 3; ++r) mean += brute_alignment(num::slice_rows(a, r, 1), num::slice_rows(b, r, 1));
  EXPECT_NEAR(align_loss_vision_rows(a, b), mean / 3.0, 1e-14);
}

TEST(Alignment, RangeAndScaleInvariance) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor a = random_tensor(2, 5, 100 + seed), b = random_tensor(2, 5, 200 + seed);
    const double l = align_loss_vision(a, b);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 4.0);
    const double c = 0.01 + static_cast<double>(seed);
    EXPECT_NEAR(align_loss_vision(num::scale(a, c), b), l, 1e-13);
    EXPECT_NEAR(align_loss_vision(a, num::scale(b, c)), l, 1e-13);
    const Tensor x = num::slice_rows(a, 0, 1), y = num::slice_rows(b, 0, 1);
    const double lt = align_loss_text(x, y);
    EXPECT_GE(lt, 0.0);
    EXPECT_LE(lt, 4.0);
    EXPECT_NEAR(align_loss_text(num::scale(x, c), y), lt, 1e-13);
  }
}

TEST(TotalLoss, Examples) {
  FusionConfig c;
  c.lambda_a_ts = 0.5;
  c.lambda_a_vs = 0.25;
  EXPECT_DOUBLE_EQ(total_alignment_loss(2.0, 4.0, c), 2.0);
  EXPECT_EQ(total_alignment_loss(2.0, 4.0, all_off()), 0.0);
  c.ac_vs = false;
  EXPECT_DOUBLE_EQ(total_alignment_loss(2.0, 4.0, c), 1.0);
  EXPECT_EQ(total_loss(1.25, 0.0), 1.25);
  EXPECT_EQ(total_loss(0.0, 0.0), 0.0);
  EXPECT_THROW(total_loss(std::nan(""), 0.0), NumericError);
}

TEST(FusionConfig, RejectsNegativeOrNonFiniteLambda) {
  FusionConfig c;
  c.lambda_s_vs = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = FusionConfig{};
  c.lambda_a_ts = INFINITY;
  EXPECT_THROW(c.validate(), ConfigError);
}

class FusionOpGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(FusionOpGradient, TapeOpsMatchFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  num::ParameterStore store;
  num::Parameter& text = store.add("text", random_tensor(4, 3, seed));
  num::Parameter& vision = store.add("vision", random_tensor(2, 3, seed + 1));
  num::Parameter& hs = store.add("h_s", random_tensor(1, 3, seed + 2));
  const num::LossFunction loss = [&](num::GradientBuffer* buf) {
    num::Tape t;
    const num::Var vt = t.parameter(text), vv = t.parameter(vision), vs = t.parameter(hs);
    const num::Var ht = num::ag::slice_rows(t, vt, 2, 1);
    const num::Var hts = fusion::weighted_sum_text(t, ht, vs, 0.7);
    const num::Var out_t = fusion::replace_entity_row(t, vt, 2, hts);
    const num::Var exp = fusion::expand_structural(t, vs, 2);
    const num::Var out_v = fusion::weighted_sum_vision(t, vv, exp, 0.3);
    num::Var y = num::ag::add(t, sgmpt::testing::readout(t, out_t), sgmpt::testing::readout(t, out_v));
    y = num::ag::add(t, y, num::ag::cosine_alignment(t, ht, vs));
    y = num::ag::add(t, y, num::ag::cosine_alignment(t, vv, exp));
    y = num::ag::add(t, y, num::ag::row_cosine_alignment(t, vv, exp));
    if (buf != nullptr) t.backward(y, buf);
    return t.value(y).item();
  };
  const num::GradCheckReport r = num::finite_diff_check(loss, {&text, &vision, &hs});
  EXPECT_LT(r.max_relative_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, FusionOpGradient, ::testing::Values(1u, 2u, 3u));

TEST(TotalLoss, GradientIsSumOfParts) {
  // Toy model: L_ce on a linear readout plus a weighted alignment term.
  num::ParameterStore store;
  num::Parameter& w = store.add("w", random_tensor(3, 4, 9));
  const Tensor x = random_tensor(1, 3, 10);
  const Tensor s = random_tensor(1, 4, 11);
  auto part = [&](int which, num::GradientBuffer* buf) {
    num::Tape t;
    const num::Var h = num::ag::matmul(t, t.constant(x), t.parameter(w));
    const num::Var ce = num::ag::cross_entropy(t, h, 1);
    const num::Var al = num::ag::scale(t, num::ag::cosine_alignment(t, h, t.constant(s)), 0.2);
    const num::Var y = which == 0 ? ce : which == 1 ? al : num::ag::add(t, ce, al);
    if (buf != nullptr) t.backward(y, buf);
    return t.value(y).item();
  };
  num::GradientBuffer a, b, both;
  const double la = part(0, &a), lb = part(1, &b), l = part(2, &both);
  EXPECT_NEAR(total_loss(la, lb), l, 1e-15);
  const Tensor sum = num::add(*a.find(w), *b.find(w));
  for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_NEAR((*both.find(w))[i], sum[i], 1e-15);
  const num::GradCheckReport r = num::finite_diff_check([&](num::GradientBuffer* buf) { return part(2, buf); }, {&w});
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(FusionModel, RequiresTableWhenEnabled) {
  auto w = tiny_world(1);
  EXPECT_THROW(FusionModel(mpt::Backbone(w.model), std::nullopt, FusionConfig{}), ConfigError);
  EXPECT_NO_THROW(FusionModel(mpt::Backbone(w.model), std::nullopt, all_off()));
  EXPECT_THROW(FusionModel(mpt::Backbone(w.model), random_tensor(12, 5, 1), FusionConfig{}), DimensionError);
  EXPECT_THROW(FusionModel(mpt::Backbone(w.model), random_tensor(11, 8, 1), FusionConfig{}), DimensionError);
  FusionConfig proj;
  proj.trainable_projection = true;
  FusionModel m(mpt::Backbone(w.model), random_tensor(12, 5, 1), proj);
  EXPECT_EQ(m.params().at("fusion.projection").value.shape(), (std::array<std::size_t, 2>{5, 8}));
}

TEST(FusionModel, AllFlagsOffEqualsBackboneBitwise) {
  auto w = tiny_world(2);
  const FusionModel fm(mpt::Backbone(w.model), random_tensor(12, 8, 2), all_off());
  const mpt::Backbone bare(w.model);
  const auto queries = finetune_queries(w.mkg.train, w.mkg, w.vocab);
  for (std::size_t i = 0; i < 5; ++i) {
    num::GradientBuffer gf, gb;
    const double lf = fm.query_loss(queries[i], w.mkg, &gf);
    const double lb = mpt::backbone_query_loss(bare, queries[i], w.mkg, &gb);
    EXPECT_EQ(lf, lb);
    for (std::size_t p = 0; p < bare.params().size(); ++p) {
      const Tensor* a = gf.find(fm.params()[p]);
      const Tensor* b = gb.find(bare.params()[p]);
      ASSERT_EQ(a == nullptr, b == nullptr);
      if (a != nullptr) {
        EXPECT_EQ(*a, *b) << bare.params()[p].name;
      }
    }
  }
  EXPECT_EQ(fm.scorer(w.mkg, w.vocab)(w.mkg.test[0], eval::Direction::Tail),
            mpt::backbone_scorer(bare, w.mkg, w.vocab)(w.mkg.test[0], eval::Direction::Tail));
}

TEST(FusionModel, TrainingTrajectoryMatchesBackboneWhenOff) {
  auto w = tiny_world(3);
  FusionModel fm(mpt::Backbone(w.model), random_tensor(12, 8, 3), all_off());
  mpt::Backbone bare(w.model);
  const auto queries = finetune_queries(w.mkg.train, w.mkg, w.vocab);
  mpt::StageOptions opts;
  opts.epochs = 2;
  opts.learning_rate = 0.01;
  opts.epoch.batch_size = 8;
  const auto lf = mpt::train_stage(fm.params(), queries, fm.loss_function(w.mkg), opts);
  const auto lb = mpt::train_stage(
      bare.params(), queries,
      [&](const kg::TokenizedQuery& q, num::GradientBuffer* s) { return mpt::backbone_query_loss(bare, q, w.mkg, s); },
      opts);
  EXPECT_EQ(lf, lb);
  for (std::size_t p = 0; p < bare.params().size(); ++p) EXPECT_EQ(fm.params()[p].value, bare.params()[p].value);
}

TEST(FusionModel, FlagOffMatchesZeroLambda) {
  auto w = tiny_world(4);
  const Tensor table = random_tensor(12, 8, 4);
  FusionConfig zero;
  zero.lambda_s_ts = zero.lambda_s_vs = zero.lambda_a_ts = zero.lambda_a_vs = 0.0;
  const FusionModel off(mpt::Backbone(w.model), table, all_off());
  const FusionModel lam0(mpt::Backbone(w.model), table, zero);
  const auto queries = finetune_queries(w.mkg.train, w.mkg, w.vocab);
  for (std::size_t i = 0; i < 4; ++i) {
    num::GradientBuffer ga, gb;
    EXPECT_NEAR(off.query_loss(queries[i], w.mkg, &ga), lam0.query_loss(queries[i], w.mkg, &gb), 1e-14);
    for (std::size_t p = 0; p < off.params().size(); ++p) {
      const Tensor* a = ga.find(off.params()[p]);
      const Tensor* b = gb.find(lam0.params()[p]);
      // Untouched parameters have no buffer entry, i.e. a zero gradient.
      for (std::size_t k = 0; k < off.params()[p].value.size(); ++k) {
        EXPECT_NEAR(a ? (*a)[k] : 0.0, b ? (*b)[k] : 0.0, 1e-14) << off.params()[p].name;
      }
    }
  }
}

TEST(FusionModel, LossTermsAddUp) {
  auto w = tiny_world(5);
  const FusionModel fm(mpt::Backbone(w.model), random_tensor(12, 8, 5), FusionConfig{});
  const auto q = finetune_queries(w.mkg.train, w.mkg, w.vocab).front();
  QueryTerms t;
  const double l = fm.query_loss(q, w.mkg, nullptr, &t);
  EXPECT_EQ(l, t.total);
  EXPECT_GT(t.align_text, 0.0);
  EXPECT_GT(t.align_vision, 0.0);
  EXPECT_NEAR(t.alignment, total_alignment_loss(t.align_text, t.align_vision, fm.config()), 1e-15);
  EXPECT_NEAR(t.total, total_loss(t.cross_entropy, t.alignment), 1e-15);
}

TEST(FusionModel, PretrainQueriesSkipTextPathway) {
  auto w = tiny_world(6);
  const Tensor table = random_tensor(12, 8, 6);
  const auto q = pretrain_queries(w.mkg, w.vocab)[3];
  const FusionModel text_only(mpt::Backbone(w.model), table, flags(true, false, true, false));
  const FusionModel none(mpt::Backbone(w.model), table, all_off());
  QueryTerms t;
  EXPECT_EQ(text_only.query_loss(q, w.mkg, nullptr, &t), none.query_loss(q, w.mkg, nullptr));
  EXPECT_EQ(t.align_text, 0.0);
  const FusionModel vision(mpt::Backbone(w.model), table, flags(false, true, false, true));
  vision.query_loss(q, w.mkg, nullptr, &t);
  EXPECT_GT(t.align_vision, 0.0);
}

TEST(FusionModel, EveryFlagSubsetRuns) {
  auto w = tiny_world(7);
  const Tensor table = random_tensor(12, 8, 7);
  const auto queries = finetune_queries(w.mkg.train, w.mkg, w.vocab);
  std::vector<double> losses;
  for (int mask = 0; mask < 16; ++mask) {
    FusionModel fm(mpt::Backbone(w.model), table, flags(mask & 1, mask & 2, mask & 4, mask & 8));
    mpt::StageOptions opts;
    opts.epochs = 1;
    opts.epoch.batch_size = 16;
    const auto l = mpt::train_stage(fm.params(), std::span(queries).first(16), fm.loss_function(w.mkg), opts);
    ASSERT_EQ(l.size(), 1u);
    EXPECT_TRUE(std::isfinite(l[0]));
    losses.push_back(l[0]);
  }
  // Weighted summation changes the loss; the no-flag row differs from the all-flag row.
  EXPECT_NE(losses[0], losses[15]);
}

TEST(FusionModel, ZeroLearningRateKeepsParameters) {
  auto w = tiny_world(8);
  FusionModel fm(mpt::Backbone(w.model), random_tensor(12, 8, 8), FusionConfig{});
  const auto before = fm.params().snapshot();
  const auto queries = finetune_queries(w.mkg.train, w.mkg, w.vocab);
  mpt::StageOptions opts;
  opts.epochs = 1;
  opts.learning_rate = 0.0;
  const auto a = mpt::train_stage(fm.params(), queries, fm.loss_function(w.mkg), opts);
  EXPECT_EQ(fm.params().snapshot(), before);
  const auto b = mpt::train_stage(fm.params(), queries, fm.loss_function(w.mkg), opts);
  EXPECT_EQ(a, b);
}

TEST(FusionModel, LossDropsOverFiftySteps) {
  kg::SyntheticConfig s;
  s.num_entities = 20;
  s.num_relations = 8;
  s.num_triples = 100;
  s.structure_signal = 1.0;
  s.patches = 2;
  s.patch_dim = 4;
  const kg::MultimodalKG mkg = kg::generate_synthetic_mkg(s, 1);
  const kg::Vocabulary vocab = kg::build_vocabulary(mkg);
  mpt::ModelConfig mc;
  mc.dim = 16;
  mc.heads = 2;
  mc.text_layers = mc.vision_layers = mc.fusion_layers = 1;
  mc.ffn_dim = 32;
  mc = mpt::fit_to_dataset(mc, mkg, vocab);
  FusionModel fm(mpt::Backbone(mc), random_tensor(20, 16, 2), FusionConfig{});
  const auto queries = finetune_queries(mkg.train, mkg, vocab);
  mpt::StageOptions opts;
  opts.epochs = 10;
  opts.learning_rate = 3e-3;
  opts.epoch.batch_size = 16;  // 80 queries -> 5 steps per epoch
  const auto losses = mpt::train_stage(fm.params(), queries, fm.loss_function(mkg), opts);
  ASSERT_EQ(losses.size(), 50u);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(FusionModel, FullLossGradientCheck) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto w = tiny_world(seed, 8, 2);
    FusionConfig cfg;
    // Larger weights so every pathway moves the loss measurably.
    cfg.lambda_s_ts = cfg.lambda_s_vs = 0.5;
    cfg.lambda_a_ts = cfg.lambda_a_vs = 0.3;
    FusionModel fm(mpt::Backbone(w.model), random_tensor(12, 8, seed), cfg);
    const auto q = finetune_queries(w.mkg.train, w.mkg, w.vocab).front();
    const num::GradCheckReport r = num::finite_diff_check(
        [&](num::GradientBuffer* buf) { return fm.query_loss(q, w.mkg, buf); }, trainable(fm.params()));
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(FusionModel, HeadPredictionUnavailable) {
  auto w = tiny_world(9);
  const FusionModel fm(mpt::Backbone(w.model), std::nullopt, all_off());
  EXPECT_THROW(fm.scorer(w.mkg, w.vocab)(w.mkg.test[0], eval::Direction::Head), EvalError);
}

TEST(FusionModel, CheckpointRoundTrip) {
  auto w = tiny_world(10);
  const Tensor table = random_tensor(12, 8, 10);
  FusionModel a(mpt::Backbone(w.model), table, FusionConfig{});
  for (std::size_t i = 0; i < a.params().size(); ++i) a.params()[i].value = random_tensor(
      a.params()[i].value.rows(), a.params()[i].value.cols(), 50 + i);
  const auto dir = sgmpt::testing::scratch_dir("fusion_ckpt");
  save_fusion_model(dir / "m.ckpt", a);
  FusionModel b(mpt::Backbone(w.model), table, FusionConfig{});
  load_fusion_parameters(dir / "m.ckpt", b);
  EXPECT_EQ(a.params().snapshot(), b.params().snapshot());
  auto other = w.model;
  other.ffn_dim = 24;
  FusionModel c(mpt::Backbone(other), table, FusionConfig{});
  EXPECT_THROW(load_fusion_parameters(dir / "m.ckpt", c), FormatError);
}
