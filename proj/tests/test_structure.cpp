#include <gtest/gtest.h>

#include <fstream>

#include <cmath>
#include <numbers>

#include "sgmpt/errors.hpp"
#include "sgmpt/kernels.hpp"
#include "sgmpt/structure_encoder.hpp"
#include "sgmpt/synthetic.hpp"
#include "test_util.hpp"

using namespace sgmpt;
using namespace sgmpt::kge;

namespace {

void set_row(StructureModel& m, const std::string& name, std::size_t row, std::initializer_list<double> v) {
  auto& p = m.params().at(name).value;
  std::size_t c = 0;
  for (double x : v) p(row, c++) = x;
}

std::vector<Triple> line_triples(std::size_t n, std::size_t r, std::size_t count, std::uint64_t seed) {
  kg::SyntheticConfig cfg;
  cfg.num_entities = n;
  cfg.num_relations = r;
  cfg.num_triples = count;
  cfg.structure_signal = 1.0;
  return generate_synthetic_mkg(cfg, seed).train;
}

}  // namespace

TEST(StructureScore, TransEByHand) {
  StructureModel m(ModelKind::TransE, 2, 1, 2, 0.5, 1.0, 1);
  set_row(m, "entity", 0, {1.0, 0.0});
  set_row(m, "entity", 1, {0.0, 1.0});
  set_row(m, "relation", 0, {-1.0, 1.0});
  EXPECT_DOUBLE_EQ(m.score(EntityId(0), RelationId(0), EntityId(1)), 0.0);
  // h + r - t with h = t = e1: (-1, 1), norm sqrt(2).
  EXPECT_DOUBLE_EQ(m.score(EntityId(1), RelationId(0), EntityId(1)), -std::sqrt(2.0));
}

TEST(StructureScore, DistMultByHandAndSymmetric) {
  StructureModel m(ModelKind::DistMult, 3, 2, 4, 0.5, 1.0, 2);
  set_row(m, "entity", 0, {1, 2, 3, 4});
  set_row(m, "entity", 1, {0.5, -1, 2, 1});
  set_row(m, "relation", 0, {1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(m.score(EntityId(0), RelationId(0), EntityId(1)), 0.5 - 2 + 6 + 4);
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t r = 0; r < 2; ++r)
        EXPECT_EQ(m.score(EntityId(h), RelationId(r), EntityId(t)), m.score(EntityId(t), RelationId(r), EntityId(h)));
}

TEST(StructureScore, HakeByHand) {
  StructureModel m(ModelKind::HAKE, 2, 1, 1, 0.5, 1.0, 3);
  set_row(m, "entity_modulus", 0, {2.0});
  set_row(m, "entity_modulus", 1, {3.0});
  set_row(m, "relation_modulus", 0, {2.0});
  set_row(m, "entity_phase", 0, {0.0});
  set_row(m, "entity_phase", 1, {0.0});
  set_row(m, "relation_phase", 0, {std::numbers::pi});
  // |2*2 - 3| + 0.5 * |sin(pi/2)| = 1.5
  EXPECT_NEAR(m.score(EntityId(0), RelationId(0), EntityId(1)), -1.5, 1e-15);
}

TEST(StructureScore, HakePhaseIsTwoPiPeriodic) {
  StructureModel m(ModelKind::HAKE, 4, 2, 6, 0.5, 1.0, 4);
  const double before = m.score(EntityId(1), RelationId(1), EntityId(2));
  auto& phase = m.params().at("relation_phase").value;
  for (std::size_t c = 0; c < phase.cols(); ++c) phase(1, c) += 2.0 * std::numbers::pi;
  EXPECT_NEAR(m.score(EntityId(1), RelationId(1), EntityId(2)), before, 1e-12);
}

TEST(StructureScore, TailsAndHeadsMatchPointScores) {
  for (ModelKind kind : {ModelKind::TransE, ModelKind::DistMult, ModelKind::HAKE}) {
    StructureModel m(kind, 7, 3, 5, 0.5, 1.0, 5);
    const auto tails = m.score_tails(EntityId(2), RelationId(1));
    const auto heads = m.score_heads(RelationId(1), EntityId(4));
    for (std::size_t e = 0; e < 7; ++e) {
      EXPECT_DOUBLE_EQ(tails[e], m.score(EntityId(2), RelationId(1), EntityId(e)));
      EXPECT_DOUBLE_EQ(heads[e], m.score(EntityId(e), RelationId(1), EntityId(4)));
    }
  }
}

class ScoreGradient : public ::testing::TestWithParam<std::tuple<ModelKind, std::uint64_t>> {};

TEST_P(ScoreGradient, MatchesCentralDifferences) {
  const auto [kind, seed] = GetParam();
  StructureModel m(kind, 5, 3, 4, 0.5, 1.0, seed);
  const EntityId h(1), t(3);
  const RelationId r(2);
  const TripleGradient g = m.score_gradient(h, r, t);
  const bool hake = kind == ModelKind::HAKE;
  const std::string ent[2] = {hake ? "entity_modulus" : "entity", "entity_phase"};
  const std::string rel[2] = {hake ? "relation_modulus" : "relation", "relation_phase"};
  const double eps = 1e-6;
  auto numeric = [&](const std::string& name, std::size_t row, std::size_t c) {
    double& x = m.params().at(name).value(row, c);
    const double x0 = x;
    x = x0 + eps;
    const double up = m.score(h, r, t);
    x = x0 - eps;
    const double down = m.score(h, r, t);
    x = x0;
    return (up - down) / (2 * eps);
  };
  for (int b = 0; b < (hake ? 2 : 1); ++b) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(g.head[b][c], numeric(ent[b], 1, c), 1e-6) << b << "," << c;
      EXPECT_NEAR(g.tail[b][c], numeric(ent[b], 3, c), 1e-6) << b << "," << c;
      EXPECT_NEAR(g.relation[b][c], numeric(rel[b], 2, c), 1e-6) << b << "," << c;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllModels, ScoreGradient,
                         ::testing::Combine(::testing::Values(ModelKind::TransE, ModelKind::DistMult, ModelKind::HAKE),
                                            ::testing::Values(1u, 2u, 3u)));

TEST(StructureScore, AccumulateGradientScalesScoreGradient) {
  StructureModel m(ModelKind::TransE, 4, 2, 3, 0.5, 1.0, 6);
  m.params().zero_grad();
  m.accumulate_gradient(EntityId(0), RelationId(1), EntityId(2), -0.5);
  const TripleGradient g = m.score_gradient(EntityId(0), RelationId(1), EntityId(2));
  const auto& eg = m.params().at("entity").grad;
  const auto& rg = m.params().at("relation").grad;
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(eg(0, c), -0.5 * g.head[0][c]);
    EXPECT_DOUBLE_EQ(eg(2, c), -0.5 * g.tail[0][c]);
    EXPECT_DOUBLE_EQ(rg(1, c), -0.5 * g.relation[0][c]);
    EXPECT_EQ(eg(1, c), 0.0);
  }
}

TEST(StructureTraining, ZeroLearningRateKeepsInitialisation) {
  const auto train = line_triples(20, 3, 50, 1);
  StructureEncoderConfig cfg;
  cfg.kind = ModelKind::TransE;
  cfg.dim = 8;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  cfg.seed = 9;
  const TrainResult res = train_structure_encoder(train, 20, 3, cfg);
  const StructureModel init(ModelKind::TransE, 20, 3, 8, cfg.phase_weight, cfg.margin, cfg.seed);
  EXPECT_EQ(res.table.matrix, init.entity_table());
}

TEST(StructureTraining, DeterministicGivenSeed) {
  const auto train = line_triples(30, 4, 100, 2);
  StructureEncoderConfig cfg;
  cfg.dim = 6;
  cfg.epochs = 5;
  cfg.seed = 4;
  const TrainResult a = train_structure_encoder(train, 30, 4, cfg);
  const TrainResult b = train_structure_encoder(train, 30, 4, cfg);
  EXPECT_EQ(a.table.matrix, b.table.matrix);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  cfg.seed = 5;
  EXPECT_NE(train_structure_encoder(train, 30, 4, cfg).table.matrix, a.table.matrix);
}

TEST(StructureTraining, LossTrendsDown) {
  const auto train = line_triples(40, 4, 140, 3);
  for (ModelKind kind : {ModelKind::TransE, ModelKind::DistMult, ModelKind::HAKE}) {
    StructureEncoderConfig cfg;
    cfg.kind = kind;
    cfg.dim = 8;
    cfg.epochs = 30;
    const TrainResult res = train_structure_encoder(train, 40, 4, cfg);
    ASSERT_EQ(res.epoch_losses.size(), 30u);
    EXPECT_LT(res.epoch_losses.back(), res.epoch_losses.front()) << to_string(kind);
  }
}

TEST(StructureTraining, EmptyTrainIsTrainingError) {
  StructureEncoderConfig cfg;
  EXPECT_THROW(train_structure_encoder({}, 3, 1, cfg), TrainingError);
}

TEST(StructureConfig, KindParsingAndValidation) {
  EXPECT_EQ(parse_model_kind("TransE"), ModelKind::TransE);
  EXPECT_EQ(parse_model_kind(to_string(ModelKind::HAKE)), ModelKind::HAKE);
  EXPECT_THROW(parse_model_kind("RotatE"), ConfigError);
  StructureEncoderConfig cfg;
  cfg.margin = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  StructureEncoderConfig a, b;
  EXPECT_EQ(a.hash(), b.hash());
  b.dim = 7;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Projection, IdentityWhenDimsMatch) {
  StructuralEmbeddingTable t;
  t.matrix = sgmpt::testing::random_tensor(5, 4, 1);
  t.raw_dim = 4;
  const auto p = project_to_dim(t, 4, 3);
  EXPECT_EQ(p.matrix, t.matrix);
  EXPECT_EQ(p.projection.size(), 0u);
}

TEST(Projection, UpProjectionPreservesGram) {
  StructuralEmbeddingTable t;
  t.matrix = sgmpt::testing::random_tensor(6, 3, 2);
  t.raw_dim = 3;
  const auto p = project_to_dim(t, 8, 5);
  ASSERT_EQ(p.matrix.cols(), 8u);
  EXPECT_LT(p.gram_deviation, 1e-12);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      double a = 0, b = 0;
      for (std::size_t c = 0; c < 3; ++c) a += t.matrix(i, c) * t.matrix(j, c);
      for (std::size_t c = 0; c < 8; ++c) b += p.matrix(i, c) * p.matrix(j, c);
      EXPECT_NEAR(a, b, 1e-12);
    }
  }
}

TEST(Projection, OrthonormalRows) {
  const num::Tensor w = orthonormal_projection(4, 9, 11);
  ASSERT_EQ(w.rows(), 4u);
  ASSERT_EQ(w.cols(), 9u);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double d = 0;
      for (std::size_t c = 0; c < 9; ++c) d += w(i, c) * w(j, c);
      EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(Projection, HakeTableProjectsBothBlocks) {
  const auto train = line_triples(15, 2, 25, 4);
  StructureEncoderConfig cfg;
  cfg.dim = 5;
  cfg.epochs = 1;
  const TrainResult res = train_structure_encoder(train, 15, 2, cfg);
  EXPECT_EQ(res.table.cols(), 10u);
  const auto p = project_to_dim(res.table, 16, 1);
  EXPECT_EQ(p.rows(), 15u);
  EXPECT_EQ(p.cols(), 16u);
  EXPECT_EQ(p.projection.rows(), 10u);
}

TEST(TableFile, RoundTripAndExpectations) {
  const auto dir = sgmpt::testing::scratch_dir("structure_table");
  const auto train = line_triples(12, 2, 20, 5);
  StructureEncoderConfig cfg;
  cfg.kind = ModelKind::HAKE;
  cfg.dim = 3;
  cfg.epochs = 2;
  const TrainResult res = train_structure_encoder(train, 12, 2, cfg);
  const auto projected = project_to_dim(res.table, 8, 2);
  export_table(dir / "t.table", projected);
  const auto back = import_table(dir / "t.table");
  EXPECT_EQ(back.matrix, projected.matrix);
  EXPECT_EQ(back.projection, projected.projection);
  EXPECT_EQ(back.raw_dim, projected.raw_dim);
  EXPECT_EQ(back.cfg_hash, projected.cfg_hash);

  // Rebuilt scorer reproduces the trained model's scores.
  const StructureModel rebuilt = model_from_table(back, cfg.phase_weight);
  const StructureModel original = model_from_table(res.table, cfg.phase_weight);
  EXPECT_EQ(rebuilt.score_tails(EntityId(0), RelationId(1)), original.score_tails(EntityId(0), RelationId(1)));

  EXPECT_THROW(import_table(dir / "t.table", {.rows = 13}), FormatError);
  EXPECT_THROW(import_table(dir / "t.table", {.cols = 7}), FormatError);
  std::vector<std::string> warnings;
  EXPECT_NO_THROW(import_table(dir / "t.table", {.rows = 12, .cols = 8, .cfg_hash = "different"}, &warnings));
  EXPECT_EQ(warnings.size(), 1u);
  std::ofstream(dir / "junk.table") << "not a table\n";
  EXPECT_THROW(import_table(dir / "junk.table"), FormatError);
}

TEST(StructureScorer, RanksMatchModel) {
  StructureModel m(ModelKind::DistMult, 6, 2, 3, 0.5, 1.0, 8);
  const eval::Scorer s = make_scorer(m);
  const Triple q{EntityId(1), RelationId(0), EntityId(2)};
  EXPECT_EQ(s(q, eval::Direction::Tail), m.score_tails(EntityId(1), RelationId(0)));
  EXPECT_EQ(s(q, eval::Direction::Head), m.score_heads(RelationId(0), EntityId(2)));
}
