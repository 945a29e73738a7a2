#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "sgmpt/errors.hpp"
#include "sgmpt/ranking.hpp"
#include "test_util.hpp"

using namespace sgmpt;
using namespace sgmpt::eval;

namespace {

// Sort-based oracle: position of the target after a stable sort that places
// every tied competitor first.
std::size_t sort_rank(std::vector<double> scores, std::size_t target, const std::vector<std::size_t>& drop) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == target || std::find(drop.begin(), drop.end(), i) == drop.end()) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return (a != target) && (b == target);
  });
  return std::size_t(std::find(idx.begin(), idx.end(), target) - idx.begin()) + 1;
}

double brute_hits(const std::vector<std::size_t>& ranks, std::size_t k) {
  std::size_t c = 0;
  for (std::size_t r : ranks) c += r <= k ? 1 : 0;
  return double(c) / double(ranks.size());
}

double brute_mean(const std::vector<std::size_t>& ranks) {
  std::size_t s = 0;
  for (std::size_t r : ranks) s += r;
  return double(s) / double(ranks.size());
}

std::vector<Triple> queries_for(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> e(0, n - 1);
  std::vector<Triple> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back({EntityId(e(rng)), RelationId(0u), EntityId(e(rng))});
  return out;
}

// Pure pseudo-random scores as a function of the query.
Scorer random_scorer(std::size_t n, std::uint64_t seed) {
  return [n, seed](const Triple& q, Direction d) {
    std::mt19937_64 rng(seed * 1000003u + q.head.value * 7919u + q.tail.value * 31u + (d == Direction::Head));
    std::normal_distribution<double> g;
    std::vector<double> s(n);
    for (double& x : s) x = g(rng);
    return s;
  };
}

}  // namespace

TEST(RankEntities, Examples) {
  const double top[] = {0.1, 5.0, 0.3};
  EXPECT_EQ(rank_entities(top, EntityId(1)), 1u);
  const double flat[] = {1, 1, 1, 1, 1};
  EXPECT_EQ(rank_entities(flat, EntityId(3)), 5u);
  const double fixture[] = {3, 2, 2, 1};
  EXPECT_EQ(rank_entities(fixture, EntityId(2)), 3u);
  EXPECT_EQ(sort_rank({3, 2, 2, 1}, 2, {}), 3u);
  EXPECT_THROW(rank_entities(fixture, EntityId(4)), EvalError);
}

TEST(RankEntities, FilterSkipsKnownTailsButNeverTarget) {
  const double s[] = {5, 4, 3, 2};
  const EntityId known[] = {EntityId(0), EntityId(1), EntityId(3)};
  EXPECT_EQ(rank_entities(s, EntityId(3)), 4u);
  EXPECT_EQ(rank_entities(s, EntityId(3), known), 2u);
}

TEST(RankEntities, MatchesSortOracle) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<double> s(n);
    // Coarse values so ties are common.
    for (double& x : s) x = double(rng() % 7);
    const std::size_t target = rng() % n;
    std::vector<std::size_t> drop;
    std::vector<EntityId> filtered;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng() % 4 == 0) {
        drop.push_back(i);
        filtered.push_back(EntityId(i));
      }
    }
    const std::size_t raw = rank_entities(s, EntityId(target));
    const std::size_t filt = rank_entities(s, EntityId(target), filtered);
    ASSERT_EQ(raw, sort_rank(s, target, {}));
    ASSERT_EQ(filt, sort_rank(s, target, drop));
    ASSERT_LE(filt, raw);
    ASSERT_GE(filt, 1u);
  }
}

TEST(Metrics, Examples) {
  const std::size_t r[] = {1, 4, 11};
  EXPECT_DOUBLE_EQ(hits_at_k(r, 3), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(hits_at_k(r, 10), 2.0 / 3.0);
  EXPECT_EQ(hits_at_k(r, 11), 1.0);
  const std::size_t m[] = {1, 2, 3};
  EXPECT_EQ(mean_rank(m), 2.0);
  const std::size_t one[] = {17};
  EXPECT_EQ(mean_rank(one), 17.0);
  EXPECT_THROW(hits_at_k({}, 1), EvalError);
  EXPECT_THROW(mean_rank({}), EvalError);
}

TEST(Metrics, MatchBruteForceAndAreMonotone) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::size_t> ranks(1 + rng() % 40);
    for (auto& r : ranks) r = 1 + rng() % 60;
    EXPECT_EQ(mean_rank(ranks), brute_mean(ranks));
    double prev = 0.0;
    for (std::size_t k : {1u, 3u, 10u, 30u}) {
      const double h = hits_at_k(ranks, k);
      EXPECT_EQ(h, brute_hits(ranks, k));
      EXPECT_GE(h, prev);
      prev = h;
    }
  }
  std::vector<std::size_t> big(1000);
  for (auto& r : big) r = 1 + rng() % 1000;
  EXPECT_NEAR(mean_rank(big), brute_mean(big), 1e-12);
}

TEST(FilterIndex, ContainsEveryTriple) {
  const std::vector<Triple> all = queries_for(20, 200, 3);
  const FilterIndex f(all);
  for (const Triple& t : all) {
    EXPECT_TRUE(f.contains(t));
    const auto tails = f.tails(t.head, t.relation);
    EXPECT_TRUE(std::binary_search(tails.begin(), tails.end(), t.tail));
    const auto heads = f.heads(t.relation, t.tail);
    EXPECT_TRUE(std::binary_search(heads.begin(), heads.end(), t.head));
  }
  EXPECT_TRUE(f.tails(EntityId(0), RelationId(5u)).empty());
}

TEST(Evaluate, OracleScorerIsPerfect) {
  const std::size_t n = 30;
  const std::vector<Triple> q = queries_for(n, 50, 5);
  const FilterIndex f(q);
  const Scorer oracle = [&](const Triple& t, Direction) {
    std::vector<double> s(n, 0.0);
    s[t.tail.index()] = 1.0;
    return s;
  };
  const EvalReport r = evaluate(q, oracle, f, n);
  EXPECT_EQ(r.filtered.mean_rank, 1.0);
  EXPECT_EQ(r.filtered.hits1, 1.0);
  EXPECT_EQ(r.raw.hits10, 1.0);
  EXPECT_EQ(r.records.size(), 50u);
}

TEST(Evaluate, ConstantScorerIsWorst) {
  const std::size_t n = 10;
  const std::vector<Triple> q = queries_for(n, 5, 6);
  const EvalReport r = evaluate(q, [&](const Triple&, Direction) { return std::vector<double>(n, 0.0); },
                                FilterIndex{}, n);
  EXPECT_EQ(r.raw.mean_rank, 10.0);
  EXPECT_EQ(r.raw.hits1, 0.0);
}

TEST(Evaluate, RandomLogitsGiveMeanRankNearMiddle) {
  // Uniform ranks on 1..100 have mean 50.5 and std 28.87; the mean of 2000
  // ranks has std about 0.65, so +-3 is a > 4 sigma band.
  const std::size_t n = 100;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const std::vector<Triple> q = queries_for(n, 2000, seed);
    const EvalReport r = evaluate(q, random_scorer(n, seed), FilterIndex{}, n);
    EXPECT_NEAR(r.raw.mean_rank, 50.5, 3.0) << "seed " << seed;
  }
}

TEST(Evaluate, FilteredNeverWorseThanRaw) {
  const std::size_t n = 15;
  const std::vector<Triple> q = queries_for(n, 300, 8);
  const EvalReport r = evaluate(q, random_scorer(n, 8), FilterIndex(q), n, {.predict_heads = true});
  EXPECT_EQ(r.records.size(), 600u);
  for (const RankRecord& rec : r.records) {
    EXPECT_LE(rec.filtered_rank, rec.raw_rank);
    EXPECT_GE(rec.filtered_rank, 1u);
  }
  EXPECT_LE(r.filtered.mean_rank, r.raw.mean_rank);
  EXPECT_LE(r.filtered.hits1, r.filtered.hits3);
  EXPECT_LE(r.filtered.hits3, r.filtered.hits10);
}

TEST(Evaluate, SerialAndParallelAgreeExactly) {
  const std::size_t n = 40;
  const std::vector<Triple> q = queries_for(n, 400, 9);
  const FilterIndex f(q);
  const EvalReport a = evaluate_serial(q, random_scorer(n, 9), f, n, {.predict_heads = true});
  const EvalReport b = evaluate_parallel(q, random_scorer(n, 9), f, n, {.predict_heads = true});
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].raw_rank, b.records[i].raw_rank);
    EXPECT_EQ(a.records[i].filtered_rank, b.records[i].filtered_rank);
  }
  EXPECT_EQ(a.filtered.mean_rank, b.filtered.mean_rank);
  EXPECT_EQ(a.raw.hits10, b.raw.hits10);
}

TEST(Evaluate, ScorerErrorsPropagate) {
  const std::vector<Triple> q = queries_for(5, 10, 1);
  EXPECT_THROW(evaluate(q, [](const Triple&, Direction) { return std::vector<double>(3); }, FilterIndex{}, 5),
               EvalError);
  EXPECT_THROW(evaluate({}, random_scorer(5, 1), FilterIndex{}, 5), EvalError);
}

TEST(Reports, FilesAreDeterministic) {
  const std::size_t n = 12;
  const std::vector<Triple> q = queries_for(n, 30, 10);
  EvalReport r = evaluate(q, random_scorer(n, 10), FilterIndex(q), n);
  r.config_hash = "0123456789abcdef";
  r.seed = 4;
  const auto dir = sgmpt::testing::scratch_dir("reports");
  write_report_text(dir / "a.txt", r, "title");
  write_metrics_kv(dir / "a.kv", r);
  write_ranks_csv(dir / "a.csv", r);
  write_report_text(dir / "b.txt", r, "title");
  write_metrics_kv(dir / "b.kv", r);
  write_ranks_csv(dir / "b.csv", r);
  EXPECT_EQ(sgmpt::testing::slurp(dir / "a.txt"), sgmpt::testing::slurp(dir / "b.txt"));
  EXPECT_EQ(sgmpt::testing::slurp(dir / "a.kv"), sgmpt::testing::slurp(dir / "b.kv"));
  const std::string kv = sgmpt::testing::slurp(dir / "a.kv");
  EXPECT_NE(kv.find("0123456789abcdef"), std::string::npos);
  const std::string csv = sgmpt::testing::slurp(dir / "a.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 31);
}
