#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgmpt/ids.hpp"

// Link-prediction ranking protocol: per-query ranks (raw and filtered),
// Hits@k and mean rank, and the report files.
namespace sgmpt::eval {

enum class Direction { Tail, Head };

// Known true answers over train+dev+test, for the filtered setting.
class FilterIndex {
 public:
  FilterIndex() = default;
  explicit FilterIndex(std::span<const Triple> triples);

  // Sorted known tails of (head, relation); empty span when none.
  std::span<const EntityId> tails(EntityId head, RelationId relation) const;
  std::span<const EntityId> heads(RelationId relation, EntityId tail) const;
  bool contains(const Triple& t) const;
  std::size_t size() const { return count_; }

 private:
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<EntityId>> tails_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<EntityId>> heads_;
  std::size_t count_ = 0;
};

// 1 + number of candidates e != target with score(e) >= score(target), skipping
// any e listed in `filtered` (the target itself is never skipped). Ties count
// against the target.
std::size_t rank_entities(std::span<const double> scores, EntityId target, std::span<const EntityId> filtered = {});

double hits_at_k(std::span<const std::size_t> ranks, std::size_t k);
double mean_rank(std::span<const std::size_t> ranks);

struct Metrics {
  double mean_rank = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
};
Metrics summarize(std::span<const std::size_t> ranks);

struct RankRecord {
  Triple query;
  Direction direction = Direction::Tail;
  std::size_t raw_rank = 0;
  std::size_t filtered_rank = 0;
};

struct EvalReport {
  Metrics raw;
  Metrics filtered;
  std::vector<RankRecord> records;
  std::string config_hash;
  std::uint64_t seed = 0;
};

// Scores for every candidate entity answering `query` in `direction` (the
// masked side of the triple is ignored). Must be safe to call concurrently.
using Scorer = std::function<std::vector<double>(const Triple& query, Direction direction)>;

struct EvalOptions {
  bool predict_heads = false;  // tail prediction is always run
  bool parallel = true;        // fan queries out over OpenMP threads
};

// Serial reference: queries in order, one scorer call each.
EvalReport evaluate_serial(std::span<const Triple> queries, const Scorer& scorer, const FilterIndex& filter,
                           std::size_t num_entities, const EvalOptions& opts = {});
// OpenMP fan-out over queries; every query writes its own record slot and the
// aggregation runs afterwards in query order, so the report equals the serial one.
EvalReport evaluate_parallel(std::span<const Triple> queries, const Scorer& scorer, const FilterIndex& filter,
                             std::size_t num_entities, const EvalOptions& opts = {});
EvalReport evaluate(std::span<const Triple> queries, const Scorer& scorer, const FilterIndex& filter,
                    std::size_t num_entities, const EvalOptions& opts = {});

void write_report_text(const std::filesystem::path& path, const EvalReport& report, const std::string& title);
void write_metrics_kv(const std::filesystem::path& path, const EvalReport& report);
void write_ranks_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace sgmpt::eval
