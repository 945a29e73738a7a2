#include "sgmpt/ranking.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>

#include "sgmpt/errors.hpp"

namespace sgmpt::eval {

FilterIndex::FilterIndex(std::span<const Triple> triples) {
  for (const auto& t : triples) {
    tails_[{t.head.value, t.relation.value}].push_back(t.tail);
    heads_[{t.relation.value, t.tail.value}].push_back(t.head);
  }
  auto finish = [](auto& index) {
    for (auto& [key, v] : index) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  };
  finish(tails_);
  finish(heads_);
  for (const auto& [key, v] : tails_) count_ += v.size();
}

std::span<const EntityId> FilterIndex::tails(EntityId head, RelationId relation) const {
  auto it = tails_.find({head.value, relation.value});
  if (it == tails_.end()) return {};
  return it->second;
}

std::span<const EntityId> FilterIndex::heads(RelationId relation, EntityId tail) const {
  auto it = heads_.find({relation.value, tail.value});
  if (it == heads_.end()) return {};
  return it->second;
}

bool FilterIndex::contains(const Triple& t) const {
  auto known = tails(t.head, t.relation);
  return std::binary_search(known.begin(), known.end(), t.tail);
}

std::size_t rank_entities(std::span<const double> scores, EntityId target, std::span<const EntityId> filtered) {
  if (target.index() >= scores.size()) throw EvalError("rank_entities: target out of range");
  const double s = scores[target.index()];
  std::size_t rank = 1;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (e == target.index() || scores[e] < s) continue;
    if (!filtered.empty() && std::binary_search(filtered.begin(), filtered.end(), EntityId(e))) continue;
    ++rank;
  }
  return rank;
}

double hits_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw EvalError("hits_at_k: empty rank list");
  std::size_t hits = 0;
  for (auto r : ranks) {
    if (r == 0) throw EvalError("hits_at_k: ranks must be >= 1");
    if (r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mean_rank(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw EvalError("mean_rank: empty rank list");
  double total = 0.0;
  for (auto r : ranks) total += static_cast<double>(r);
  return total / static_cast<double>(ranks.size());
}

Metrics summarize(std::span<const std::size_t> ranks) {
  return {mean_rank(ranks), hits_at_k(ranks, 1), hits_at_k(ranks, 3), hits_at_k(ranks, 10)};
}

namespace {

struct Job {
  Triple query;
  Direction direction;
};

std::vector<Job> make_jobs(std::span<const Triple> queries, const EvalOptions& opts) {
  std::vector<Job> jobs;
  for (const auto& q : queries) jobs.push_back({q, Direction::Tail});
  if (opts.predict_heads)
    for (const auto& q : queries) jobs.push_back({q, Direction::Head});
  return jobs;
}

RankRecord score_job(const Job& job, const Scorer& scorer, const FilterIndex& filter, std::size_t num_entities) {
  const std::vector<double> scores = scorer(job.query, job.direction);
  if (scores.size() != num_entities) throw EvalError("scorer returned the wrong number of candidate scores");
  const EntityId target = job.direction == Direction::Tail ? job.query.tail : job.query.head;
  const auto known = job.direction == Direction::Tail ? filter.tails(job.query.head, job.query.relation)
                                                      : filter.heads(job.query.relation, job.query.tail);
  RankRecord rec;
  rec.query = job.query;
  rec.direction = job.direction;
  rec.raw_rank = rank_entities(scores, target);
  rec.filtered_rank = rank_entities(scores, target, known);
  return rec;
}

EvalReport aggregate(std::vector<RankRecord> records) {
  if (records.empty()) throw EvalError("evaluate: no queries");
  std::vector<std::size_t> raw;
  std::vector<std::size_t> filtered;
  for (const auto& r : records) {
    raw.push_back(r.raw_rank);
    filtered.push_back(r.filtered_rank);
  }
  EvalReport report;
  report.raw = summarize(raw);
  report.filtered = summarize(filtered);
  report.records = std::move(records);
  return report;
}

}  // namespace

EvalReport evaluate_serial(std::span<const Triple> queries, const Scorer& scorer, const FilterIndex& filter,
                           std::size_t num_entities, const EvalOptions& opts) {
  const auto jobs = make_jobs(queries, opts);
  std::vector<RankRecord> records;
  records.reserve(jobs.size());
  for (const auto& job : jobs) records.push_back(score_job(job, scorer, filter, num_entities));
  return aggregate(std::move(records));
}

EvalReport evaluate_parallel(std::span<const Triple> queries, const Scorer& scorer, const FilterIndex& filter,
                             std::size_t num_entities, const EvalOptions& opts) {
  const auto jobs = make_jobs(queries, opts);
  std::vector<RankRecord> records(jobs.size());
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto count = static_cast<std::int64_t>(jobs.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      records[static_cast<std::size_t>(i)] = score_job(jobs[static_cast<std::size_t>(i)], scorer, filter, num_entities);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return aggregate(std::move(records));
}

EvalReport evaluate(std::span<const Triple> queries, const Scorer& scorer, const FilterIndex& filter,
                    std::size_t num_entities, const EvalOptions& opts) {
  return opts.parallel ? evaluate_parallel(queries, scorer, filter, num_entities, opts)
                       : evaluate_serial(queries, scorer, filter, num_entities, opts);
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  return out;
}

}  // namespace

void write_report_text(const std::filesystem::path& path, const EvalReport& report, const std::string& title) {
  auto out = open_out(path);
  char line[160];
  out << title << '\n';
  out << "queries: " << report.records.size() << "  config: " << report.config_hash << "  seed: " << report.seed << "\n\n";
  out << "setting      MR        Hits@1  Hits@3  Hits@10\n";
  auto row = [&](const char* name, const Metrics& m) {
    std::snprintf(line, sizeof line, "%-10s %9.3f  %s  %s  %s\n", name, m.mean_rank, pct(m.hits1).c_str(),
                  pct(m.hits3).c_str(), pct(m.hits10).c_str());
    out << line;
  };
  row("filtered", report.filtered);
  row("raw", report.raw);
  out << "\nHits@k in percent; ties are ranked pessimistically.\n";
}

void write_metrics_kv(const std::filesystem::path& path, const EvalReport& report) {
  auto out = open_out(path);
  out << "config_hash=" << report.config_hash << '\n';
  out << "seed=" << report.seed << '\n';
  out << "queries=" << report.records.size() << '\n';
  auto block = [&](const char* prefix, const Metrics& m) {
    out << prefix << ".mr=" << fmt(m.mean_rank) << '\n';
    out << prefix << ".hits1=" << fmt(m.hits1) << '\n';
    out << prefix << ".hits3=" << fmt(m.hits3) << '\n';
    out << prefix << ".hits10=" << fmt(m.hits10) << '\n';
  };
  block("filtered", report.filtered);
  block("raw", report.raw);
}

void write_ranks_csv(const std::filesystem::path& path, const EvalReport& report) {
  auto out = open_out(path);
  out << "head,relation,tail,direction,raw_rank,filtered_rank\n";
  for (const auto& r : report.records) {
    out << r.query.head.value << ',' << r.query.relation.value << ',' << r.query.tail.value << ','
        << (r.direction == Direction::Tail ? "tail" : "head") << ',' << r.raw_rank << ',' << r.filtered_rank << '\n';
  }
}

}  // namespace sgmpt::eval
