#include "sgmpt/structure_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "sgmpt/adam.hpp"
#include "sgmpt/errors.hpp"
#include "sgmpt/hash.hpp"
#include "sgmpt/tensor_ops.hpp"

namespace sgmpt::kge {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::TransE:
      return "TransE";
    case ModelKind::DistMult:
      return "DistMult";
    case ModelKind::HAKE:
      return "HAKE";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "TransE" || text == "transe") return ModelKind::TransE;
  if (text == "DistMult" || text == "distmult") return ModelKind::DistMult;
  if (text == "HAKE" || text == "hake") return ModelKind::HAKE;
  throw ConfigError("unknown structure model kind: " + text + " (expected TransE, DistMult or HAKE)");
}

void StructureEncoderConfig::validate() const {
  if (dim < 1) throw ConfigError("structure.dim must be >= 1");
  if (negatives < 1) throw ConfigError("structure.negatives must be >= 1");
  if (batch_size < 1) throw ConfigError("structure.batch_size must be >= 1");
  if (kind != ModelKind::DistMult && !(margin > 0.0)) throw ConfigError("structure.margin must be > 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("structure.learning_rate must be >= 0");
  if (!(adversarial_temperature >= 0.0)) throw ConfigError("structure.adversarial_temperature must be >= 0");
  if (!(phase_weight >= 0.0)) throw ConfigError("structure.phase_weight must be >= 0");
  if (!(l2 >= 0.0)) throw ConfigError("structure.l2 must be >= 0");
}

std::string StructureEncoderConfig::canonical() const {
  std::ostringstream s;
  s.precision(17);
  s << "kind=" << to_string(kind) << ";dim=" << dim << ";margin=" << margin << ";negatives=" << negatives
    << ";epochs=" << epochs << ";lr=" << learning_rate << ";adv=" << adversarial_temperature << ";batch=" << batch_size
    << ";phase_weight=" << phase_weight << ";l2=" << l2 << ";seed=" << seed;
  return s.str();
}

std::string StructureEncoderConfig::hash() const { return hex64(fnv1a64(canonical())); }

// ------------------------------------------------------------------ model

StructureModel::StructureModel(ModelKind kind, std::size_t num_entities, std::size_t num_relations, std::size_t dim,
                               double phase_weight, double margin, std::uint64_t seed)
    : kind_(kind), num_entities_(num_entities), num_relations_(num_relations), dim_(dim), phase_weight_(phase_weight) {
  std::mt19937_64 rng(seed);
  const double bound = (margin + 2.0) / static_cast<double>(dim);
  auto uniform = [&](std::size_t rows, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    num::Tensor t(rows, dim);
    for (double& v : t.values()) v = u(rng);
    return t;
  };
  if (kind == ModelKind::HAKE) {
    ent_[0] = &params_.add("entity_modulus", uniform(num_entities, -bound, bound));
    ent_[1] = &params_.add("entity_phase", uniform(num_entities, -std::numbers::pi, std::numbers::pi));
    rel_[0] = &params_.add("relation_modulus", num::Tensor(num_relations, dim, 1.0));
    rel_[1] = &params_.add("relation_phase", uniform(num_relations, -std::numbers::pi, std::numbers::pi));
  } else {
    ent_[0] = &params_.add("entity", uniform(num_entities, -bound, bound));
    rel_[0] = &params_.add("relation", uniform(num_relations, -bound, bound));
  }
}

double StructureModel::score(EntityId h, RelationId r, EntityId t) const {
  const auto hv = ent_[0]->value.row_span(h.index());
  const auto rv = rel_[0]->value.row_span(r.index());
  const auto tv = ent_[0]->value.row_span(t.index());
  switch (kind_) {
    case ModelKind::TransE: {
      double sq = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        const double u = hv[i] + rv[i] - tv[i];
        sq += u * u;
      }
      return -std::sqrt(sq);
    }
    case ModelKind::DistMult: {
      double s = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) s += hv[i] * rv[i] * tv[i];
      return s;
    }
    case ModelKind::HAKE: {
      const auto hp = ent_[1]->value.row_span(h.index());
      const auto rp = rel_[1]->value.row_span(r.index());
      const auto tp = ent_[1]->value.row_span(t.index());
      double sq = 0.0;
      double phase = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        const double u = hv[i] * rv[i] - tv[i];
        sq += u * u;
        phase += std::abs(std::sin((hp[i] + rp[i] - tp[i]) / 2.0));
      }
      return -(std::sqrt(sq) + phase_weight_ * phase);
    }
  }
  return 0.0;
}

TripleGradient StructureModel::score_gradient(EntityId h, RelationId r, EntityId t) const {
  TripleGradient g;
  const auto hv = ent_[0]->value.row_span(h.index());
  const auto rv = rel_[0]->value.row_span(r.index());
  const auto tv = ent_[0]->value.row_span(t.index());
  for (int b = 0; b < (kind_ == ModelKind::HAKE ? 2 : 1); ++b) {
    g.head[b].assign(dim_, 0.0);
    g.relation[b].assign(dim_, 0.0);
    g.tail[b].assign(dim_, 0.0);
  }
  switch (kind_) {
    case ModelKind::TransE: {
      double sq = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) sq += (hv[i] + rv[i] - tv[i]) * (hv[i] + rv[i] - tv[i]);
      const double n = std::sqrt(sq);
      if (n == 0.0) break;  // subgradient 0 at the optimum
      for (std::size_t i = 0; i < dim_; ++i) {
        const double u = (hv[i] + rv[i] - tv[i]) / n;
        g.head[0][i] = -u;
        g.relation[0][i] = -u;
        g.tail[0][i] = u;
      }
      break;
    }
    case ModelKind::DistMult:
      for (std::size_t i = 0; i < dim_; ++i) {
        g.head[0][i] = rv[i] * tv[i];
        g.relation[0][i] = hv[i] * tv[i];
        g.tail[0][i] = hv[i] * rv[i];
      }
      break;
    case ModelKind::HAKE: {
      double sq = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) sq += (hv[i] * rv[i] - tv[i]) * (hv[i] * rv[i] - tv[i]);
      const double n = std::sqrt(sq);
      if (n > 0.0) {
        for (std::size_t i = 0; i < dim_; ++i) {
          const double u = (hv[i] * rv[i] - tv[i]) / n;
          g.head[0][i] = -u * rv[i];
          g.relation[0][i] = -u * hv[i];
          g.tail[0][i] = u;
        }
      }
      const auto hp = ent_[1]->value.row_span(h.index());
      const auto rp = rel_[1]->value.row_span(r.index());
      const auto tp = ent_[1]->value.row_span(t.index());
      for (std::size_t i = 0; i < dim_; ++i) {
        const double half = (hp[i] + rp[i] - tp[i]) / 2.0;
        const double s = std::sin(half);
        const double sign = s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0);
        const double d = phase_weight_ * sign * std::cos(half) / 2.0;
        g.head[1][i] = -d;
        g.relation[1][i] = -d;
        g.tail[1][i] = d;
      }
      break;
    }
  }
  return g;
}

void StructureModel::accumulate_gradient(EntityId h, RelationId r, EntityId t, double weight) {
  const TripleGradient g = score_gradient(h, r, t);
  for (int b = 0; b < (kind_ == ModelKind::HAKE ? 2 : 1); ++b) {
    auto gh = ent_[b]->grad.row_span(h.index());
    auto gr = rel_[b]->grad.row_span(r.index());
    auto gt = ent_[b]->grad.row_span(t.index());
    for (std::size_t i = 0; i < dim_; ++i) {
      gh[i] += weight * g.head[b][i];
      gr[i] += weight * g.relation[b][i];
      gt[i] += weight * g.tail[b][i];
    }
  }
}

std::vector<double> StructureModel::score_tails(EntityId h, RelationId r) const {
  std::vector<double> s(num_entities_);
  for (std::size_t e = 0; e < num_entities_; ++e) s[e] = score(h, r, EntityId(e));
  return s;
}

std::vector<double> StructureModel::score_heads(RelationId r, EntityId t) const {
  std::vector<double> s(num_entities_);
  for (std::size_t e = 0; e < num_entities_; ++e) s[e] = score(EntityId(e), r, t);
  return s;
}

num::Tensor StructureModel::entity_table() const {
  if (kind_ != ModelKind::HAKE) return ent_[0]->value;
  num::Tensor out(num_entities_, 2 * dim_);
  for (std::size_t e = 0; e < num_entities_; ++e) {
    auto dst = out.row_span(e);
    auto m = ent_[0]->value.row_span(e);
    auto p = ent_[1]->value.row_span(e);
    std::copy(m.begin(), m.end(), dst.begin());
    std::copy(p.begin(), p.end(), dst.begin() + static_cast<std::ptrdiff_t>(dim_));
  }
  return out;
}

// --------------------------------------------------------------- training

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

StructuralEmbeddingTable table_from_model(const StructureModel& model, const StructureEncoderConfig& cfg) {
  StructuralEmbeddingTable table;
  table.kind = cfg.kind;
  table.seed = cfg.seed;
  table.cfg_hash = cfg.hash();
  table.matrix = model.entity_table();
  table.raw_dim = model.raw_dim();
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& p = model.params()[i];
    table.raw.push_back({p.name, p.value, false});
  }
  return table;
}

}  // namespace

TrainResult train_structure_encoder(std::span<const Triple> train, std::size_t num_entities, std::size_t num_relations,
                                    const StructureEncoderConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw TrainingError("structure encoder: empty training split");
  StructureModel model(cfg.kind, num_entities, num_relations, cfg.dim, cfg.phase_weight, cfg.margin, cfg.seed);
  num::Adam adam({cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(mix(cfg.seed + 1));
  std::uniform_int_distribution<std::size_t> pick(0, num_entities - 1);
  std::bernoulli_distribution corrupt_head(0.5);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  std::vector<Triple> negs(cfg.negatives);
  std::vector<double> neg_scores(cfg.negatives);
  std::vector<double> weights(cfg.negatives);
  const bool margin_model = cfg.kind != ModelKind::DistMult;
  const double k = static_cast<double>(cfg.negatives);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      model.params().zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const Triple& pos = train[order[b]];
        for (std::size_t i = 0; i < cfg.negatives; ++i) {
          negs[i] = pos;
          if (corrupt_head(rng)) {
            negs[i].head = EntityId(pick(rng));
          } else {
            negs[i].tail = EntityId(pick(rng));
          }
          neg_scores[i] = model.score(negs[i].head, negs[i].relation, negs[i].tail);
        }
        const double s_pos = model.score(pos.head, pos.relation, pos.tail);
        double loss = 0.0;
        if (margin_model) {
          if (cfg.adversarial_temperature > 0.0) {
            const double mx = *std::max_element(neg_scores.begin(), neg_scores.end());
            double z = 0.0;
            for (std::size_t i = 0; i < cfg.negatives; ++i) {
              weights[i] = std::exp(cfg.adversarial_temperature * (neg_scores[i] - mx));
              z += weights[i];
            }
            for (double& w : weights) w /= z;
          } else {
            std::fill(weights.begin(), weights.end(), 1.0 / k);
          }
          loss += softplus(-(cfg.margin + s_pos));
          model.accumulate_gradient(pos.head, pos.relation, pos.tail, -sigmoid(-cfg.margin - s_pos) * inv_b);
          for (std::size_t i = 0; i < cfg.negatives; ++i) {
            loss += weights[i] * softplus(cfg.margin + neg_scores[i]);
            model.accumulate_gradient(negs[i].head, negs[i].relation, negs[i].tail,
                                      weights[i] * sigmoid(cfg.margin + neg_scores[i]) * inv_b);
          }
        } else {
          loss += softplus(-s_pos);
          model.accumulate_gradient(pos.head, pos.relation, pos.tail, -sigmoid(-s_pos) * inv_b);
          for (std::size_t i = 0; i < cfg.negatives; ++i) {
            loss += softplus(neg_scores[i]) / k;
            model.accumulate_gradient(negs[i].head, negs[i].relation, negs[i].tail, sigmoid(neg_scores[i]) / k * inv_b);
          }
          if (cfg.l2 > 0.0) {
            auto& ent = model.params().at("entity");
            auto& rel = model.params().at("relation");
            const auto add_l2 = [&](num::Parameter& p, std::size_t row) {
              auto v = p.value.row_span(row);
              auto g = p.grad.row_span(row);
              for (std::size_t i = 0; i < v.size(); ++i) {
                loss += cfg.l2 * v[i] * v[i];
                g[i] += 2.0 * cfg.l2 * v[i] * inv_b;
              }
            };
            add_l2(ent, pos.head.index());
            add_l2(rel, pos.relation.index());
            add_l2(ent, pos.tail.index());
          }
        }
        epoch_loss += loss;
      }
      adam.step(model.params());
    }
    epoch_loss /= static_cast<double>(train.size());
    if (!std::isfinite(epoch_loss)) {
      throw TrainingError("structure encoder diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
    }
    result.epoch_losses.push_back(epoch_loss);
  }
  result.table = table_from_model(model, cfg);
  return result;
}

StructureModel model_from_table(const StructuralEmbeddingTable& table, double phase_weight) {
  if (table.raw.empty()) throw FormatError("structure table carries no raw model parameters");
  const auto find = [&](const std::string& name) -> const num::Tensor& {
    for (const auto& t : table.raw)
      if (t.name == name) return t.value;
    throw FormatError("structure table lacks raw block " + name);
  };
  const bool hake = table.kind == ModelKind::HAKE;
  const num::Tensor& ent = find(hake ? "entity_modulus" : "entity");
  const num::Tensor& rel = find(hake ? "relation_modulus" : "relation");
  StructureModel model(table.kind, ent.rows(), rel.rows(), ent.cols(), phase_weight, 1.0, 0);
  for (const auto& t : table.raw) model.params().at(t.name).value = t.value;
  return model;
}

// ------------------------------------------------------------- projection

num::Tensor orthonormal_projection(std::size_t in, std::size_t out, std::uint64_t seed) {
  if (in == 0 || out == 0) throw ConfigError("projection dimensions must be positive");
  std::mt19937_64 rng(mix(seed ^ 0x9001ULL));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const bool rows_orthonormal = in <= out;
  const std::size_t count = rows_orthonormal ? in : out;
  const std::size_t length = rows_orthonormal ? out : in;
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(length);
    for (double& x : v) x = gauss(rng);
    for (int pass = 0; pass < 2; ++pass) {  // re-orthogonalize once for stability
      for (const auto& q : basis) {
        double d = 0.0;
        for (std::size_t i = 0; i < length; ++i) d += v[i] * q[i];
        for (std::size_t i = 0; i < length; ++i) v[i] -= d * q[i];
      }
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-10) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  num::Tensor w(in, out);
  if (rows_orthonormal) {
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t j = 0; j < out; ++j) w(i, j) = basis[i][j];
  } else {
    const double s = std::sqrt(static_cast<double>(in) / static_cast<double>(out));
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t j = 0; j < out; ++j) w(i, j) = s * basis[j][i];
  }
  return w;
}

StructuralEmbeddingTable project_to_dim(const StructuralEmbeddingTable& table, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("project_to_dim: target dimension must be positive");
  StructuralEmbeddingTable out = table;
  if (table.matrix.cols() == dim) {
    out.gram_deviation = 0.0;
    return out;
  }
  out.projection = orthonormal_projection(table.matrix.cols(), dim, seed);
  out.matrix = num::matmul(table.matrix, out.projection);
  const num::Tensor before = num::matmul_nt(table.matrix, table.matrix);
  const num::Tensor after = num::matmul_nt(out.matrix, out.matrix);
  double worst = 0.0;
  for (std::size_t i = 0; i < before.rows(); ++i) {
    for (std::size_t j = 0; j < before.cols(); ++j) {
      const double scale = std::sqrt(before(i, i) * before(j, j));
      if (scale == 0.0) continue;
      worst = std::max(worst, std::abs(after(i, j) - before(i, j)) / scale);
    }
  }
  out.gram_deviation = worst;
  return out;
}

// ------------------------------------------------------------------ files

void export_table(const std::filesystem::path& path, const StructuralEmbeddingTable& table) {
  num::TensorFile file;
  file.meta = {{"format", "structure-table"},
               {"kind", to_string(table.kind)},
               {"seed", std::to_string(table.seed)},
               {"cfg_hash", table.cfg_hash},
               {"rows", std::to_string(table.rows())},
               {"cols", std::to_string(table.cols())},
               {"raw_dim", std::to_string(table.raw_dim)},
               {"gram_deviation", num::format_hexfloat(table.gram_deviation)}};
  file.tensors.push_back({"matrix", table.matrix, false});
  if (table.projection.size() != 0) file.tensors.push_back({"projection", table.projection, false});
  for (const auto& t : table.raw) file.tensors.push_back({"raw." + t.name, t.value, false});
  num::write_tensor_file(path, file);
}

StructuralEmbeddingTable import_table(const std::filesystem::path& path, const TableExpectations& expect,
                                      std::vector<std::string>* warnings) {
  const num::TensorFile file = [&] {
    try {
      return num::read_tensor_file(path);
    } catch (const ParseError& e) {
      throw FormatError(std::string(e.what()) + " (line " + std::to_string(e.line()) + ")");
    }
  }();
  const auto meta = [&](const std::string& key) -> const std::string& {
    const std::string* v = file.meta_value(key);
    if (v == nullptr) throw FormatError(path.string() + ": structure table header lacks '" + key + "'");
    return *v;
  };
  if (meta("format") != "structure-table") throw FormatError(path.string() + ": not a structure table");
  StructuralEmbeddingTable table;
  table.kind = parse_model_kind(meta("kind"));
  table.seed = std::stoull(meta("seed"));
  table.cfg_hash = meta("cfg_hash");
  table.raw_dim = std::stoull(meta("raw_dim"));
  table.gram_deviation = num::parse_double(meta("gram_deviation"));
  const std::size_t rows = std::stoull(meta("rows"));
  const std::size_t cols = std::stoull(meta("cols"));
  const num::NamedTensor* matrix = file.tensor("matrix");
  if (matrix == nullptr) throw FormatError(path.string() + ": structure table lacks the matrix block");
  if (matrix->value.rows() != rows || matrix->value.cols() != cols) {
    throw FormatError(path.string() + ": header shape does not match matrix block");
  }
  table.matrix = matrix->value;
  if (const auto* proj = file.tensor("projection")) table.projection = proj->value;
  for (const auto& t : file.tensors) {
    if (t.name.rfind("raw.", 0) == 0) table.raw.push_back({t.name.substr(4), t.value, false});
  }
  if (expect.rows && *expect.rows != rows) {
    throw FormatError(path.string() + ": table has " + std::to_string(rows) + " rows, dataset has " +
                      std::to_string(*expect.rows) + " entities");
  }
  if (expect.cols && *expect.cols != cols) {
    throw FormatError(path.string() + ": table has " + std::to_string(cols) + " columns, model expects " +
                      std::to_string(*expect.cols));
  }
  if (expect.cfg_hash && *expect.cfg_hash != table.cfg_hash) {
    const std::string msg = path.string() + ": structure config hash " + table.cfg_hash +
                            " differs from the current config " + *expect.cfg_hash;
    if (warnings != nullptr) warnings->push_back(msg);
  }
  return table;
}

eval::Scorer make_scorer(const StructureModel& model) {
  return [&model](const Triple& q, eval::Direction d) {
    return d == eval::Direction::Tail ? model.score_tails(q.head, q.relation) : model.score_heads(q.relation, q.tail);
  };
}

}  // namespace sgmpt::kge
