#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgmpt/checkpoint.hpp"
#include "sgmpt/ids.hpp"
#include "sgmpt/parameter.hpp"
#include "sgmpt/ranking.hpp"
#include "sgmpt/tensor.hpp"

// Knowledge-graph embedding models trained on triples alone; their entity
// table becomes the structural feature matrix consumed by the fusion module.
//
// Scores (higher = more plausible):
//   TransE   -||h + r - t||_2
//   DistMult sum_i h_i r_i t_i
//   HAKE     -(||h_m * r_m - t_m||_2 + phase_weight * ||sin((h_p + r_p - t_p) / 2)||_1)
namespace sgmpt::kge {

enum class ModelKind { TransE, DistMult, HAKE };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct StructureEncoderConfig {
  ModelKind kind = ModelKind::HAKE;
  std::size_t dim = 32;
  double margin = 1.0;  // gamma, TransE and HAKE
  std::size_t negatives = 16;
  std::size_t epochs = 100;
  double learning_rate = 0.01;
  double adversarial_temperature = 1.0;  // 0 weights negatives uniformly
  std::size_t batch_size = 128;
  double phase_weight = 0.5;  // HAKE
  double l2 = 1e-4;           // DistMult regularizer on positive embeddings
  std::uint64_t seed = 1;

  void validate() const;
  std::string canonical() const;  // stable key=value text, hashed into tables
  std::string hash() const;
};

struct TripleGradient {
  // Per-block gradients of the score. TransE/DistMult use only the first
  // block; HAKE uses [modulus, phase].
  std::vector<double> head[2];
  std::vector<double> relation[2];
  std::vector<double> tail[2];
};

class StructureModel {
 public:
  StructureModel(ModelKind kind, std::size_t num_entities, std::size_t num_relations, std::size_t dim,
                 double phase_weight, double margin, std::uint64_t seed);

  ModelKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_relations() const { return num_relations_; }
  std::size_t raw_dim() const { return kind_ == ModelKind::HAKE ? 2 * dim_ : dim_; }

  double score(EntityId h, RelationId r, EntityId t) const;
  TripleGradient score_gradient(EntityId h, RelationId r, EntityId t) const;
  // Adds `weight * d score / d params` into the parameter gradients.
  void accumulate_gradient(EntityId h, RelationId r, EntityId t, double weight);
  std::vector<double> score_tails(EntityId h, RelationId r) const;
  std::vector<double> score_heads(RelationId r, EntityId t) const;

  // Entity block(s) concatenated per row: N x raw_dim.
  num::Tensor entity_table() const;

  num::ParameterStore& params() { return params_; }
  const num::ParameterStore& params() const { return params_; }

 private:
  ModelKind kind_;
  std::size_t num_entities_;
  std::size_t num_relations_;
  std::size_t dim_;
  double phase_weight_;
  num::ParameterStore params_;
  num::Parameter* ent_[2] = {nullptr, nullptr};
  num::Parameter* rel_[2] = {nullptr, nullptr};
};

struct StructuralEmbeddingTable {
  ModelKind kind = ModelKind::HAKE;
  std::uint64_t seed = 0;
  std::string cfg_hash;
  num::Tensor matrix;      // N x D (D = raw_dim before projection)
  std::size_t raw_dim = 0;
  num::Tensor projection;  // raw_dim x D; empty when the matrix is unprojected
  double gram_deviation = 0.0;
  std::vector<num::NamedTensor> raw;  // model parameters as trained

  std::size_t rows() const { return matrix.rows(); }
  std::size_t cols() const { return matrix.cols(); }
};

struct TrainResult {
  StructuralEmbeddingTable table;
  std::vector<double> epoch_losses;
};

// Uniform-corruption negative sampling. TransE/HAKE minimize
//   -log s(gamma + f(pos)) - sum_i w_i log s(-gamma - f(neg_i))
// with w = softmax(temperature * f(neg)) (held constant) or uniform; DistMult
// minimizes the logistic loss plus l2 on the positive's embeddings.
TrainResult train_structure_encoder(std::span<const Triple> train, std::size_t num_entities,
                                    std::size_t num_relations, const StructureEncoderConfig& cfg);

// Rebuilds the scorer from a table's raw parameters.
StructureModel model_from_table(const StructuralEmbeddingTable& table, double phase_weight);

// raw_dim x out matrix from Gram-Schmidt on seeded Gaussians. Rows are
// orthonormal when in <= out (an isometry); otherwise columns are orthonormal
// and scaled by sqrt(in/out).
num::Tensor orthonormal_projection(std::size_t in, std::size_t out, std::uint64_t seed);

// Identity when the table already has D columns; otherwise multiplies by a
// fixed orthonormal projection and records the worst relative Gram deviation
// max |<xW, yW> - <x, y>| / (|x| |y|) over row pairs.
StructuralEmbeddingTable project_to_dim(const StructuralEmbeddingTable& table, std::size_t dim, std::uint64_t seed);

void export_table(const std::filesystem::path& path, const StructuralEmbeddingTable& table);

struct TableExpectations {
  std::optional<std::size_t> rows;
  std::optional<std::size_t> cols;
  std::optional<std::string> cfg_hash;
};
// FormatError on header/shape mismatch; a differing cfg hash only adds a warning.
StructuralEmbeddingTable import_table(const std::filesystem::path& path, const TableExpectations& expect = {},
                                      std::vector<std::string>* warnings = nullptr);

eval::Scorer make_scorer(const StructureModel& model);

}  // namespace sgmpt::kge
