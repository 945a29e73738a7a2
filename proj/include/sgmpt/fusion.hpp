#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgmpt/autograd.hpp"
#include "sgmpt/backbone.hpp"
#include "sgmpt/kg_data.hpp"
#include "sgmpt/ranking.hpp"
#include "sgmpt/tensor.hpp"
#include "sgmpt/training.hpp"

// Structure-guided fusion: structural entity vectors are added into the
// head-entity text state and the image states (weighted summation) and pull
// the pre-fusion text/vision features toward them (alignment constraint).
namespace sgmpt::fusion {

struct FusionConfig {
  double lambda_s_ts = 0.01;   // weighted summation, text
  double lambda_s_vs = 0.01;   // weighted summation, vision
  double lambda_a_ts = 0.001;  // alignment, text
  double lambda_a_vs = 0.001;  // alignment, vision
  bool ws_ts = true;
  bool ws_vs = true;
  bool ac_ts = true;
  bool ac_vs = true;
  // Mean of per-image cosine losses instead of one Frobenius cosine.
  bool per_row_alignment = false;
  // Learn a D_s x D map applied to structural rows (initialized orthonormal).
  bool trainable_projection = false;

  bool any_enabled() const { return ws_ts || ws_vs || ac_ts || ac_vs; }
  void validate() const;
};

// ---------------------------------------------------------------- value ops

// h_t + lambda * h_s
num::Tensor weighted_sum_text(const num::Tensor& h_t, const num::Tensor& h_s, double lambda);
// H_t with row `pos` replaced; a missing position passes H_t through.
num::Tensor replace_entity_row(const num::Tensor& text, std::optional<std::size_t> pos, const num::Tensor& h_ts);
// I copies of the 1 x D row h_s. ConfigError when I <= 0.
num::Tensor expand_structural(const num::Tensor& h_s, long long images);
// H_v + lambda * H_s
num::Tensor weighted_sum_vision(const num::Tensor& vision, const num::Tensor& expanded, double lambda);
// 2 - 2 cos(h_t, h_s); NumericError on a zero vector.
double align_loss_text(const num::Tensor& h_t, const num::Tensor& h_s);
// 2 - 2 <H_v, H_s>_F / (|H_v|_F |H_s|_F)
double align_loss_vision(const num::Tensor& vision, const num::Tensor& expanded);
// Mean over rows of 2 - 2 cos(row_i(H_v), row_i(H_s)).
double align_loss_vision_rows(const num::Tensor& vision, const num::Tensor& expanded);
// lambda_a^ts * L_ts + lambda_a^vs * L_vs with disabled terms dropped.
double total_alignment_loss(double l_ts, double l_vs, const FusionConfig& cfg);
double total_loss(double l_ce, double l_a);

// ----------------------------------------------------------------- tape ops

num::Var weighted_sum_text(num::Tape& t, num::Var h_t, num::Var h_s, double lambda);
num::Var replace_entity_row(num::Tape& t, num::Var text, std::optional<std::size_t> pos, num::Var h_ts);
num::Var expand_structural(num::Tape& t, num::Var h_s, long long images);
num::Var weighted_sum_vision(num::Tape& t, num::Var vision, num::Var expanded, double lambda);

// ------------------------------------------------------------------- model

struct QueryTerms {
  double cross_entropy = 0.0;
  double align_text = 0.0;    // L_ts, 0 when not computed
  double align_vision = 0.0;  // L_vs, 0 when not computed
  double alignment = 0.0;     // L_a
  double total = 0.0;         // L
};

struct FusionGraph {
  num::Var logits;
  num::Var loss;  // only when the query has a target
  bool has_loss = false;
  QueryTerms terms;
};

class FusionModel {
 public:
  // `structure` is the frozen N x D_s table, required when any flag is on.
  // D_s must equal the model width unless the projection is trainable.
  FusionModel(mpt::Backbone backbone, std::optional<num::Tensor> structure, const FusionConfig& cfg,
              std::uint64_t projection_seed = 1);

  const FusionConfig& config() const { return cfg_; }
  void set_config(const FusionConfig& cfg);
  mpt::Backbone& backbone() { return backbone_; }
  const mpt::Backbone& backbone() const { return backbone_; }
  // Backbone parameters plus the optional projection.
  num::ParameterStore& params() { return backbone_.params(); }
  const num::ParameterStore& params() const { return backbone_.params(); }
  const std::optional<num::Tensor>& structure() const { return structure_; }

  // Structural anchor: the head entity of reasoning queries, the described
  // entity of pretraining queries. Text pathways need a head-entity token.
  FusionGraph forward(mpt::Graph& g, const kg::TokenizedQuery& q, const kg::MultimodalKG& mkg) const;
  double query_loss(const kg::TokenizedQuery& q, const kg::MultimodalKG& mkg, num::GradientBuffer* sink,
                    QueryTerms* terms = nullptr) const;
  mpt::QueryLoss loss_function(const kg::MultimodalKG& mkg) const;

  std::vector<double> score_tails(EntityId head, RelationId relation, const kg::MultimodalKG& mkg,
                                  const kg::Vocabulary& vocab) const;
  // Tail prediction only; head-direction queries raise EvalError.
  eval::Scorer scorer(const kg::MultimodalKG& mkg, const kg::Vocabulary& vocab) const;

 private:
  num::Var structural_row(mpt::Graph& g, EntityId e) const;

  mpt::Backbone backbone_;
  std::optional<num::Tensor> structure_;
  FusionConfig cfg_;
  num::Parameter* projection_ = nullptr;
};

std::vector<kg::TokenizedQuery> pretrain_queries(const kg::MultimodalKG& mkg, const kg::Vocabulary& vocab);
std::vector<kg::TokenizedQuery> finetune_queries(std::span<const Triple> triples, const kg::MultimodalKG& mkg,
                                                 const kg::Vocabulary& vocab);

// Checkpoint = backbone parameters (+ projection) with the model config header.
void save_fusion_model(const std::filesystem::path& path, const FusionModel& model,
                       std::vector<std::pair<std::string, std::string>> extra_meta = {});
// Loads parameter values into a model built with the same configuration.
void load_fusion_parameters(const std::filesystem::path& path, FusionModel& model);

}  // namespace sgmpt::fusion
