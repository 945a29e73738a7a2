#include "sgmpt/fusion.hpp"

#include <cmath>
#include <string>

#include "sgmpt/checkpoint.hpp"
#include "sgmpt/errors.hpp"
#include "sgmpt/structure_encoder.hpp"
#include "sgmpt/tensor_ops.hpp"

namespace sgmpt::fusion {

using num::Tensor;
using num::Var;
namespace ag = num::ag;

void FusionConfig::validate() const {
  const double values[] = {lambda_s_ts, lambda_s_vs, lambda_a_ts, lambda_a_vs};
  const char* names[] = {"fusion.lambda_s_ts", "fusion.lambda_s_vs", "fusion.lambda_a_ts", "fusion.lambda_a_vs"};
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0.0) {
      throw ConfigError(std::string(names[i]) + " must be a finite non-negative number");
    }
  }
}

// ---------------------------------------------------------------- value ops

namespace {

void require_row(const Tensor& v, const char* op) {
  if (v.rows() != 1) throw DimensionError(std::string(op) + ": expected a row vector, got " + num::shape_string(v));
}

double scalar_of(num::Tape& t, Var v) { return t.value(v).item(); }

}  // namespace

Tensor weighted_sum_text(const Tensor& h_t, const Tensor& h_s, double lambda) {
  num::Tape t;
  return t.value(weighted_sum_text(t, t.constant(h_t), t.constant(h_s), lambda));
}

Tensor replace_entity_row(const Tensor& text, std::optional<std::size_t> pos, const Tensor& h_ts) {
  num::Tape t;
  return t.value(replace_entity_row(t, t.constant(text), pos, t.constant(h_ts)));
}

Tensor expand_structural(const Tensor& h_s, long long images) {
  num::Tape t;
  return t.value(expand_structural(t, t.constant(h_s), images));
}

Tensor weighted_sum_vision(const Tensor& vision, const Tensor& expanded, double lambda) {
  num::Tape t;
  return t.value(weighted_sum_vision(t, t.constant(vision), t.constant(expanded), lambda));
}

double align_loss_text(const Tensor& h_t, const Tensor& h_s) {
  require_row(h_t, "align_loss_text");
  require_row(h_s, "align_loss_text");
  num::Tape t;
  return scalar_of(t, ag::cosine_alignment(t, t.constant(h_t), t.constant(h_s)));
}

double align_loss_vision(const Tensor& vision, const Tensor& expanded) {
  num::Tape t;
  return scalar_of(t, ag::cosine_alignment(t, t.constant(vision), t.constant(expanded)));
}

double align_loss_vision_rows(const Tensor& vision, const Tensor& expanded) {
  num::Tape t;
  return scalar_of(t, ag::row_cosine_alignment(t, t.constant(vision), t.constant(expanded)));
}

double total_alignment_loss(double l_ts, double l_vs, const FusionConfig& cfg) {
  if (!std::isfinite(l_ts) || !std::isfinite(l_vs)) throw NumericError("total_alignment_loss: non-finite input");
  double total = 0.0;
  if (cfg.ac_ts) total += cfg.lambda_a_ts * l_ts;
  if (cfg.ac_vs) total += cfg.lambda_a_vs * l_vs;
  return total;
}

double total_loss(double l_ce, double l_a) {
  if (!std::isfinite(l_ce) || !std::isfinite(l_a)) throw NumericError("total_loss: non-finite input");
  return l_ce + l_a;
}

// ----------------------------------------------------------------- tape ops

Var weighted_sum_text(num::Tape& t, Var h_t, Var h_s, double lambda) {
  require_row(t.value(h_t), "weighted_sum_text");
  if (!t.value(h_t).same_shape(t.value(h_s))) {
    throw DimensionError("weighted_sum_text: " + num::shape_string(t.value(h_t)) + " vs " +
                         num::shape_string(t.value(h_s)));
  }
  return ag::add(t, h_t, ag::scale(t, h_s, lambda));
}

Var replace_entity_row(num::Tape& t, Var text, std::optional<std::size_t> pos, Var h_ts) {
  if (!pos) return text;
  return ag::replace_row(t, text, *pos, h_ts);
}

Var expand_structural(num::Tape& t, Var h_s, long long images) {
  if (images <= 0) throw ConfigError("expand_structural: image count must be >= 1, got " + std::to_string(images));
  require_row(t.value(h_s), "expand_structural");
  return ag::repeat_rows(t, h_s, static_cast<std::size_t>(images));
}

Var weighted_sum_vision(num::Tape& t, Var vision, Var expanded, double lambda) {
  if (!t.value(vision).same_shape(t.value(expanded))) {
    throw DimensionError("weighted_sum_vision: " + num::shape_string(t.value(vision)) + " vs " +
                         num::shape_string(t.value(expanded)));
  }
  return ag::add(t, vision, ag::scale(t, expanded, lambda));
}

// ------------------------------------------------------------------- model

FusionModel::FusionModel(mpt::Backbone backbone, std::optional<Tensor> structure, const FusionConfig& cfg,
                         std::uint64_t projection_seed)
    : backbone_(std::move(backbone)), structure_(std::move(structure)), cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = backbone_.config().dim;
  if (structure_) {
    if (structure_->rows() != backbone_.config().num_entities) {
      throw DimensionError("structure table has " + std::to_string(structure_->rows()) + " rows, model has " +
                           std::to_string(backbone_.config().num_entities) + " entities");
    }
    if (cfg_.trainable_projection) {
      projection_ = &backbone_.params().add("fusion.projection",
                                            kge::orthonormal_projection(structure_->cols(), d, projection_seed));
    } else if (structure_->cols() != d) {
      throw DimensionError("structure table width " + std::to_string(structure_->cols()) +
                           " differs from model dim " + std::to_string(d) +
                           "; project the table or enable the trainable projection");
    }
  }
  if (cfg_.any_enabled() && !structure_) {
    throw ConfigError("fusion pathways are enabled but no structural embedding table was given");
  }
}

void FusionModel::set_config(const FusionConfig& cfg) {
  cfg.validate();
  if (cfg.trainable_projection != cfg_.trainable_projection) {
    throw ConfigError("set_config: cannot toggle the projection on a built model");
  }
  if (cfg.any_enabled() && !structure_) throw ConfigError("fusion pathways need a structural embedding table");
  cfg_ = cfg;
}

Var FusionModel::structural_row(mpt::Graph& g, EntityId e) const {
  num::Tape& t = g.tape();
  const Var row = t.constant(num::slice_rows(*structure_, e.index(), 1));
  if (projection_ == nullptr) return row;
  return ag::matmul(t, row, g.param(*projection_));
}

FusionGraph FusionModel::forward(mpt::Graph& g, const kg::TokenizedQuery& q, const kg::MultimodalKG& mkg) const {
  num::Tape& t = g.tape();
  FusionGraph out;
  Var text = backbone_.encode_text(g, q.tokens);
  Var vision = backbone_.encode_vision(g, mkg.visuals.at(q.subject.index()));
  const Var text_in = text;
  const Var vision_in = vision;
  const bool text_path = q.head_entity_pos.has_value();
  const bool uses_structure = (text_path && (cfg_.ws_ts || cfg_.ac_ts)) || cfg_.ws_vs || cfg_.ac_vs;

  Var h_s{};
  Var h_t{};
  Var expanded{};
  if (uses_structure) {
    h_s = structural_row(g, q.subject);
    if (text_path) h_t = ag::slice_rows(t, text_in, *q.head_entity_pos, 1);
    if (cfg_.ws_vs || cfg_.ac_vs) expanded = expand_structural(t, h_s, static_cast<long long>(t.value(vision_in).rows()));
  }
  if (text_path && cfg_.ws_ts) {
    text = replace_entity_row(t, text_in, q.head_entity_pos, weighted_sum_text(t, h_t, h_s, cfg_.lambda_s_ts));
  }
  if (cfg_.ws_vs) vision = weighted_sum_vision(t, vision_in, expanded, cfg_.lambda_s_vs);

  const Var fused = backbone_.encode_multimodal(g, text, vision);
  out.logits = backbone_.mlm_logits(g, ag::slice_rows(t, fused, q.mask_pos, 1));
  if (!q.target) return out;

  const Var ce = ag::cross_entropy(t, out.logits, q.target->index());
  Var loss = ce;
  out.terms.cross_entropy = t.value(ce).item();
  if (text_path && cfg_.ac_ts) {
    const Var l_ts = ag::cosine_alignment(t, h_t, h_s);
    out.terms.align_text = t.value(l_ts).item();
    loss = ag::add(t, loss, ag::scale(t, l_ts, cfg_.lambda_a_ts));
  }
  if (cfg_.ac_vs) {
    const Var l_vs = cfg_.per_row_alignment ? ag::row_cosine_alignment(t, vision_in, expanded)
                                            : ag::cosine_alignment(t, vision_in, expanded);
    out.terms.align_vision = t.value(l_vs).item();
    loss = ag::add(t, loss, ag::scale(t, l_vs, cfg_.lambda_a_vs));
  }
  out.loss = loss;
  out.has_loss = true;
  out.terms.total = t.value(loss).item();
  out.terms.alignment = out.terms.total - out.terms.cross_entropy;
  return out;
}

double FusionModel::query_loss(const kg::TokenizedQuery& q, const kg::MultimodalKG& mkg, num::GradientBuffer* sink,
                               QueryTerms* terms) const {
  if (!q.target) throw TrainingError("training query has no target entity");
  mpt::Graph g;
  const FusionGraph f = forward(g, q, mkg);
  if (sink != nullptr) g.tape().backward(f.loss, sink);
  if (terms != nullptr) *terms = f.terms;
  return f.terms.total;
}

mpt::QueryLoss FusionModel::loss_function(const kg::MultimodalKG& mkg) const {
  return [this, &mkg](const kg::TokenizedQuery& q, num::GradientBuffer* sink) { return query_loss(q, mkg, sink); };
}

std::vector<double> FusionModel::score_tails(EntityId head, RelationId relation, const kg::MultimodalKG& mkg,
                                             const kg::Vocabulary& vocab) const {
  const kg::TokenizedQuery q = kg::build_reason_template(head, relation, std::nullopt, mkg, vocab);
  mpt::Graph g;
  const FusionGraph f = forward(g, q, mkg);
  const auto row = g.tape().value(f.logits).values();
  return {row.begin(), row.end()};
}

eval::Scorer FusionModel::scorer(const kg::MultimodalKG& mkg, const kg::Vocabulary& vocab) const {
  return [this, &mkg, &vocab](const Triple& query, eval::Direction direction) {
    if (direction != eval::Direction::Tail) {
      throw EvalError("the multimodal model only predicts tails; head prediction is unavailable");
    }
    return score_tails(query.head, query.relation, mkg, vocab);
  };
}

std::vector<kg::TokenizedQuery> pretrain_queries(const kg::MultimodalKG& mkg, const kg::Vocabulary& vocab) {
  std::vector<kg::TokenizedQuery> out;
  out.reserve(mkg.num_entities());
  for (std::size_t e = 0; e < mkg.num_entities(); ++e) out.push_back(kg::build_pretrain_template(EntityId(e), mkg, vocab));
  return out;
}

std::vector<kg::TokenizedQuery> finetune_queries(std::span<const Triple> triples, const kg::MultimodalKG& mkg,
                                                 const kg::Vocabulary& vocab) {
  std::vector<kg::TokenizedQuery> out;
  out.reserve(triples.size());
  for (const Triple& tr : triples) out.push_back(kg::build_reason_template(tr.head, tr.relation, tr.tail, mkg, vocab));
  return out;
}

void save_fusion_model(const std::filesystem::path& path, const FusionModel& model,
                       std::vector<std::pair<std::string, std::string>> extra_meta) {
  extra_meta.emplace_back("fusion.trainable_projection", model.config().trainable_projection ? "1" : "0");
  mpt::save_model(path, model.backbone(), std::move(extra_meta));
}

void load_fusion_parameters(const std::filesystem::path& path, FusionModel& model) {
  const num::TensorFile file = num::read_tensor_file(path);
  const mpt::ModelConfig stored = mpt::ModelConfig::from_meta(file.meta);
  if (stored.to_meta() != model.backbone().config().to_meta()) {
    throw FormatError(path.string() + ": checkpoint model config differs from the configured model");
  }
  num::load_checkpoint(path, model.params());
}

}  // namespace sgmpt::fusion
