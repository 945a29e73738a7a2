#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sgmpt/autograd.hpp"
#include "sgmpt/ids.hpp"
#include "sgmpt/kg_data.hpp"
#include "sgmpt/parameter.hpp"
#include "sgmpt/ranking.hpp"
#include "sgmpt/tensor.hpp"

// Small multimodal transformer: a text stack, a vision stack over patch
// features and a multimodal stack whose layers cross-attend from text to
// vision. Entity prediction reads the [MASK] state against the (tied) input
// embeddings of the entity tokens.
namespace sgmpt::mpt {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t text_layers = 2;    // L_t
  std::size_t vision_layers = 2;  // L_v
  std::size_t fusion_layers = 2;  // L_m
  std::size_t ffn_dim = 128;
  std::size_t max_seq_len = 64;
  std::size_t num_entities = 0;
  std::size_t vocab_size = 0;
  std::size_t entity_token_begin = kg::Vocabulary::kNumSpecial + kg::Vocabulary::kNumTemplate;
  std::size_t patches = 0;    // P
  std::size_t patch_dim = 0;  // D_in
  double init_std = 0.02;
  std::uint64_t seed = 1;

  std::size_t head_dim() const { return dim / heads; }
  // Depth of the text-side and vision-side paths through the whole model.
  std::size_t text_path_layers() const { return text_layers + fusion_layers; }
  std::size_t vision_path_layers() const { return vision_layers + fusion_layers; }

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_meta() const;
  static ModelConfig from_meta(const std::vector<std::pair<std::string, std::string>>& meta);
};

// Sizes the vocabulary and entity/patch dimensions from a dataset.
ModelConfig fit_to_dataset(ModelConfig cfg, const kg::MultimodalKG& mkg, const kg::Vocabulary& vocab);

// One forward graph. Parameter leaves are created once per graph so a tied
// parameter used twice accumulates into a single gradient.
class Graph {
 public:
  num::Tape& tape() { return tape_; }
  num::Var param(const num::Parameter& p);

 private:
  num::Tape tape_;
  std::unordered_map<const num::Parameter*, num::Var> leaves_;
};

class Backbone {
 public:
  explicit Backbone(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  num::ParameterStore& params() { return params_; }
  const num::ParameterStore& params() const { return params_; }

  // T x D after the text layers. SequenceTooLongError beyond max_seq_len.
  num::Var encode_text(Graph& g, std::span<const TokenId> tokens) const;
  // P x D patch states of one image after the vision layers.
  num::Var encode_patches(Graph& g, num::Var patches) const;
  // I x D: each image's patches pass the vision layers and are mean-pooled.
  // An entity without images is encoded from the learned placeholder.
  num::Var encode_vision(Graph& g, const kg::VisualAttribute& attr) const;
  // T x D text-side states after the multimodal layers and a final norm.
  num::Var encode_multimodal(Graph& g, num::Var text, num::Var vision) const;
  // 1 x N: h_mask against every entity token embedding.
  num::Var mlm_logits(Graph& g, num::Var h_mask) const;

  // Value-only conveniences over a throwaway graph.
  num::Tensor encode_text(std::span<const TokenId> tokens) const;
  num::Tensor encode_patches(const num::Tensor& patches) const;
  num::Tensor encode_vision(const kg::VisualAttribute& attr) const;
  num::Tensor encode_multimodal(const num::Tensor& text, const num::Tensor& vision) const;
  num::Tensor mlm_logits(const num::Tensor& h_mask) const;

  // Per-head softmax weights of one multimodal layer's cross-attention for
  // the given layer input (T x I each).
  std::vector<num::Tensor> cross_attention_weights(std::size_t layer, const num::Tensor& text,
                                                   const num::Tensor& vision) const;

  // N x D rows of the token embedding belonging to entity tokens.
  num::Tensor entity_embeddings() const;

 private:
  struct Norm {
    num::Parameter* gain;
    num::Parameter* bias;
  };
  struct Attention {
    std::vector<num::Parameter*> wq, wk, wv, wo;  // per head
    num::Parameter* bo;
  };
  struct FeedForward {
    num::Parameter *w1, *b1, *w2, *b2;
  };
  struct Layer {
    Norm ln_self;
    Attention self;
    bool has_cross = false;
    Norm ln_cross;
    Norm ln_memory;
    Attention cross;
    Norm ln_ffn;
    FeedForward ffn;
  };

  Norm make_norm(const std::string& prefix);
  Attention make_attention(const std::string& prefix, std::mt19937_64& rng);
  FeedForward make_ffn(const std::string& prefix, std::mt19937_64& rng);
  Layer make_layer(const std::string& prefix, bool cross, std::mt19937_64& rng);

  num::Var norm(Graph& g, const Norm& n, num::Var x) const;
  num::Var attention(Graph& g, const Attention& a, num::Var queries, num::Var memory) const;
  num::Var feed_forward(Graph& g, const FeedForward& f, num::Var x) const;
  num::Var layer(Graph& g, const Layer& l, num::Var x, const num::Var* memory) const;

  ModelConfig cfg_;
  num::ParameterStore params_;
  num::Parameter* token_embedding_ = nullptr;
  num::Parameter* position_embedding_ = nullptr;
  num::Parameter* patch_projection_ = nullptr;
  num::Parameter* patch_bias_ = nullptr;
  num::Parameter* patch_position_ = nullptr;
  num::Parameter* no_image_ = nullptr;
  std::vector<Layer> text_layers_;
  std::vector<Layer> vision_layers_;
  std::vector<Layer> fusion_layers_;
  Norm final_norm_{};
};

num::Tensor mlm_logits(const num::Tensor& h_mask, const num::Tensor& entity_table);
double cross_entropy_loss(const num::Tensor& logits, EntityId target);

// Forward pass of one query without any structural input; returns the 1 x N logits.
num::Var backbone_logits(Graph& g, const Backbone& model, const kg::TokenizedQuery& q, const kg::MultimodalKG& mkg);
// Cross-entropy of one training query. When `sink` is set, runs backward into it.
double backbone_query_loss(const Backbone& model, const kg::TokenizedQuery& q, const kg::MultimodalKG& mkg,
                           num::GradientBuffer* sink);

// Tail scores of the bare model (no structural input).
eval::Scorer backbone_scorer(const Backbone& model, const kg::MultimodalKG& mkg, const kg::Vocabulary& vocab);

void save_model(const std::filesystem::path& path, const Backbone& model,
                std::vector<std::pair<std::string, std::string>> extra_meta = {});
// Rebuilds the model from the checkpoint's config header and values.
Backbone load_model(const std::filesystem::path& path);

}  // namespace sgmpt::mpt
