#include "sgmpt/backbone.hpp"

#include <cmath>
#include <random>
#include <string>

#include "sgmpt/checkpoint.hpp"
#include "sgmpt/errors.hpp"
#include "sgmpt/tensor_ops.hpp"

namespace sgmpt::mpt {

using num::Tensor;
using num::Var;
namespace ag = num::ag;

void ModelConfig::validate() const {
  if (dim == 0) throw ConfigError("model.dim must be >= 1");
  if (heads == 0) throw ConfigError("model.heads must be >= 1");
  if (dim % heads != 0) {
    throw ConfigError("model.dim (" + std::to_string(dim) + ") must be divisible by model.heads (" +
                      std::to_string(heads) + ")");
  }
  if (text_layers == 0 || vision_layers == 0 || fusion_layers == 0) {
    throw ConfigError("model.text_layers, model.vision_layers and model.fusion_layers must be >= 1");
  }
  if (ffn_dim == 0) throw ConfigError("model.ffn_dim must be >= 1");
  if (max_seq_len == 0) throw ConfigError("model.max_seq_len must be >= 1");
  if (num_entities == 0) throw ConfigError("model.num_entities must be >= 1");
  if (vocab_size < entity_token_begin + num_entities) {
    throw ConfigError("model.vocab_size is too small for " + std::to_string(num_entities) + " entity tokens");
  }
  if (patches == 0 || patch_dim == 0) throw ConfigError("model.patches and model.patch_dim must be >= 1");
  if (!(init_std > 0.0) || !std::isfinite(init_std)) throw ConfigError("model.init_std must be a positive number");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_meta() const {
  return {{"model.dim", std::to_string(dim)},
          {"model.heads", std::to_string(heads)},
          {"model.text_layers", std::to_string(text_layers)},
          {"model.vision_layers", std::to_string(vision_layers)},
          {"model.fusion_layers", std::to_string(fusion_layers)},
          {"model.ffn_dim", std::to_string(ffn_dim)},
          {"model.max_seq_len", std::to_string(max_seq_len)},
          {"model.num_entities", std::to_string(num_entities)},
          {"model.vocab_size", std::to_string(vocab_size)},
          {"model.entity_token_begin", std::to_string(entity_token_begin)},
          {"model.patches", std::to_string(patches)},
          {"model.patch_dim", std::to_string(patch_dim)},
          {"model.init_std", num::format_hexfloat(init_std)},
          {"model.seed", std::to_string(seed)}};
}

ModelConfig ModelConfig::from_meta(const std::vector<std::pair<std::string, std::string>>& meta) {
  const auto get = [&](const std::string& key) -> const std::string& {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw FormatError("checkpoint header lacks '" + key + "'");
  };
  const auto size = [&](const std::string& key) { return static_cast<std::size_t>(std::stoull(get(key))); };
  ModelConfig c;
  c.dim = size("model.dim");
  c.heads = size("model.heads");
  c.text_layers = size("model.text_layers");
  c.vision_layers = size("model.vision_layers");
  c.fusion_layers = size("model.fusion_layers");
  c.ffn_dim = size("model.ffn_dim");
  c.max_seq_len = size("model.max_seq_len");
  c.num_entities = size("model.num_entities");
  c.vocab_size = size("model.vocab_size");
  c.entity_token_begin = size("model.entity_token_begin");
  c.patches = size("model.patches");
  c.patch_dim = size("model.patch_dim");
  c.init_std = num::parse_double(get("model.init_std"));
  c.seed = std::stoull(get("model.seed"));
  c.validate();
  return c;
}

ModelConfig fit_to_dataset(ModelConfig cfg, const kg::MultimodalKG& mkg, const kg::Vocabulary& vocab) {
  cfg.num_entities = mkg.num_entities();
  cfg.vocab_size = vocab.size();
  cfg.entity_token_begin = vocab.entity_begin();
  cfg.patches = mkg.patches;
  cfg.patch_dim = mkg.patch_dim;
  return cfg;
}

Var Graph::param(const num::Parameter& p) {
  auto it = leaves_.find(&p);
  if (it != leaves_.end()) return it->second;
  const Var v = tape_.parameter(p);
  leaves_.emplace(&p, v);
  return v;
}

// ------------------------------------------------------------ construction

namespace {

Tensor normal(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = d(rng);
  return t;
}

}  // namespace

Backbone::Backbone(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t d = cfg_.dim;
  token_embedding_ = &params_.add("text.token_embedding", normal(rng, cfg_.vocab_size, d, cfg_.init_std));
  position_embedding_ = &params_.add("text.position_embedding", normal(rng, cfg_.max_seq_len, d, cfg_.init_std));
  patch_projection_ = &params_.add("vision.patch_projection",
                                   normal(rng, cfg_.patch_dim, d, 1.0 / std::sqrt(double(cfg_.patch_dim))));
  patch_bias_ = &params_.add("vision.patch_bias", Tensor(1, d));
  patch_position_ = &params_.add("vision.patch_position", normal(rng, cfg_.patches, d, cfg_.init_std));
  no_image_ = &params_.add("vision.no_image", normal(rng, cfg_.patches, cfg_.patch_dim, 1.0));

  for (std::size_t i = 0; i < cfg_.text_layers; ++i) text_layers_.push_back(make_layer("text.layer" + std::to_string(i), false, rng));
  for (std::size_t i = 0; i < cfg_.vision_layers; ++i)
    vision_layers_.push_back(make_layer("vision.layer" + std::to_string(i), false, rng));
  for (std::size_t i = 0; i < cfg_.fusion_layers; ++i)
    fusion_layers_.push_back(make_layer("multimodal.layer" + std::to_string(i), true, rng));
  final_norm_ = make_norm("multimodal.final_norm");
}

Backbone::Norm Backbone::make_norm(const std::string& prefix) {
  Norm n;
  n.gain = &params_.add(prefix + ".gain", Tensor(1, cfg_.dim, 1.0));
  n.bias = &params_.add(prefix + ".bias", Tensor(1, cfg_.dim));
  return n;
}

Backbone::Attention Backbone::make_attention(const std::string& prefix, std::mt19937_64& rng) {
  Attention a;
  const std::size_t d = cfg_.dim;
  const std::size_t dh = cfg_.head_dim();
  const double in_std = 1.0 / std::sqrt(double(d));
  const double out_std = 1.0 / std::sqrt(double(d));
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    const std::string p = prefix + ".head" + std::to_string(h);
    a.wq.push_back(&params_.add(p + ".wq", normal(rng, d, dh, in_std)));
    a.wk.push_back(&params_.add(p + ".wk", normal(rng, d, dh, in_std)));
    a.wv.push_back(&params_.add(p + ".wv", normal(rng, d, dh, in_std)));
    a.wo.push_back(&params_.add(p + ".wo", normal(rng, dh, d, out_std)));
  }
  a.bo = &params_.add(prefix + ".bo", Tensor(1, d));
  return a;
}

Backbone::FeedForward Backbone::make_ffn(const std::string& prefix, std::mt19937_64& rng) {
  FeedForward f;
  const std::size_t d = cfg_.dim;
  const std::size_t h = cfg_.ffn_dim;
  f.w1 = &params_.add(prefix + ".w1", normal(rng, d, h, 1.0 / std::sqrt(double(d))));
  f.b1 = &params_.add(prefix + ".b1", Tensor(1, h));
  f.w2 = &params_.add(prefix + ".w2", normal(rng, h, d, 1.0 / std::sqrt(double(h))));
  f.b2 = &params_.add(prefix + ".b2", Tensor(1, d));
  return f;
}

Backbone::Layer Backbone::make_layer(const std::string& prefix, bool cross, std::mt19937_64& rng) {
  Layer l;
  l.ln_self = make_norm(prefix + ".self_norm");
  l.self = make_attention(prefix + ".self", rng);
  l.has_cross = cross;
  if (cross) {
    l.ln_cross = make_norm(prefix + ".cross_norm");
    l.ln_memory = make_norm(prefix + ".memory_norm");
    l.cross = make_attention(prefix + ".cross", rng);
  }
  l.ln_ffn = make_norm(prefix + ".ffn_norm");
  l.ffn = make_ffn(prefix + ".ffn", rng);
  return l;
}

// ----------------------------------------------------------------- forward

Var Backbone::norm(Graph& g, const Norm& n, Var x) const {
  return ag::layer_norm(g.tape(), x, g.param(*n.gain), g.param(*n.bias));
}

Var Backbone::attention(Graph& g, const Attention& a, Var queries, Var memory) const {
  num::Tape& t = g.tape();
  Var out{};
  for (std::size_t h = 0; h < a.wq.size(); ++h) {
    const Var q = ag::matmul(t, queries, g.param(*a.wq[h]));
    const Var k = ag::matmul(t, memory, g.param(*a.wk[h]));
    const Var v = ag::matmul(t, memory, g.param(*a.wv[h]));
    const Var head = ag::matmul(t, ag::scaled_dot_attention(t, q, k, v), g.param(*a.wo[h]));
    out = h == 0 ? head : ag::add(t, out, head);
  }
  return ag::add_row(t, out, g.param(*a.bo));
}

Var Backbone::feed_forward(Graph& g, const FeedForward& f, Var x) const {
  num::Tape& t = g.tape();
  const Var hidden = ag::gelu(t, ag::add_row(t, ag::matmul(t, x, g.param(*f.w1)), g.param(*f.b1)));
  return ag::add_row(t, ag::matmul(t, hidden, g.param(*f.w2)), g.param(*f.b2));
}

Var Backbone::layer(Graph& g, const Layer& l, Var x, const Var* memory) const {
  num::Tape& t = g.tape();
  const Var xs = norm(g, l.ln_self, x);
  x = ag::add(t, x, attention(g, l.self, xs, xs));
  if (l.has_cross) {
    const Var mem = norm(g, l.ln_memory, *memory);
    x = ag::add(t, x, attention(g, l.cross, norm(g, l.ln_cross, x), mem));
  }
  return ag::add(t, x, feed_forward(g, l.ffn, norm(g, l.ln_ffn, x)));
}

Var Backbone::encode_text(Graph& g, std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw DimensionError("encode_text: empty token sequence");
  if (tokens.size() > cfg_.max_seq_len) {
    throw SequenceTooLongError("encode_text: sequence of " + std::to_string(tokens.size()) +
                               " tokens exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  std::vector<std::size_t> ids(tokens.size());
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].index() >= cfg_.vocab_size) {
      throw LookupError("encode_text: token id " + std::to_string(tokens[i].index()) + " outside the vocabulary");
    }
    ids[i] = tokens[i].index();
    positions[i] = i;
  }
  num::Tape& t = g.tape();
  Var x = ag::add(t, ag::gather_rows(t, g.param(*token_embedding_), ids),
                  ag::gather_rows(t, g.param(*position_embedding_), positions));
  for (const Layer& l : text_layers_) x = layer(g, l, x, nullptr);
  return x;
}

Var Backbone::encode_patches(Graph& g, Var patches) const {
  num::Tape& t = g.tape();
  Var x = ag::add_row(t, ag::matmul(t, patches, g.param(*patch_projection_)), g.param(*patch_bias_));
  x = ag::add(t, x, g.param(*patch_position_));
  for (const Layer& l : vision_layers_) x = layer(g, l, x, nullptr);
  return x;
}

Var Backbone::encode_vision(Graph& g, const kg::VisualAttribute& attr) const {
  num::Tape& t = g.tape();
  std::vector<Var> pooled;
  if (attr.images.empty()) {
    pooled.push_back(ag::mean_rows(t, encode_patches(g, g.param(*no_image_))));
  } else {
    for (const Tensor& img : attr.images) {
      if (img.rows() != cfg_.patches || img.cols() != cfg_.patch_dim) {
        throw DimensionError("encode_vision: image patches " + num::shape_string(img) + " do not match [" +
                             std::to_string(cfg_.patches) + "x" + std::to_string(cfg_.patch_dim) + "]");
      }
      pooled.push_back(ag::mean_rows(t, encode_patches(g, t.constant(img))));
    }
  }
  return pooled.size() == 1 ? pooled.front() : ag::concat_rows(t, pooled);
}

Var Backbone::encode_multimodal(Graph& g, Var text, Var vision) const {
  num::Tape& t = g.tape();
  if (t.value(text).cols() != cfg_.dim || t.value(vision).cols() != cfg_.dim) {
    throw DimensionError("encode_multimodal: expected D=" + std::to_string(cfg_.dim) + " states, got " +
                         num::shape_string(t.value(text)) + " and " + num::shape_string(t.value(vision)));
  }
  Var x = text;
  for (const Layer& l : fusion_layers_) x = layer(g, l, x, &vision);
  return norm(g, final_norm_, x);
}

Var Backbone::mlm_logits(Graph& g, Var h_mask) const {
  num::Tape& t = g.tape();
  const Var entities = ag::slice_rows(t, g.param(*token_embedding_), cfg_.entity_token_begin, cfg_.num_entities);
  return ag::matmul_nt(t, h_mask, entities);
}

Tensor Backbone::encode_text(std::span<const TokenId> tokens) const {
  Graph g;
  return g.tape().value(encode_text(g, tokens));
}

Tensor Backbone::encode_patches(const Tensor& patches) const {
  Graph g;
  return g.tape().value(encode_patches(g, g.tape().constant(patches)));
}

Tensor Backbone::encode_vision(const kg::VisualAttribute& attr) const {
  Graph g;
  return g.tape().value(encode_vision(g, attr));
}

Tensor Backbone::encode_multimodal(const Tensor& text, const Tensor& vision) const {
  Graph g;
  return g.tape().value(encode_multimodal(g, g.tape().constant(text), g.tape().constant(vision)));
}

Tensor Backbone::mlm_logits(const Tensor& h_mask) const {
  Graph g;
  return g.tape().value(mlm_logits(g, g.tape().constant(h_mask)));
}

std::vector<Tensor> Backbone::cross_attention_weights(std::size_t layer_index, const Tensor& text,
                                                      const Tensor& vision) const {
  if (layer_index >= fusion_layers_.size()) throw LookupError("cross_attention_weights: no such layer");
  const Layer& l = fusion_layers_[layer_index];
  // Reproduce the layer up to the cross-attention scores.
  Graph g;
  num::Tape& t = g.tape();
  Var x = t.constant(text);
  const Var xs = norm(g, l.ln_self, x);
  x = ag::add(t, x, attention(g, l.self, xs, xs));
  const Var q_in = norm(g, l.ln_cross, x);
  const Var mem = norm(g, l.ln_memory, t.constant(vision));
  std::vector<Tensor> out;
  const double inv = 1.0 / std::sqrt(double(cfg_.head_dim()));
  for (std::size_t h = 0; h < l.cross.wq.size(); ++h) {
    const Tensor q = num::matmul(t.value(q_in), l.cross.wq[h]->value);
    const Tensor k = num::matmul(t.value(mem), l.cross.wk[h]->value);
    out.push_back(num::softmax(num::scale(num::matmul_nt(q, k), inv), num::Axis::Rows));
  }
  return out;
}

Tensor Backbone::entity_embeddings() const {
  return num::slice_rows(token_embedding_->value, cfg_.entity_token_begin, cfg_.num_entities);
}

// ------------------------------------------------------------------ losses

Tensor mlm_logits(const Tensor& h_mask, const Tensor& entity_table) { return num::matmul_nt(h_mask, entity_table); }

double cross_entropy_loss(const Tensor& logits, EntityId target) {
  num::Tape t;
  return t.value(ag::cross_entropy(t, t.constant(logits), target.index())).item();
}

Var backbone_logits(Graph& g, const Backbone& model, const kg::TokenizedQuery& q, const kg::MultimodalKG& mkg) {
  const Var text = model.encode_text(g, q.tokens);
  const Var vision = model.encode_vision(g, mkg.visuals.at(q.subject.index()));
  const Var fused = model.encode_multimodal(g, text, vision);
  return model.mlm_logits(g, ag::slice_rows(g.tape(), fused, q.mask_pos, 1));
}

double backbone_query_loss(const Backbone& model, const kg::TokenizedQuery& q, const kg::MultimodalKG& mkg,
                           num::GradientBuffer* sink) {
  if (!q.target) throw TrainingError("training query has no target entity");
  Graph g;
  const Var loss = ag::cross_entropy(g.tape(), backbone_logits(g, model, q, mkg), q.target->index());
  if (sink != nullptr) g.tape().backward(loss, sink);
  return g.tape().value(loss).item();
}

eval::Scorer backbone_scorer(const Backbone& model, const kg::MultimodalKG& mkg, const kg::Vocabulary& vocab) {
  return [&model, &mkg, &vocab](const Triple& query, eval::Direction direction) {
    if (direction != eval::Direction::Tail) throw EvalError("the multimodal model only predicts tails");
    const kg::TokenizedQuery q = kg::build_reason_template(query.head, query.relation, std::nullopt, mkg, vocab);
    Graph g;
    const auto row = g.tape().value(backbone_logits(g, model, q, mkg)).values();
    return std::vector<double>(row.begin(), row.end());
  };
}

void save_model(const std::filesystem::path& path, const Backbone& model,
                std::vector<std::pair<std::string, std::string>> extra_meta) {
  auto meta = model.config().to_meta();
  meta.insert(meta.end(), extra_meta.begin(), extra_meta.end());
  num::save_checkpoint(path, model.params(), std::move(meta));
}

Backbone load_model(const std::filesystem::path& path) {
  const num::TensorFile header = num::read_tensor_file(path);
  Backbone model(ModelConfig::from_meta(header.meta));
  num::load_checkpoint(path, model.params());
  return model;
}

}  // namespace sgmpt::mpt
