#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgmpt/ids.hpp"
#include "sgmpt/tensor.hpp"

namespace sgmpt::kg {

// Bidirectional name <-> dense id table; ids follow first appearance.
class NameTable {
 public:
  std::size_t intern(const std::string& name);
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t at(const std::string& name) const;  // LookupError when absent
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
};

enum class InternMode {
  Extend,  // unseen names get fresh ids
  Fixed,   // unseen names are a LookupError
};

struct TripleFile {
  std::vector<Triple> triples;
  NameTable entities;
  NameTable relations;
};

// `head<TAB>relation<TAB>tail` per line. Duplicate lines are kept.
TripleFile load_triples(const std::filesystem::path& path);
std::vector<Triple> load_triples(const std::filesystem::path& path, NameTable& entities, NameTable& relations,
                                 InternMode mode);
void write_triples(const std::filesystem::path& path, std::span<const Triple> triples, const NameTable& entities,
                   const NameTable& relations);

struct TextAttribute {
  std::vector<TokenId> tokens;  // empty when the entity has no description
};

// Patch-feature matrices (P x D_in) standing in for an entity's images.
struct VisualAttribute {
  std::vector<num::Tensor> images;  // empty -> the encoder's learned placeholder
};

struct MultimodalKG {
  NameTable entities;
  NameTable relations;
  std::vector<Triple> train;
  std::vector<Triple> dev;
  std::vector<Triple> test;
  std::vector<std::vector<std::string>> descriptions;  // words per entity, may be empty
  std::vector<VisualAttribute> visuals;                 // per entity
  std::size_t patches = 0;    // P
  std::size_t patch_dim = 0;  // D_in

  std::size_t num_entities() const { return entities.size(); }
  std::size_t num_relations() const { return relations.size(); }
  std::vector<Triple> all_triples() const;
  // Id ranges, attribute coverage, patch shapes, split disjointness.
  void validate() const;
};

// Dataset directory layout (see docs/FORMATS.md): entities.txt, relations.txt,
// train.tsv, dev.tsv, test.tsv, descriptions.tsv, visual.txt.
void write_dataset(const std::filesystem::path& dir, const MultimodalKG& mkg);
MultimodalKG load_dataset(const std::filesystem::path& dir);

// `entity<TAB>free text`; whitespace-split words.
void load_descriptions(const std::filesystem::path& path, MultimodalKG& mkg);
void write_descriptions(const std::filesystem::path& path, const MultimodalKG& mkg);
// Header `entity num_images P D_in`, then num_images*P rows of D_in numbers.
void load_visual_features(const std::filesystem::path& path, MultimodalKG& mkg);
void write_visual_features(const std::filesystem::path& path, const MultimodalKG& mkg);

enum class TokenKind { Special, Template, Entity, Relation, Word };

// Token id layout: [CLS] [SEP] [MASK] | template words | entities | relations | words.
// Description words that name an entity are not repeated in the word range.
class Vocabulary {
 public:
  static constexpr TokenId kCls{0u};
  static constexpr TokenId kSep{1u};
  static constexpr TokenId kMask{2u};
  static constexpr std::size_t kNumSpecial = 3;
  static constexpr std::size_t kNumTemplate = 4;  // "is the description of"

  Vocabulary(std::size_t num_entities, std::vector<std::string> entity_names, std::vector<std::string> relation_names,
             std::vector<std::string> words);

  std::size_t size() const { return word_begin_ + words_.size(); }
  std::size_t num_entities() const { return entity_names_.size(); }
  std::size_t num_relations() const { return relation_names_.size(); }
  std::size_t num_words() const { return words_.size(); }
  std::size_t entity_begin() const { return entity_begin_; }

  TokenId template_token(std::size_t i) const { return TokenId(kNumSpecial + i); }
  TokenId entity_token(EntityId e) const;
  TokenId relation_token(RelationId r) const;
  std::optional<TokenId> word_token(const std::string& word) const;

  TokenKind kind(TokenId t) const;
  EntityId entity_of(TokenId t) const;      // LookupError unless an entity token
  RelationId relation_of(TokenId t) const;  // LookupError unless a relation token
  const std::string& token_string(TokenId t) const;
  TokenId lookup(TokenKind kind, const std::string& text) const;

  // A word spelled like an entity name becomes that entity's token.
  TextAttribute encode_words(std::span<const std::string> words) const;
  std::string decode(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> word_ids_;
  std::unordered_map<std::string, std::size_t> entity_ids_;
  std::size_t entity_begin_;
  std::size_t relation_begin_;
  std::size_t word_begin_;
};

Vocabulary build_vocabulary(const MultimodalKG& mkg);

struct TokenizedQuery {
  std::vector<TokenId> tokens;
  std::size_t mask_pos = 0;
  std::optional<std::size_t> head_entity_pos;
  std::optional<EntityId> target;  // unset at inference
  EntityId subject;                // entity whose attributes and structure row are used
  std::optional<RelationId> relation;
};

// [CLS] A^t_e is the description of [MASK] [SEP], target e.
TokenizedQuery build_pretrain_template(EntityId e, const MultimodalKG& mkg, const Vocabulary& vocab);
// [CLS] e_h A^t_h [SEP] r [SEP] [MASK] [SEP], target t.
TokenizedQuery build_reason_template(EntityId head, RelationId relation, std::optional<EntityId> tail,
                                     const MultimodalKG& mkg, const Vocabulary& vocab);
// Throws if mask_pos / head_entity_pos do not index the claimed tokens.
void check_query(const TokenizedQuery& q, const Vocabulary& vocab);

}  // namespace sgmpt::kg
