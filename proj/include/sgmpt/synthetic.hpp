#pragma once

#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <optional>
#include <vector>

#include "sgmpt/ids.hpp"
#include "sgmpt/kg_data.hpp"

namespace sgmpt::kg {

struct SyntheticConfig {
  std::size_t num_entities = 200;
  std::size_t num_relations = 20;
  std::size_t num_triples = 3000;
  double structure_signal = 0.9;  // probability a tail follows the relational rule
  double text_noise = 0.5;        // probability a description word is replaced by a random one
  double vision_noise = 0.5;      // std-dev of per-image noise around the entity prototype
  std::size_t description_length = 4;
  std::size_t images_per_entity = 1;
  std::size_t patches = 4;
  std::size_t patch_dim = 8;
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
  double missing_text_fraction = 0.0;
  double missing_image_fraction = 0.0;

  void validate() const;  // ConfigError on infeasible or out-of-range settings
};

// Entities sit on a hidden line (a seeded permutation); relation r moves r+1
// steps along it and has no rule tail past the end. The rule is compositional:
// tail(tail(h, a), b) lands where the offsets add up.
class SyntheticRule {
 public:
  SyntheticRule(std::size_t num_entities, std::size_t num_relations, std::uint64_t seed);

  std::optional<EntityId> tail(EntityId head, RelationId relation) const;
  EntityId at(std::size_t position) const { return at_position_[position]; }
  std::size_t position(EntityId e) const { return position_[e.index()]; }
  std::size_t offset(RelationId r) const { return r.index() % std::max<std::size_t>(position_.size() - 1, 1) + 1; }

 private:
  std::vector<std::size_t> position_;
  std::vector<EntityId> at_position_;
};

// Pure function of (cfg, seed). Entity names are e<i>, relation names r<j>.
// Every (head, relation) drawn has a rule tail; the triple uses it with
// probability structure_signal and a uniform tail otherwise.
// The description of h lists the rule tails of relations 0..L-1 by entity
// name; each is replaced by a random filler word w<k> with probability
// text_noise (or when the rule has no tail).
MultimodalKG generate_synthetic_mkg(const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace sgmpt::kg
