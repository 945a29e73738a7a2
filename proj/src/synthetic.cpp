#include "sgmpt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

#include "sgmpt/errors.hpp"

namespace sgmpt::kg {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void SyntheticConfig::validate() const {
  if (num_entities == 0) throw ConfigError("synth: num_entities must be positive");
  if (num_relations == 0) throw ConfigError("synth: num_relations must be positive");
  const double capacity = static_cast<double>(num_entities) * static_cast<double>(num_entities) *
                          static_cast<double>(num_relations);
  if (static_cast<double>(num_triples) > capacity) {
    throw ConfigError("synth: num_triples " + std::to_string(num_triples) + " exceeds N^2*R = " +
                      std::to_string(static_cast<long long>(capacity)));
  }
  if (!in_unit(structure_signal)) throw ConfigError("synth: structure_signal must lie in [0,1]");
  if (!in_unit(text_noise)) throw ConfigError("synth: text_noise must lie in [0,1]");
  if (!(vision_noise >= 0.0) || !std::isfinite(vision_noise)) throw ConfigError("synth: vision_noise must be >= 0");
  if (!in_unit(dev_fraction) || !in_unit(test_fraction) || dev_fraction + test_fraction >= 1.0) {
    throw ConfigError("synth: dev_fraction + test_fraction must be < 1");
  }
  if (!in_unit(missing_text_fraction) || !in_unit(missing_image_fraction)) {
    throw ConfigError("synth: missing fractions must lie in [0,1]");
  }
  if (patches == 0 || patch_dim == 0) throw ConfigError("synth: patches and patch_dim must be positive");
}

SyntheticRule::SyntheticRule(std::size_t num_entities, std::size_t /*num_relations*/, std::uint64_t seed)
    : position_(num_entities), at_position_(num_entities) {
  std::vector<std::size_t> order(num_entities);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix(seed ^ 0x5eed0001ULL));
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t p = 0; p < num_entities; ++p) {
    at_position_[p] = EntityId(order[p]);
    position_[order[p]] = p;
  }
}

std::optional<EntityId> SyntheticRule::tail(EntityId head, RelationId relation) const {
  const std::size_t p = position_[head.index()] + offset(relation);
  if (p >= position_.size()) return std::nullopt;
  return at_position_[p];
}

MultimodalKG generate_synthetic_mkg(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = cfg.num_entities;
  const std::size_t r = cfg.num_relations;
  const SyntheticRule rule(n, r, seed);
  std::mt19937_64 rng(mix(seed));

  MultimodalKG mkg;
  for (std::size_t e = 0; e < n; ++e) mkg.entities.intern("e" + std::to_string(e));
  for (std::size_t j = 0; j < r; ++j) mkg.relations.intern("r" + std::to_string(j));

  // Triples: distinct, rule tail with probability s, uniform tail otherwise.
  std::uniform_int_distribution<std::size_t> pick_entity(0, n - 1);
  std::uniform_int_distribution<std::size_t> pick_relation(0, r - 1);
  std::bernoulli_distribution follow_rule(cfg.structure_signal);
  std::unordered_set<Triple> seen;
  std::vector<Triple> triples;
  triples.reserve(cfg.num_triples);
  const std::size_t max_attempts = 50 * cfg.num_triples + 1000;
  for (std::size_t attempt = 0; triples.size() < cfg.num_triples && attempt < max_attempts; ++attempt) {
    const RelationId rel(pick_relation(rng));
    // Heads are drawn from the positions that have a rule tail.
    const std::size_t span = n > rule.offset(rel) ? n - rule.offset(rel) : n;
    const std::size_t p = std::uniform_int_distribution<std::size_t>(0, span - 1)(rng);
    const EntityId h = n > rule.offset(rel) ? rule.at(p) : EntityId(p);
    const auto ruled = rule.tail(h, rel);
    const EntityId t = ruled && follow_rule(rng) ? *ruled : EntityId(pick_entity(rng));
    const Triple tr{h, rel, t};
    if (seen.insert(tr).second) triples.push_back(tr);
  }
  if (triples.size() < cfg.num_triples) {
    // Near saturation: fill from the remaining triples in a seeded order.
    std::vector<Triple> rest;
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t j = 0; j < r; ++j)
        for (std::size_t t = 0; t < n; ++t) {
          const Triple tr{EntityId(h), RelationId(j), EntityId(t)};
          if (!seen.count(tr)) rest.push_back(tr);
        }
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t i = 0; triples.size() < cfg.num_triples; ++i) triples.push_back(rest[i]);
  }

  std::shuffle(triples.begin(), triples.end(), rng);
  const auto total = static_cast<double>(triples.size());
  const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * total));
  const auto n_dev = static_cast<std::size_t>(std::llround(cfg.dev_fraction * total));
  mkg.test.assign(triples.begin(), triples.begin() + static_cast<std::ptrdiff_t>(n_test));
  mkg.dev.assign(triples.begin() + static_cast<std::ptrdiff_t>(n_test),
                 triples.begin() + static_cast<std::ptrdiff_t>(n_test + n_dev));
  mkg.train.assign(triples.begin() + static_cast<std::ptrdiff_t>(n_test + n_dev), triples.end());

  // Descriptions leak rule tails of the first relations, with noise.
  std::bernoulli_distribution noisy_word(cfg.text_noise);
  std::bernoulli_distribution missing_text(cfg.missing_text_fraction);
  mkg.descriptions.assign(n, {});
  for (std::size_t e = 0; e < n; ++e) {
    const bool missing = missing_text(rng);
    std::vector<std::string> words;
    for (std::size_t j = 0; j < cfg.description_length; ++j) {
      const auto leaked = rule.tail(EntityId(e), RelationId(j % r));
      const bool noise = noisy_word(rng) || !leaked;
      const std::size_t random_word = pick_entity(rng);
      // A clean word names the tail entity itself; noise is an unrelated word.
      words.push_back(noise ? "w" + std::to_string(random_word) : mkg.entities.name(leaked->index()));
    }
    if (!missing) mkg.descriptions[e] = std::move(words);
  }

  // Visual attributes: per-entity Gaussian prototypes plus per-image noise.
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution missing_image(cfg.missing_image_fraction);
  mkg.patches = cfg.patches;
  mkg.patch_dim = cfg.patch_dim;
  mkg.visuals.assign(n, {});
  for (std::size_t e = 0; e < n; ++e) {
    num::Tensor prototype(cfg.patches, cfg.patch_dim);
    for (double& v : prototype.values()) v = gauss(rng);
    const bool missing = missing_image(rng);
    for (std::size_t i = 0; i < cfg.images_per_entity; ++i) {
      num::Tensor img = prototype;
      for (double& v : img.values()) v += cfg.vision_noise * gauss(rng);
      if (!missing) mkg.visuals[e].images.push_back(std::move(img));
    }
  }
  mkg.validate();
  return mkg;
}

}  // namespace sgmpt::kg
