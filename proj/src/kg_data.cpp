#include "sgmpt/kg_data.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "sgmpt/checkpoint.hpp"
#include "sgmpt/errors.hpp"

namespace sgmpt::kg {

namespace fs = std::filesystem;

std::size_t NameTable::intern(const std::string& name) {
  auto [it, inserted] = ids_.try_emplace(name, names_.size());
  if (inserted) names_.push_back(name);
  return it->second;
}

std::optional<std::size_t> NameTable::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t NameTable::at(const std::string& name) const {
  if (auto id = find(name)) return *id;
  throw LookupError("unknown name: " + name);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open: " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  return out;
}

std::size_t resolve(NameTable& table, const std::string& name, InternMode mode, const fs::path& path,
                    std::size_t line_no, const char* what) {
  if (mode == InternMode::Extend) return table.intern(name);
  if (auto id = table.find(name)) return *id;
  throw LookupError(path.string() + ":" + std::to_string(line_no) + ": unknown " + what + " '" + name + "'");
}

}  // namespace

std::vector<Triple> load_triples(const fs::path& path, NameTable& entities, NameTable& relations, InternMode mode) {
  auto in = open_in(path);
  std::vector<Triple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 3 || f[0].empty() || f[1].empty() || f[2].empty()) {
      throw ParseError(path.string() + ": expected head<TAB>relation<TAB>tail", line_no);
    }
    const auto h = resolve(entities, f[0], mode, path, line_no, "entity");
    const auto r = resolve(relations, f[1], mode, path, line_no, "relation");
    const auto t = resolve(entities, f[2], mode, path, line_no, "entity");
    triples.push_back({EntityId(h), RelationId(r), EntityId(t)});
  }
  return triples;
}

TripleFile load_triples(const fs::path& path) {
  TripleFile f;
  f.triples = load_triples(path, f.entities, f.relations, InternMode::Extend);
  return f;
}

void write_triples(const fs::path& path, std::span<const Triple> triples, const NameTable& entities,
                   const NameTable& relations) {
  auto out = open_out(path);
  for (const auto& t : triples) {
    out << entities.name(t.head.index()) << '\t' << relations.name(t.relation.index()) << '\t'
        << entities.name(t.tail.index()) << '\n';
  }
}

std::vector<Triple> MultimodalKG::all_triples() const {
  std::vector<Triple> all;
  all.reserve(train.size() + dev.size() + test.size());
  all.insert(all.end(), train.begin(), train.end());
  all.insert(all.end(), dev.begin(), dev.end());
  all.insert(all.end(), test.begin(), test.end());
  return all;
}

void MultimodalKG::validate() const {
  const std::size_t n = num_entities();
  const std::size_t r = num_relations();
  auto check_split = [&](const std::vector<Triple>& split, const char* name) {
    for (const auto& t : split) {
      if (t.head.index() >= n || t.tail.index() >= n || t.relation.index() >= r) {
        throw LookupError(std::string(name) + " split: triple id out of range");
      }
    }
  };
  check_split(train, "train");
  check_split(dev, "dev");
  check_split(test, "test");
  std::set<Triple> seen_train(train.begin(), train.end());
  std::set<Triple> seen_dev(dev.begin(), dev.end());
  for (const auto& t : dev)
    if (seen_train.count(t)) throw ConfigError("triple appears in both train and dev");
  for (const auto& t : test)
    if (seen_train.count(t) || seen_dev.count(t)) throw ConfigError("test triple also appears in train or dev");
  if (descriptions.size() != n) throw ConfigError("descriptions do not cover every entity");
  if (visuals.size() != n) throw ConfigError("visual attributes do not cover every entity");
  for (std::size_t e = 0; e < n; ++e) {
    for (const auto& img : visuals[e].images) {
      if (img.rows() != patches || img.cols() != patch_dim) {
        throw DimensionError("entity " + entities.name(e) + ": image shape " + num::shape_string(img) +
                             " does not match P x D_in = " + std::to_string(patches) + "x" + std::to_string(patch_dim));
      }
    }
  }
}

void load_descriptions(const fs::path& path, MultimodalKG& mkg) {
  auto in = open_in(path);
  mkg.descriptions.assign(mkg.num_entities(), {});
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string() + ": expected entity<TAB>text", line_no);
    const std::string name = line.substr(0, tab);
    const auto id = mkg.entities.find(name);
    if (!id) throw LookupError(path.string() + ":" + std::to_string(line_no) + ": unknown entity '" + name + "'");
    mkg.descriptions[*id] = split_words(line.substr(tab + 1));
  }
}

void write_descriptions(const fs::path& path, const MultimodalKG& mkg) {
  auto out = open_out(path);
  for (std::size_t e = 0; e < mkg.num_entities(); ++e) {
    if (mkg.descriptions[e].empty()) continue;
    out << mkg.entities.name(e) << '\t';
    for (std::size_t i = 0; i < mkg.descriptions[e].size(); ++i) out << (i ? " " : "") << mkg.descriptions[e][i];
    out << '\n';
  }
}

namespace {
std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void load_visual_features(const fs::path& path, MultimodalKG& mkg) {
  auto in = open_in(path);
  mkg.visuals.assign(mkg.num_entities(), {});
  std::string line;
  std::size_t line_no = 0;
  bool shape_known = mkg.patches != 0 && mkg.patch_dim != 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::string name;
    std::size_t count = 0;
    std::size_t p = 0;
    std::size_t d = 0;
    std::string extra;
    if (!(hs >> name >> count >> p >> d) || (hs >> extra)) {
      throw ParseError(path.string() + ": expected header 'entity num_images P D_in'", line_no);
    }
    const auto id = mkg.entities.find(name);
    if (!id) throw LookupError(path.string() + ":" + std::to_string(line_no) + ": unknown entity '" + name + "'");
    if (!shape_known) {
      mkg.patches = p;
      mkg.patch_dim = d;
      shape_known = true;
    } else if (p != mkg.patches || d != mkg.patch_dim) {
      throw ParseError(path.string() + ": inconsistent P/D_in for entity " + name, line_no);
    }
    auto& images = mkg.visuals[*id].images;
    images.clear();
    for (std::size_t i = 0; i < count; ++i) {
      num::Tensor img(p, d);
      for (std::size_t r = 0; r < p; ++r) {
        if (!std::getline(in, line)) throw ParseError(path.string() + ": truncated image block for " + name, line_no);
        ++line_no;
        strip_cr(line);
        std::istringstream vs(line);
        std::string tok;
        std::size_t c = 0;
        while (vs >> tok) {
          if (c >= d) throw ParseError(path.string() + ": too many values in patch row", line_no);
          try {
            img(r, c++) = num::parse_double(tok);
          } catch (const FormatError& e) {
            throw ParseError(path.string() + ": " + e.what(), line_no);
          }
        }
        if (c != d) throw ParseError(path.string() + ": expected " + std::to_string(d) + " values in patch row", line_no);
      }
      images.push_back(std::move(img));
    }
  }
}

void write_visual_features(const fs::path& path, const MultimodalKG& mkg) {
  auto out = open_out(path);
  for (std::size_t e = 0; e < mkg.num_entities(); ++e) {
    const auto& images = mkg.visuals[e].images;
    if (images.empty()) continue;
    out << mkg.entities.name(e) << ' ' << images.size() << ' ' << mkg.patches << ' ' << mkg.patch_dim << '\n';
    for (const auto& img : images) {
      for (std::size_t r = 0; r < img.rows(); ++r) {
        for (std::size_t c = 0; c < img.cols(); ++c) out << (c ? " " : "") << format_g17(img(r, c));
        out << '\n';
      }
    }
  }
}

namespace {

void write_names(const fs::path& path, const NameTable& names) {
  auto out = open_out(path);
  for (const auto& n : names.names()) out << n << '\n';
}

void read_names(const fs::path& path, NameTable& names) {
  auto in = open_in(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    if (names.find(line)) throw ParseError(path.string() + ": duplicate name '" + line + "'", line_no);
    names.intern(line);
  }
}

}  // namespace

void write_dataset(const fs::path& dir, const MultimodalKG& mkg) {
  fs::create_directories(dir);
  write_names(dir / "entities.txt", mkg.entities);
  write_names(dir / "relations.txt", mkg.relations);
  write_triples(dir / "train.tsv", mkg.train, mkg.entities, mkg.relations);
  write_triples(dir / "dev.tsv", mkg.dev, mkg.entities, mkg.relations);
  write_triples(dir / "test.tsv", mkg.test, mkg.entities, mkg.relations);
  write_descriptions(dir / "descriptions.tsv", mkg);
  write_visual_features(dir / "visual.txt", mkg);
}

MultimodalKG load_dataset(const fs::path& dir) {
  MultimodalKG mkg;
  const bool fixed = fs::exists(dir / "entities.txt") && fs::exists(dir / "relations.txt");
  if (fixed) {
    read_names(dir / "entities.txt", mkg.entities);
    read_names(dir / "relations.txt", mkg.relations);
  }
  mkg.train = load_triples(dir / "train.tsv", mkg.entities, mkg.relations, fixed ? InternMode::Fixed : InternMode::Extend);
  auto optional_split = [&](const char* file) {
    const fs::path p = dir / file;
    return fs::exists(p) ? load_triples(p, mkg.entities, mkg.relations, InternMode::Fixed) : std::vector<Triple>{};
  };
  mkg.dev = optional_split("dev.tsv");
  mkg.test = optional_split("test.tsv");
  mkg.descriptions.assign(mkg.num_entities(), {});
  mkg.visuals.assign(mkg.num_entities(), {});
  if (fs::exists(dir / "descriptions.tsv")) load_descriptions(dir / "descriptions.tsv", mkg);
  if (fs::exists(dir / "visual.txt")) load_visual_features(dir / "visual.txt", mkg);
  mkg.validate();
  return mkg;
}

// ---------------------------------------------------------------- vocabulary

namespace {
const std::string kSpecialNames[Vocabulary::kNumSpecial] = {"[CLS]", "[SEP]", "[MASK]"};
const std::string kTemplateWords[Vocabulary::kNumTemplate] = {"is", "the", "description", "of"};
}  // namespace

Vocabulary::Vocabulary(std::size_t num_entities, std::vector<std::string> entity_names,
                       std::vector<std::string> relation_names, std::vector<std::string> words)
    : entity_names_(std::move(entity_names)),
      relation_names_(std::move(relation_names)),
      words_(std::move(words)),
      entity_begin_(kNumSpecial + kNumTemplate),
      relation_begin_(entity_begin_ + num_entities),
      word_begin_(relation_begin_ + relation_names_.size()) {
  if (entity_names_.size() != num_entities) throw ConfigError("vocabulary: entity name count mismatch");
  for (std::size_t i = 0; i < entity_names_.size(); ++i) entity_ids_.emplace(entity_names_[i], i);
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!word_ids_.emplace(words_[i], i).second) throw ConfigError("vocabulary: duplicate word " + words_[i]);
  }
}

TokenId Vocabulary::entity_token(EntityId e) const {
  if (e.index() >= entity_names_.size()) throw LookupError("entity id out of range: " + std::to_string(e.value));
  return TokenId(entity_begin_ + e.index());
}

TokenId Vocabulary::relation_token(RelationId r) const {
  if (r.index() >= relation_names_.size()) throw LookupError("relation id out of range: " + std::to_string(r.value));
  return TokenId(relation_begin_ + r.index());
}

std::optional<TokenId> Vocabulary::word_token(const std::string& word) const {
  auto it = word_ids_.find(word);
  if (it == word_ids_.end()) return std::nullopt;
  return TokenId(word_begin_ + it->second);
}

TokenKind Vocabulary::kind(TokenId t) const {
  const std::size_t i = t.index();
  if (i < kNumSpecial) return TokenKind::Special;
  if (i < entity_begin_) return TokenKind::Template;
  if (i < relation_begin_) return TokenKind::Entity;
  if (i < word_begin_) return TokenKind::Relation;
  if (i < size()) return TokenKind::Word;
  throw LookupError("token id out of range: " + std::to_string(t.value));
}

EntityId Vocabulary::entity_of(TokenId t) const {
  if (kind(t) != TokenKind::Entity) throw LookupError("not an entity token: " + std::to_string(t.value));
  return EntityId(t.index() - entity_begin_);
}

RelationId Vocabulary::relation_of(TokenId t) const {
  if (kind(t) != TokenKind::Relation) throw LookupError("not a relation token: " + std::to_string(t.value));
  return RelationId(t.index() - relation_begin_);
}

const std::string& Vocabulary::token_string(TokenId t) const {
  const std::size_t i = t.index();
  switch (kind(t)) {
    case TokenKind::Special:
      return kSpecialNames[i];
    case TokenKind::Template:
      return kTemplateWords[i - kNumSpecial];
    case TokenKind::Entity:
      return entity_names_[i - entity_begin_];
    case TokenKind::Relation:
      return relation_names_[i - relation_begin_];
    case TokenKind::Word:
      break;
  }
  return words_[i - word_begin_];
}

TokenId Vocabulary::lookup(TokenKind k, const std::string& text) const {
  auto search = [&](std::span<const std::string> names, std::size_t begin) -> TokenId {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == text) return TokenId(begin + i);
    throw LookupError("no such token: " + text);
  };
  switch (k) {
    case TokenKind::Special:
      return search(kSpecialNames, 0);
    case TokenKind::Template:
      return search(kTemplateWords, kNumSpecial);
    case TokenKind::Entity:
      return search(entity_names_, entity_begin_);
    case TokenKind::Relation:
      return search(relation_names_, relation_begin_);
    case TokenKind::Word:
      break;
  }
  if (auto w = word_token(text)) return *w;
  throw LookupError("no such word: " + text);
}

TextAttribute Vocabulary::encode_words(std::span<const std::string> words) const {
  TextAttribute attr;
  attr.tokens.reserve(words.size());
  for (const auto& w : words) {
    if (auto e = entity_ids_.find(w); e != entity_ids_.end()) {
      attr.tokens.push_back(TokenId(entity_begin_ + e->second));
      continue;
    }
    auto t = word_token(w);
    if (!t) throw LookupError("word not in vocabulary: " + w);
    attr.tokens.push_back(*t);
  }
  return attr;
}

std::string Vocabulary::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += token_string(tokens[i]);
  }
  return out;
}

Vocabulary build_vocabulary(const MultimodalKG& mkg) {
  std::vector<std::string> words;
  std::unordered_map<std::string, bool> seen;
  for (const auto& name : mkg.entities.names()) seen.emplace(name, true);
  for (const auto& desc : mkg.descriptions) {
    for (const auto& w : desc) {
      if (seen.emplace(w, true).second) words.push_back(w);
    }
  }
  return Vocabulary(mkg.num_entities(), mkg.entities.names(), mkg.relations.names(), std::move(words));
}

TokenizedQuery build_pretrain_template(EntityId e, const MultimodalKG& mkg, const Vocabulary& vocab) {
  if (e.index() >= mkg.num_entities()) throw LookupError("entity id out of range: " + std::to_string(e.value));
  TokenizedQuery q;
  q.tokens.push_back(Vocabulary::kCls);
  const auto desc = vocab.encode_words(mkg.descriptions[e.index()]);
  q.tokens.insert(q.tokens.end(), desc.tokens.begin(), desc.tokens.end());
  for (std::size_t i = 0; i < Vocabulary::kNumTemplate; ++i) q.tokens.push_back(vocab.template_token(i));
  q.mask_pos = q.tokens.size();
  q.tokens.push_back(Vocabulary::kMask);
  q.tokens.push_back(Vocabulary::kSep);
  q.target = e;
  q.subject = e;
  return q;
}

TokenizedQuery build_reason_template(EntityId head, RelationId relation, std::optional<EntityId> tail,
                                     const MultimodalKG& mkg, const Vocabulary& vocab) {
  if (head.index() >= mkg.num_entities()) throw LookupError("entity id out of range: " + std::to_string(head.value));
  if (tail && tail->index() >= mkg.num_entities()) throw LookupError("entity id out of range: " + std::to_string(tail->value));
  TokenizedQuery q;
  q.tokens.push_back(Vocabulary::kCls);
  q.head_entity_pos = q.tokens.size();
  q.tokens.push_back(vocab.entity_token(head));
  const auto desc = vocab.encode_words(mkg.descriptions[head.index()]);
  q.tokens.insert(q.tokens.end(), desc.tokens.begin(), desc.tokens.end());
  q.tokens.push_back(Vocabulary::kSep);
  q.tokens.push_back(vocab.relation_token(relation));
  q.tokens.push_back(Vocabulary::kSep);
  q.mask_pos = q.tokens.size();
  q.tokens.push_back(Vocabulary::kMask);
  q.tokens.push_back(Vocabulary::kSep);
  q.target = tail;
  q.subject = head;
  q.relation = relation;
  return q;
}

void check_query(const TokenizedQuery& q, const Vocabulary& vocab) {
  if (q.mask_pos >= q.tokens.size() || q.tokens[q.mask_pos] != Vocabulary::kMask) {
    throw ConfigError("query mask_pos does not point at [MASK]");
  }
  if (q.head_entity_pos) {
    const std::size_t p = *q.head_entity_pos;
    if (p >= q.tokens.size() || vocab.kind(q.tokens[p]) != TokenKind::Entity ||
        vocab.entity_of(q.tokens[p]) != q.subject) {
      throw ConfigError("query head_entity_pos does not point at the head entity token");
    }
  }
}

}  // namespace sgmpt::kg
