#include "sgmpt/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "sgmpt/errors.hpp"
#include "sgmpt/hash.hpp"

namespace sgmpt::cli {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + text + "'");
}

std::uint64_t parse_count(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

namespace {

struct Field {
  ConfigKey key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Access>
Field real_field(std::string section, std::string name, std::string help, Access access) {
  ConfigKey k{std::move(section), std::move(name), std::move(help)};
  const std::string full = k.full();
  return {k, [access](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); },
          [access, full](RunConfig& c, const std::string& v) { access(c) = parse_real(full, v); }};
}

template <typename Access>
Field count_field(std::string section, std::string name, std::string help, Access access) {
  ConfigKey k{std::move(section), std::move(name), std::move(help)};
  const std::string full = k.full();
  return {k, [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
          [access, full](RunConfig& c, const std::string& v) {
            access(c) = static_cast<std::remove_reference_t<decltype(access(c))>>(parse_count(full, v));
          }};
}

template <typename Access>
Field bool_field(std::string section, std::string name, std::string help, Access access) {
  ConfigKey k{std::move(section), std::move(name), std::move(help)};
  const std::string full = k.full();
  return {k, [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [access, full](RunConfig& c, const std::string& v) { access(c) = parse_bool(full, v); }};
}

template <typename Access>
Field text_field(std::string section, std::string name, std::string help, Access access) {
  ConfigKey k{std::move(section), std::move(name), std::move(help)};
  return {k, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
          [access](RunConfig& c, const std::string& v) { access(c) = v; }};
}

std::string join_grid(const std::vector<double>& grid) {
  std::string out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i) out += ',';
    out += format_double(grid[i]);
  }
  return out;
}

std::vector<double> split_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("sweep.grid: empty grid entry");
    out.push_back(parse_real("sweep.grid", item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError("sweep.grid: at least one value is required");
  return out;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(count_field("run", "seed", "master seed for data, initialization and shuffling",
                            [](RunConfig& c) -> auto& { return c.seed; }));
    f.push_back(text_field("run", "output", "output directory", [](RunConfig& c) -> auto& { return c.output; }));
    f.push_back(text_field("run", "data_dir", "dataset directory; empty synthesizes one",
                           [](RunConfig& c) -> auto& { return c.data_dir; }));
    f.push_back(text_field("run", "structure_table", "structural embedding table file",
                           [](RunConfig& c) -> auto& { return c.structure_table; }));
    f.push_back(text_field("run", "checkpoint", "model checkpoint to start from or evaluate",
                           [](RunConfig& c) -> auto& { return c.checkpoint; }));

    f.push_back(count_field("synth", "num_entities", "entities", [](RunConfig& c) -> auto& { return c.synth.num_entities; }));
    f.push_back(count_field("synth", "num_relations", "relations", [](RunConfig& c) -> auto& { return c.synth.num_relations; }));
    f.push_back(count_field("synth", "num_triples", "distinct triples", [](RunConfig& c) -> auto& { return c.synth.num_triples; }));
    f.push_back(real_field("synth", "structure_signal", "probability a tail follows the rule",
                           [](RunConfig& c) -> auto& { return c.synth.structure_signal; }));
    f.push_back(real_field("synth", "text_noise", "probability a description word is random",
                           [](RunConfig& c) -> auto& { return c.synth.text_noise; }));
    f.push_back(real_field("synth", "vision_noise", "std-dev of image noise around the prototype",
                           [](RunConfig& c) -> auto& { return c.synth.vision_noise; }));
    f.push_back(count_field("synth", "description_length", "words per description",
                            [](RunConfig& c) -> auto& { return c.synth.description_length; }));
    f.push_back(count_field("synth", "images_per_entity", "images per entity",
                            [](RunConfig& c) -> auto& { return c.synth.images_per_entity; }));
    f.push_back(count_field("synth", "patches", "patches per image", [](RunConfig& c) -> auto& { return c.synth.patches; }));
    f.push_back(count_field("synth", "patch_dim", "features per patch", [](RunConfig& c) -> auto& { return c.synth.patch_dim; }));
    f.push_back(real_field("synth", "dev_fraction", "share of triples in dev", [](RunConfig& c) -> auto& { return c.synth.dev_fraction; }));
    f.push_back(real_field("synth", "test_fraction", "share of triples in test", [](RunConfig& c) -> auto& { return c.synth.test_fraction; }));
    f.push_back(real_field("synth", "missing_text_fraction", "share of entities without a description",
                           [](RunConfig& c) -> auto& { return c.synth.missing_text_fraction; }));
    f.push_back(real_field("synth", "missing_image_fraction", "share of entities without images",
                           [](RunConfig& c) -> auto& { return c.synth.missing_image_fraction; }));

    f.push_back({{"structure", "kind", "TransE | DistMult | HAKE"},
                 [](const RunConfig& c) { return kge::to_string(c.structure.kind); },
                 [](RunConfig& c, const std::string& v) { c.structure.kind = kge::parse_model_kind(v); }});
    f.push_back(count_field("structure", "dim", "embedding dim (HAKE tables have 2*dim columns)",
                            [](RunConfig& c) -> auto& { return c.structure.dim; }));
    f.push_back(real_field("structure", "margin", "margin gamma", [](RunConfig& c) -> auto& { return c.structure.margin; }));
    f.push_back(count_field("structure", "negatives", "negatives per positive",
                            [](RunConfig& c) -> auto& { return c.structure.negatives; }));
    f.push_back(count_field("structure", "epochs", "training epochs", [](RunConfig& c) -> auto& { return c.structure.epochs; }));
    f.push_back(real_field("structure", "learning_rate", "Adam step size",
                           [](RunConfig& c) -> auto& { return c.structure.learning_rate; }));
    f.push_back(real_field("structure", "adversarial_temperature", "self-adversarial temperature, 0 = uniform",
                           [](RunConfig& c) -> auto& { return c.structure.adversarial_temperature; }));
    f.push_back(count_field("structure", "batch_size", "positives per step",
                            [](RunConfig& c) -> auto& { return c.structure.batch_size; }));
    f.push_back(real_field("structure", "phase_weight", "HAKE phase weight",
                           [](RunConfig& c) -> auto& { return c.structure.phase_weight; }));
    f.push_back(real_field("structure", "l2", "DistMult l2 weight", [](RunConfig& c) -> auto& { return c.structure.l2; }));

    f.push_back(count_field("model", "dim", "hidden size D", [](RunConfig& c) -> auto& { return c.model.dim; }));
    f.push_back(count_field("model", "heads", "attention heads", [](RunConfig& c) -> auto& { return c.model.heads; }));
    f.push_back(count_field("model", "text_layers", "text layers", [](RunConfig& c) -> auto& { return c.model.text_layers; }));
    f.push_back(count_field("model", "vision_layers", "vision layers", [](RunConfig& c) -> auto& { return c.model.vision_layers; }));
    f.push_back(count_field("model", "fusion_layers", "multimodal layers", [](RunConfig& c) -> auto& { return c.model.fusion_layers; }));
    f.push_back(count_field("model", "ffn_dim", "feed-forward width", [](RunConfig& c) -> auto& { return c.model.ffn_dim; }));
    f.push_back(count_field("model", "max_seq_len", "longest token sequence", [](RunConfig& c) -> auto& { return c.model.max_seq_len; }));
    f.push_back(real_field("model", "init_std", "embedding init std-dev", [](RunConfig& c) -> auto& { return c.model.init_std; }));

    f.push_back(real_field("fusion", "lambda_s_ts", "text weighted-summation weight",
                           [](RunConfig& c) -> auto& { return c.fusion.lambda_s_ts; }));
    f.push_back(real_field("fusion", "lambda_s_vs", "vision weighted-summation weight",
                           [](RunConfig& c) -> auto& { return c.fusion.lambda_s_vs; }));
    f.push_back(real_field("fusion", "lambda_a_ts", "text alignment weight",
                           [](RunConfig& c) -> auto& { return c.fusion.lambda_a_ts; }));
    f.push_back(real_field("fusion", "lambda_a_vs", "vision alignment weight",
                           [](RunConfig& c) -> auto& { return c.fusion.lambda_a_vs; }));
    f.push_back(bool_field("fusion", "ws_ts", "text weighted summation", [](RunConfig& c) -> auto& { return c.fusion.ws_ts; }));
    f.push_back(bool_field("fusion", "ws_vs", "vision weighted summation", [](RunConfig& c) -> auto& { return c.fusion.ws_vs; }));
    f.push_back(bool_field("fusion", "ac_ts", "text alignment constraint", [](RunConfig& c) -> auto& { return c.fusion.ac_ts; }));
    f.push_back(bool_field("fusion", "ac_vs", "vision alignment constraint", [](RunConfig& c) -> auto& { return c.fusion.ac_vs; }));
    f.push_back(bool_field("fusion", "per_row_alignment", "per-image cosine instead of Frobenius",
                           [](RunConfig& c) -> auto& { return c.fusion.per_row_alignment; }));
    f.push_back(bool_field("fusion", "trainable_projection", "learn a map from structural to model width",
                           [](RunConfig& c) -> auto& { return c.fusion.trainable_projection; }));

    f.push_back(real_field("train", "learning_rate", "Adam step size", [](RunConfig& c) -> auto& { return c.train.learning_rate; }));
    f.push_back(count_field("train", "batch_size", "queries per step", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    f.push_back(count_field("train", "pretrain_epochs", "epochs over description templates",
                            [](RunConfig& c) -> auto& { return c.train.pretrain_epochs; }));
    f.push_back(count_field("train", "finetune_epochs", "epochs over training triples",
                            [](RunConfig& c) -> auto& { return c.train.finetune_epochs; }));
    f.push_back(bool_field("train", "parallel", "OpenMP batch gradients", [](RunConfig& c) -> auto& { return c.train.parallel; }));

    f.push_back(text_field("eval", "split", "test | dev", [](RunConfig& c) -> auto& { return c.eval.split; }));
    f.push_back(bool_field("eval", "predict_heads", "also rank heads (structure models only)",
                           [](RunConfig& c) -> auto& { return c.eval.predict_heads; }));
    f.push_back(bool_field("eval", "parallel", "OpenMP query fan-out", [](RunConfig& c) -> auto& { return c.eval.parallel; }));
    f.push_back(bool_field("eval", "dump_ranks", "write per-query ranks", [](RunConfig& c) -> auto& { return c.eval.dump_ranks; }));

    f.push_back(bool_field("ablate", "all_subsets", "run all 16 flag subsets",
                           [](RunConfig& c) -> auto& { return c.ablate.all_subsets; }));

    f.push_back({{"sweep", "grid", "comma-separated lambda values"},
                 [](const RunConfig& c) { return join_grid(c.sweep.grid); },
                 [](RunConfig& c, const std::string& v) { c.sweep.grid = split_grid(v); }});
    f.push_back(text_field("sweep", "mode", "each | grid", [](RunConfig& c) -> auto& { return c.sweep.mode; }));
    return f;
  }();
  return all;
}

const Field& field(const std::string& key) {
  for (const Field& f : fields())
    if (f.key.full() == key) return f;
  throw ConfigError("unknown config key: " + key);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

void RunConfig::validate() const {
  synth.validate();
  structure.validate();
  fusion.validate();
  if (model.dim == 0 || model.heads == 0 || model.dim % model.heads != 0) {
    throw ConfigError("model.dim must be a positive multiple of model.heads");
  }
  if (model.text_layers == 0 || model.vision_layers == 0 || model.fusion_layers == 0) {
    throw ConfigError("model layer counts must be >= 1");
  }
  if (model.ffn_dim == 0 || model.max_seq_len == 0) throw ConfigError("model.ffn_dim and model.max_seq_len must be >= 1");
  if (!(model.init_std > 0.0)) throw ConfigError("model.init_std must be > 0");
  if (!(train.learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (eval.split != "test" && eval.split != "dev") throw ConfigError("eval.split must be 'test' or 'dev'");
  if (sweep.mode != "each" && sweep.mode != "grid") throw ConfigError("sweep.mode must be 'each' or 'grid'");
  for (double v : sweep.grid)
    if (!(v >= 0.0)) throw ConfigError("sweep.grid values must be >= 0");
  if (output.empty()) throw ConfigError("run.output must not be empty");
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.key.section != section) {
      if (!section.empty()) out << '\n';
      section = f.key.section;
      out << '[' << section << "]\n";
    }
    out << f.key.name << " = " << f.get(*this) << '\n';
  }
  return out.str();
}

std::string RunConfig::hash() const {
  // File locations stay out of the hash. Input artifacts carry their own
  // config hash, so moving a run directory keeps its identity.
  static const std::set<std::string> locations = {"run.output", "run.data_dir", "run.structure_table",
                                                  "run.checkpoint"};
  std::string text;
  for (const Field& f : fields()) {
    if (locations.count(f.key.full())) continue;
    text += f.key.full() + "=" + f.get(*this) + "\n";
  }
  return hex64(fnv1a64(text));
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    if (section.empty()) throw ParseError("key outside of a [section]", line_no);
    const std::string key = section + "." + trim(line.substr(0, eq));
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << cfg.serialize();
}

}  // namespace sgmpt::cli
