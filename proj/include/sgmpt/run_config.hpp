#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sgmpt/backbone.hpp"
#include "sgmpt/fusion.hpp"
#include "sgmpt/structure_encoder.hpp"
#include "sgmpt/synthetic.hpp"

// Experiment configuration: one flat key/value file with a section per module.
//
//   # comment
//   [fusion]
//   lambda_s_ts = 0.01
//   ws_ts = true
//
// Every key is also addressable as `section.key` (the command line uses
// `--section.key value`). Unknown keys and malformed values are ConfigErrors.
namespace sgmpt::cli {

struct TrainSettings {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t pretrain_epochs = 1;
  std::size_t finetune_epochs = 10;
  bool parallel = true;
};

struct EvalSettings {
  std::string split = "test";  // test | dev
  bool predict_heads = false;
  bool parallel = true;
  bool dump_ranks = true;
};

struct AblateSettings {
  bool all_subsets = false;  // 16 flag subsets instead of the 10 named ones
};

struct SweepSettings {
  std::vector<double> grid = {0.001, 0.01, 0.1, 1.0};
  std::string mode = "each";  // each: one lambda at a time; grid: full product
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output = "out";
  std::string data_dir;         // empty: synthesize from [synth]
  std::string structure_table;  // structural embedding table file
  std::string checkpoint;       // model to start from / evaluate
  kg::SyntheticConfig synth;
  kge::StructureEncoderConfig structure;
  mpt::ModelConfig model;  // entity/vocab/patch sizes are filled from the data
  fusion::FusionConfig fusion;
  TrainSettings train;
  EvalSettings eval;
  AblateSettings ablate;
  SweepSettings sweep;

  void validate() const;
  // Canonical text: every key, sections in fixed order, values normalized.
  std::string serialize() const;
  std::string hash() const;  // over every key except run.output

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
};

struct ConfigKey {
  std::string section;
  std::string name;
  std::string help;
  std::string full() const { return section + "." + name; }
};
const std::vector<ConfigKey>& config_keys();

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

std::string format_double(double v);  // shortest text that round-trips
double parse_real(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
std::uint64_t parse_count(const std::string& key, const std::string& text);

}  // namespace sgmpt::cli
