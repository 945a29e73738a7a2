#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgmpt/fusion.hpp"
#include "sgmpt/kg_data.hpp"
#include "sgmpt/ranking.hpp"
#include "sgmpt/run_config.hpp"
#include "sgmpt/structure_encoder.hpp"

// The operations behind each CLI subcommand. Every command writes into
// cfg.output: the run config, its own artifacts, timing.txt and a manifest.
namespace sgmpt::cli {

struct Dataset {
  kg::MultimodalKG mkg;
  kg::Vocabulary vocab;
  eval::FilterIndex filter;
};

// Loads run.data_dir, or synthesizes from [synth] with run.seed.
Dataset prepare_dataset(const RunConfig& cfg);

class OutputDir {
 public:
  OutputDir(std::filesystem::path root, const RunConfig& cfg, std::string command);
  // Path of an artifact; recorded in the manifest.
  std::filesystem::path file(const std::string& name);
  const std::filesystem::path& root() const { return root_; }
  // Writes timing.txt and manifest.txt.
  void finish();

 private:
  std::filesystem::path root_;
  std::string command_;
  std::vector<std::string> files_;
  std::chrono::steady_clock::time_point start_;
};

// Structure encoder trained on the training split, projected to model.dim.
kge::StructuralEmbeddingTable train_structure_table(const RunConfig& cfg, const Dataset& ds,
                                                    std::vector<double>* epoch_losses = nullptr);
// The table named by run.structure_table, checked against the dataset and
// model. Absent file with fusion enabled is a ConfigError.
std::optional<num::Tensor> resolve_structure(const RunConfig& cfg, const Dataset& ds);

mpt::ModelConfig model_config(const RunConfig& cfg, const Dataset& ds);
fusion::FusionModel build_model(const RunConfig& cfg, const Dataset& ds, std::optional<num::Tensor> structure);

std::vector<double> run_pretrain(fusion::FusionModel& model, const RunConfig& cfg, const Dataset& ds);
std::vector<double> run_finetune(fusion::FusionModel& model, const RunConfig& cfg, const Dataset& ds);
eval::EvalReport evaluate_model(const fusion::FusionModel& model, const RunConfig& cfg, const Dataset& ds);

struct Experiment {
  eval::EvalReport report;
  std::vector<double> pretrain_losses;
  std::vector<double> finetune_losses;
};
// Fresh model -> pretrain -> finetune -> evaluate.
Experiment run_experiment(const RunConfig& cfg, const Dataset& ds, const std::optional<num::Tensor>& structure);
// Same schedule on the bare backbone, without the fusion module.
Experiment run_backbone_experiment(const RunConfig& cfg, const Dataset& ds);

struct Variant {
  std::string slug;
  std::string label;
  bool ws_ts, ws_vs, ac_ts, ac_vs;
};
// The ten ablation rows: the full model, each strategy removed, then pairs and all four.
std::vector<Variant> named_variants();
// Every subset of the four flags (16 rows), named subsets first.
std::vector<Variant> all_variants();
fusion::FusionConfig apply_variant(fusion::FusionConfig base, const Variant& v);

struct VariantResult {
  Variant variant;
  eval::EvalReport report;
};

struct SweepPoint {
  double lambda_s_ts, lambda_s_vs, lambda_a_ts, lambda_a_vs;
  eval::Metrics filtered;
};
// Grid points in run order; duplicates are dropped.
std::vector<fusion::FusionConfig> sweep_points(const RunConfig& cfg);

struct ParamCount {
  std::string module;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
};
struct ParamReport {
  std::vector<ParamCount> modules;  // text, vision, multimodal, fusion, structure table
  std::size_t backbone_trainable = 0;
  std::size_t fusion_trainable = 0;
  std::size_t structure_frozen = 0;
  std::size_t total() const { return backbone_trainable + fusion_trainable + structure_frozen; }
};
ParamReport count_parameters(const RunConfig& cfg, const Dataset& ds);

void cmd_synth(const RunConfig& cfg);
void cmd_train_structure(const RunConfig& cfg);
void cmd_pretrain(const RunConfig& cfg);
void cmd_finetune(const RunConfig& cfg);
eval::EvalReport cmd_evaluate(const RunConfig& cfg);
std::vector<VariantResult> cmd_ablate(const RunConfig& cfg);
std::vector<SweepPoint> cmd_sweep(const RunConfig& cfg);
ParamReport cmd_count_params(const RunConfig& cfg);

}  // namespace sgmpt::cli
