#include "sgmpt/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "sgmpt/backbone.hpp"
#include "sgmpt/checkpoint.hpp"
#include "sgmpt/errors.hpp"
#include "sgmpt/hash.hpp"
#include "sgmpt/synthetic.hpp"
#include "sgmpt/training.hpp"

namespace sgmpt::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPretrainStage = 1;
constexpr std::uint64_t kFinetuneStage = 2;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  auto out = open_out(path);
  out << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out << (i + 1) << ',' << fmt("%.17g", losses[i]) << '\n';
}

const std::vector<Triple>& eval_split(const RunConfig& cfg, const Dataset& ds) {
  return cfg.eval.split == "dev" ? ds.mkg.dev : ds.mkg.test;
}

mpt::StageOptions stage_options(const RunConfig& cfg, std::size_t epochs, std::uint64_t stage) {
  mpt::StageOptions o;
  o.epochs = epochs;
  o.learning_rate = cfg.train.learning_rate;
  o.epoch.batch_size = cfg.train.batch_size;
  o.epoch.schedule = cfg.train.parallel ? mpt::Schedule::Parallel : mpt::Schedule::Serial;
  o.seed = cfg.seed;
  o.stage = stage;
  return o;
}

eval::EvalOptions eval_options(const RunConfig& cfg) {
  eval::EvalOptions o;
  o.predict_heads = cfg.eval.predict_heads;
  o.parallel = cfg.eval.parallel;
  return o;
}

kge::StructureEncoderConfig structure_config(const RunConfig& cfg) {
  kge::StructureEncoderConfig s = cfg.structure;
  s.seed = cfg.seed;
  return s;
}

std::vector<kg::TokenizedQuery> reason_queries(std::span<const Triple> triples, const Dataset& ds) {
  std::vector<kg::TokenizedQuery> out;
  out.reserve(triples.size());
  for (const Triple& t : triples) out.push_back(kg::build_reason_template(t.head, t.relation, t.tail, ds.mkg, ds.vocab));
  return out;
}

std::vector<kg::TokenizedQuery> description_queries(const Dataset& ds) {
  std::vector<kg::TokenizedQuery> out;
  for (std::size_t e = 0; e < ds.mkg.num_entities(); ++e) {
    out.push_back(kg::build_pretrain_template(EntityId(e), ds.mkg, ds.vocab));
  }
  return out;
}

void stamp(eval::EvalReport& report, const RunConfig& cfg) {
  report.config_hash = cfg.hash();
  report.seed = cfg.seed;
}

void write_eval_files(OutputDir& out, const RunConfig& cfg, const eval::EvalReport& report, const std::string& prefix,
                      const std::string& title) {
  eval::write_report_text(out.file(prefix + "report.txt"), report, title);
  eval::write_metrics_kv(out.file(prefix + "metrics.kv"), report);
  if (cfg.eval.dump_ranks) eval::write_ranks_csv(out.file(prefix + "ranks.csv"), report);
}

std::optional<num::Tensor> structure_for_experiments(const RunConfig& cfg, const Dataset& ds, OutputDir& out) {
  if (!cfg.structure_table.empty()) return resolve_structure(cfg, ds);
  std::vector<double> losses;
  kge::StructuralEmbeddingTable table = train_structure_table(cfg, ds, &losses);
  kge::export_table(out.file("structure.table"), table);
  write_loss_csv(out.file("structure_loss.csv"), losses);
  return table.matrix;
}

}  // namespace

// ----------------------------------------------------------------- dataset

Dataset prepare_dataset(const RunConfig& cfg) {
  kg::MultimodalKG mkg = cfg.data_dir.empty() ? kg::generate_synthetic_mkg(cfg.synth, cfg.seed)
                                              : kg::load_dataset(cfg.data_dir);
  kg::Vocabulary vocab = kg::build_vocabulary(mkg);
  eval::FilterIndex filter(mkg.all_triples());
  return Dataset{std::move(mkg), std::move(vocab), std::move(filter)};
}

// -------------------------------------------------------------- output dir

OutputDir::OutputDir(fs::path root, const RunConfig& cfg, std::string command)
    : root_(std::move(root)), command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
  fs::create_directories(root_);
  save_config(file("run_config.ini"), cfg);
}

fs::path OutputDir::file(const std::string& name) {
  if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
  const fs::path p = root_ / name;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

void OutputDir::finish() {
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  {
    auto out = open_out(root_ / "timing.txt");
    out << "command " << command_ << '\n' << "wall_seconds " << fmt("%.3f", seconds) << '\n';
  }
  auto out = open_out(root_ / "manifest.txt");
  out << "# file bytes fnv1a64\n";
  for (const auto& name : files_) {
    const fs::path p = root_ / name;
    if (!fs::exists(p)) continue;
    const std::string content = read_file(p);
    out << name << ' ' << content.size() << ' ' << hex64(fnv1a64(content)) << '\n';
  }
  out << "timing.txt - wall-clock\n";
}

// --------------------------------------------------------------- structure

kge::StructuralEmbeddingTable train_structure_table(const RunConfig& cfg, const Dataset& ds,
                                                    std::vector<double>* epoch_losses) {
  const kge::StructureEncoderConfig scfg = structure_config(cfg);
  kge::TrainResult result = kge::train_structure_encoder(ds.mkg.train, ds.mkg.num_entities(),
                                                         ds.mkg.num_relations(), scfg);
  if (epoch_losses != nullptr) *epoch_losses = result.epoch_losses;
  if (cfg.fusion.trainable_projection) return result.table;
  return kge::project_to_dim(result.table, cfg.model.dim, cfg.seed);
}

std::optional<num::Tensor> resolve_structure(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.structure_table.empty()) {
    if (cfg.fusion.any_enabled()) {
      throw ConfigError("fusion strategies are enabled but run.structure_table is not set (run train-structure first)");
    }
    return std::nullopt;
  }
  if (!fs::exists(cfg.structure_table)) {
    throw ConfigError("structural embedding table not found: " + cfg.structure_table);
  }
  kge::TableExpectations expect;
  expect.rows = ds.mkg.num_entities();
  if (!cfg.fusion.trainable_projection) expect.cols = cfg.model.dim;
  expect.cfg_hash = structure_config(cfg).hash();
  std::vector<std::string> warnings;
  kge::StructuralEmbeddingTable table = kge::import_table(cfg.structure_table, expect, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return std::move(table.matrix);
}

// ------------------------------------------------------------------- model

mpt::ModelConfig model_config(const RunConfig& cfg, const Dataset& ds) {
  mpt::ModelConfig m = mpt::fit_to_dataset(cfg.model, ds.mkg, ds.vocab);
  if (m.patches == 0 || m.patch_dim == 0) {
    // No image file: every entity uses the learned placeholder.
    m.patches = cfg.synth.patches;
    m.patch_dim = cfg.synth.patch_dim;
  }
  m.seed = cfg.seed;
  return m;
}

fusion::FusionModel build_model(const RunConfig& cfg, const Dataset& ds, std::optional<num::Tensor> structure) {
  return fusion::FusionModel(mpt::Backbone(model_config(cfg, ds)), std::move(structure), cfg.fusion, cfg.seed);
}

std::vector<double> run_pretrain(fusion::FusionModel& model, const RunConfig& cfg, const Dataset& ds) {
  const auto queries = description_queries(ds);
  return mpt::train_stage(model.params(), queries, model.loss_function(ds.mkg),
                          stage_options(cfg, cfg.train.pretrain_epochs, kPretrainStage));
}

std::vector<double> run_finetune(fusion::FusionModel& model, const RunConfig& cfg, const Dataset& ds) {
  const auto queries = reason_queries(ds.mkg.train, ds);
  return mpt::train_stage(model.params(), queries, model.loss_function(ds.mkg),
                          stage_options(cfg, cfg.train.finetune_epochs, kFinetuneStage));
}

eval::EvalReport evaluate_model(const fusion::FusionModel& model, const RunConfig& cfg, const Dataset& ds) {
  eval::EvalReport report = eval::evaluate(eval_split(cfg, ds), model.scorer(ds.mkg, ds.vocab), ds.filter,
                                           ds.mkg.num_entities(), eval_options(cfg));
  stamp(report, cfg);
  return report;
}

Experiment run_experiment(const RunConfig& cfg, const Dataset& ds, const std::optional<num::Tensor>& structure) {
  fusion::FusionModel model = build_model(cfg, ds, structure);
  Experiment ex;
  ex.pretrain_losses = run_pretrain(model, cfg, ds);
  ex.finetune_losses = run_finetune(model, cfg, ds);
  ex.report = evaluate_model(model, cfg, ds);
  return ex;
}

Experiment run_backbone_experiment(const RunConfig& cfg, const Dataset& ds) {
  mpt::Backbone model(model_config(cfg, ds));
  const mpt::QueryLoss loss = [&](const kg::TokenizedQuery& q, num::GradientBuffer* sink) {
    return mpt::backbone_query_loss(model, q, ds.mkg, sink);
  };
  Experiment ex;
  ex.pretrain_losses = mpt::train_stage(model.params(), description_queries(ds), loss,
                                        stage_options(cfg, cfg.train.pretrain_epochs, kPretrainStage));
  ex.finetune_losses = mpt::train_stage(model.params(), reason_queries(ds.mkg.train, ds), loss,
                                        stage_options(cfg, cfg.train.finetune_epochs, kFinetuneStage));
  ex.report = eval::evaluate(eval_split(cfg, ds), mpt::backbone_scorer(model, ds.mkg, ds.vocab), ds.filter,
                             ds.mkg.num_entities(), eval_options(cfg));
  stamp(ex.report, cfg);
  return ex;
}

// ---------------------------------------------------------------- variants

std::vector<Variant> named_variants() {
  return {
      {"full", "full model", true, true, true, true},
      {"no_ws_ts", "- WS_ts", false, true, true, true},
      {"no_ws_vs", "- WS_vs", true, false, true, true},
      {"no_ac_ts", "- AC_ts", true, true, false, true},
      {"no_ac_vs", "- AC_vs", true, true, true, false},
      {"no_ws", "- (WS_ts & WS_vs)", false, false, true, true},
      {"no_ac", "- (AC_ts & AC_vs)", true, true, false, false},
      {"no_ts", "- (WS_ts & AC_ts)", false, true, false, true},
      {"no_vs", "- (WS_vs & AC_vs)", true, false, true, false},
      {"none", "- (WS_ts & WS_vs & AC_ts & AC_vs)", false, false, false, false},
  };
}

std::vector<Variant> all_variants() {
  std::vector<Variant> out = named_variants();
  std::set<int> seen;
  const auto code = [](const Variant& v) { return v.ws_ts * 8 + v.ws_vs * 4 + v.ac_ts * 2 + v.ac_vs; };
  for (const auto& v : out) seen.insert(code(v));
  for (int mask = 15; mask >= 0; --mask) {
    if (seen.count(mask)) continue;
    Variant v{"", "", bool(mask & 8), bool(mask & 4), bool(mask & 2), bool(mask & 1)};
    std::string slug = "only";
    std::string label = "only";
    const char* names[] = {"ws_ts", "ws_vs", "ac_ts", "ac_vs"};
    const char* labels[] = {"WS_ts", "WS_vs", "AC_ts", "AC_vs"};
    const bool flags[] = {v.ws_ts, v.ws_vs, v.ac_ts, v.ac_vs};
    for (int i = 0; i < 4; ++i) {
      if (!flags[i]) continue;
      slug += std::string("_") + names[i];
      label += std::string(" ") + labels[i];
    }
    v.slug = slug;
    v.label = label;
    out.push_back(v);
  }
  return out;
}

fusion::FusionConfig apply_variant(fusion::FusionConfig base, const Variant& v) {
  base.ws_ts = v.ws_ts;
  base.ws_vs = v.ws_vs;
  base.ac_ts = v.ac_ts;
  base.ac_vs = v.ac_vs;
  return base;
}

std::vector<fusion::FusionConfig> sweep_points(const RunConfig& cfg) {
  std::vector<fusion::FusionConfig> points;
  const auto key = [](const fusion::FusionConfig& f) {
    return std::vector<double>{f.lambda_s_ts, f.lambda_s_vs, f.lambda_a_ts, f.lambda_a_vs};
  };
  std::set<std::vector<double>> seen;
  const auto add = [&](const fusion::FusionConfig& f) {
    if (seen.insert(key(f)).second) points.push_back(f);
  };
  if (cfg.sweep.mode == "each") {
    double fusion::FusionConfig::*fields[] = {&fusion::FusionConfig::lambda_s_ts, &fusion::FusionConfig::lambda_s_vs,
                                              &fusion::FusionConfig::lambda_a_ts, &fusion::FusionConfig::lambda_a_vs};
    for (auto field : fields) {
      for (double v : cfg.sweep.grid) {
        fusion::FusionConfig f = cfg.fusion;
        f.*field = v;
        add(f);
      }
    }
  } else {
    for (double a : cfg.sweep.grid)
      for (double b : cfg.sweep.grid)
        for (double c : cfg.sweep.grid)
          for (double d : cfg.sweep.grid) {
            fusion::FusionConfig f = cfg.fusion;
            f.lambda_s_ts = a;
            f.lambda_s_vs = b;
            f.lambda_a_ts = c;
            f.lambda_a_vs = d;
            add(f);
          }
  }
  return points;
}

// -------------------------------------------------------------- parameters

ParamReport count_parameters(const RunConfig& cfg, const Dataset& ds) {
  const mpt::Backbone backbone(model_config(cfg, ds));
  ParamReport report;
  const char* modules[] = {"text", "vision", "multimodal"};
  for (const char* m : modules) {
    ParamCount c{m, 0, 0};
    const std::string prefix = std::string(m) + ".";
    for (std::size_t i = 0; i < backbone.params().size(); ++i) {
      const auto& p = backbone.params()[i];
      if (p.name.rfind(prefix, 0) != 0) continue;
      (p.trainable ? c.trainable : c.frozen) += p.value.size();
    }
    report.backbone_trainable += c.trainable;
    report.modules.push_back(c);
  }
  std::size_t table_rows = ds.mkg.num_entities();
  std::size_t table_cols = cfg.model.dim;
  if (!cfg.structure_table.empty() && fs::exists(cfg.structure_table)) {
    const auto table = kge::import_table(cfg.structure_table);
    table_rows = table.rows();
    table_cols = table.cols();
  } else if (cfg.fusion.trainable_projection) {
    table_cols = cfg.structure.kind == kge::ModelKind::HAKE ? 2 * cfg.structure.dim : cfg.structure.dim;
  }
  ParamCount fusion_count{"fusion", 0, 0};
  if (cfg.fusion.trainable_projection) fusion_count.trainable = table_cols * cfg.model.dim;
  report.fusion_trainable = fusion_count.trainable;
  report.modules.push_back(fusion_count);
  report.structure_frozen = table_rows * table_cols;
  report.modules.push_back({"structure_table", 0, report.structure_frozen});
  return report;
}

// ---------------------------------------------------------------- commands

void cmd_synth(const RunConfig& cfg) {
  cfg.validate();
  OutputDir out(cfg.output, cfg, "synth");
  const kg::MultimodalKG mkg = kg::generate_synthetic_mkg(cfg.synth, cfg.seed);
  const char* files[] = {"entities.txt", "relations.txt", "train.tsv", "dev.tsv",
                         "test.tsv", "descriptions.tsv", "visual.txt"};
  kg::write_dataset(out.root() / "dataset", mkg);
  for (const char* f : files) out.file(std::string("dataset/") + f);
  auto kv = open_out(out.file("synth.kv"));
  kv << "entities " << mkg.num_entities() << '\n'
     << "relations " << mkg.num_relations() << '\n'
     << "train " << mkg.train.size() << '\n'
     << "dev " << mkg.dev.size() << '\n'
     << "test " << mkg.test.size() << '\n';
  kv.close();
  out.finish();
}

void cmd_train_structure(const RunConfig& cfg) {
  cfg.validate();
  OutputDir out(cfg.output, cfg, "train-structure");
  const Dataset ds = prepare_dataset(cfg);
  const kge::StructureEncoderConfig scfg = structure_config(cfg);
  kge::TrainResult result =
      kge::train_structure_encoder(ds.mkg.train, ds.mkg.num_entities(), ds.mkg.num_relations(), scfg);
  write_loss_csv(out.file("structure_loss.csv"), result.epoch_losses);

  const kge::StructureModel model = kge::model_from_table(result.table, scfg.phase_weight);
  eval::EvalReport report = eval::evaluate(eval_split(cfg, ds), kge::make_scorer(model), ds.filter,
                                           ds.mkg.num_entities(), eval_options(cfg));
  stamp(report, cfg);
  write_eval_files(out, cfg, report, "structure_", "structure encoder (" + kge::to_string(scfg.kind) + ")");

  const kge::StructuralEmbeddingTable table =
      cfg.fusion.trainable_projection ? result.table : kge::project_to_dim(result.table, cfg.model.dim, cfg.seed);
  kge::export_table(out.file("structure.table"), table);
  out.finish();
}

void cmd_pretrain(const RunConfig& cfg) {
  cfg.validate();
  OutputDir out(cfg.output, cfg, "pretrain");
  const Dataset ds = prepare_dataset(cfg);
  fusion::FusionModel model = build_model(cfg, ds, resolve_structure(cfg, ds));
  if (!cfg.checkpoint.empty()) fusion::load_fusion_parameters(cfg.checkpoint, model);
  const auto losses = run_pretrain(model, cfg, ds);
  write_loss_csv(out.file("pretrain_loss.csv"), losses);
  fusion::save_fusion_model(out.file("model.ckpt"), model, {{"stage", "pretrain"}, {"config_hash", cfg.hash()}});
  out.finish();
}

void cmd_finetune(const RunConfig& cfg) {
  cfg.validate();
  OutputDir out(cfg.output, cfg, "finetune");
  const Dataset ds = prepare_dataset(cfg);
  fusion::FusionModel model = build_model(cfg, ds, resolve_structure(cfg, ds));
  if (!cfg.checkpoint.empty()) fusion::load_fusion_parameters(cfg.checkpoint, model);
  const auto losses = run_finetune(model, cfg, ds);
  write_loss_csv(out.file("finetune_loss.csv"), losses);
  fusion::save_fusion_model(out.file("model.ckpt"), model, {{"stage", "finetune"}, {"config_hash", cfg.hash()}});
  out.finish();
}

eval::EvalReport cmd_evaluate(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw ConfigError("evaluate needs run.checkpoint");
  OutputDir out(cfg.output, cfg, "evaluate");
  const Dataset ds = prepare_dataset(cfg);
  fusion::FusionModel model = build_model(cfg, ds, resolve_structure(cfg, ds));
  fusion::load_fusion_parameters(cfg.checkpoint, model);
  const eval::EvalReport report = evaluate_model(model, cfg, ds);
  write_eval_files(out, cfg, report, "", "link prediction (" + cfg.eval.split + ")");
  out.finish();
  return report;
}

std::vector<VariantResult> cmd_ablate(const RunConfig& cfg) {
  cfg.validate();
  OutputDir out(cfg.output, cfg, "ablate");
  const Dataset ds = prepare_dataset(cfg);
  const std::optional<num::Tensor> structure = structure_for_experiments(cfg, ds, out);
  std::vector<VariantResult> results;
  for (const Variant& v : cfg.ablate.all_subsets ? all_variants() : named_variants()) {
    RunConfig vc = cfg;
    vc.fusion = apply_variant(cfg.fusion, v);
    const Experiment ex = run_experiment(vc, ds, structure);
    eval::write_metrics_kv(out.file("variants/" + v.slug + "/metrics.kv"), ex.report);
    write_loss_csv(out.file("variants/" + v.slug + "/finetune_loss.csv"), ex.finetune_losses);
    results.push_back({v, ex.report});
  }

  auto csv = open_out(out.file("ablation.csv"));
  csv << "variant,ws_ts,ws_vs,ac_ts,ac_vs,mr,hits1,hits3,hits10,raw_mr,raw_hits1,raw_hits3,raw_hits10\n";
  for (const auto& r : results) {
    const auto& f = r.report.filtered;
    const auto& w = r.report.raw;
    csv << r.variant.slug << ',' << r.variant.ws_ts << ',' << r.variant.ws_vs << ',' << r.variant.ac_ts << ','
        << r.variant.ac_vs << ',' << fmt("%.17g", f.mean_rank) << ',' << fmt("%.17g", f.hits1) << ','
        << fmt("%.17g", f.hits3) << ',' << fmt("%.17g", f.hits10) << ',' << fmt("%.17g", w.mean_rank) << ','
        << fmt("%.17g", w.hits1) << ',' << fmt("%.17g", w.hits3) << ',' << fmt("%.17g", w.hits10) << '\n';
  }
  csv.close();
  auto txt = open_out(out.file("ablation.txt"));
  txt << "Ablation (filtered, Hits@k in %)\n\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-36s %8s %8s %8s %8s\n", "variant", "MR", "Hits@1", "Hits@3", "Hits@10");
  txt << line;
  for (const auto& r : results) {
    const auto& f = r.report.filtered;
    std::snprintf(line, sizeof line, "%-36s %8.1f %8.1f %8.1f %8.1f\n", r.variant.label.c_str(), f.mean_rank,
                  100.0 * f.hits1, 100.0 * f.hits3, 100.0 * f.hits10);
    txt << line;
  }
  txt.close();
  out.finish();
  return results;
}

std::vector<SweepPoint> cmd_sweep(const RunConfig& cfg) {
  cfg.validate();
  OutputDir out(cfg.output, cfg, "sweep");
  const Dataset ds = prepare_dataset(cfg);
  const std::optional<num::Tensor> structure = structure_for_experiments(cfg, ds, out);
  std::vector<SweepPoint> points;
  for (const fusion::FusionConfig& f : sweep_points(cfg)) {
    RunConfig pc = cfg;
    pc.fusion = f;
    const Experiment ex = run_experiment(pc, ds, structure);
    points.push_back({f.lambda_s_ts, f.lambda_s_vs, f.lambda_a_ts, f.lambda_a_vs, ex.report.filtered});
  }
  auto csv = open_out(out.file("sweep.csv"));
  csv << "lambda_s_ts,lambda_s_vs,lambda_a_ts,lambda_a_vs,hits1,hits10\n";
  for (const auto& p : points) {
    csv << format_double(p.lambda_s_ts) << ',' << format_double(p.lambda_s_vs) << ',' << format_double(p.lambda_a_ts)
        << ',' << format_double(p.lambda_a_vs) << ',' << fmt("%.17g", p.filtered.hits1) << ','
        << fmt("%.17g", p.filtered.hits10) << '\n';
  }
  csv.close();
  if (cfg.sweep.mode == "each") {
    // One plot series per lambda: value against Hits@1 / Hits@10 with the others at their base values.
    const char* names[] = {"lambda_s_ts", "lambda_s_vs", "lambda_a_ts", "lambda_a_vs"};
    const double base[] = {cfg.fusion.lambda_s_ts, cfg.fusion.lambda_s_vs, cfg.fusion.lambda_a_ts,
                           cfg.fusion.lambda_a_vs};
    for (int i = 0; i < 4; ++i) {
      auto dat = open_out(out.file(std::string("plot_") + names[i] + ".dat"));
      dat << "# " << names[i] << " hits1 hits10\n";
      for (double v : cfg.sweep.grid) {
        for (const auto& p : points) {
          const double vals[] = {p.lambda_s_ts, p.lambda_s_vs, p.lambda_a_ts, p.lambda_a_vs};
          bool match = vals[i] == v;
          for (int j = 0; j < 4 && match; ++j)
            if (j != i && vals[j] != base[j]) match = false;
          if (!match) continue;
          dat << format_double(v) << ' ' << fmt("%.17g", p.filtered.hits1) << ' ' << fmt("%.17g", p.filtered.hits10)
              << '\n';
          break;
        }
      }
    }
  }
  out.finish();
  return points;
}

ParamReport cmd_count_params(const RunConfig& cfg) {
  cfg.validate();
  OutputDir out(cfg.output, cfg, "count-params");
  const Dataset ds = prepare_dataset(cfg);
  const ParamReport report = count_parameters(cfg, ds);
  const double overhead_trainable = 100.0 * double(report.fusion_trainable) / double(report.backbone_trainable);
  const double overhead_total =
      100.0 * double(report.fusion_trainable + report.structure_frozen) / double(report.backbone_trainable);

  auto txt = open_out(out.file("params.txt"));
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %12s %12s\n", "module", "trainable", "frozen");
  txt << line;
  for (const auto& m : report.modules) {
    std::snprintf(line, sizeof line, "%-16s %12zu %12zu\n", m.module.c_str(), m.trainable, m.frozen);
    txt << line;
  }
  txt << '\n'
      << "backbone trainable        " << report.backbone_trainable << '\n'
      << "fusion trainable          " << report.fusion_trainable << '\n'
      << "structure table (frozen)  " << report.structure_frozen << '\n'
      << "total                     " << report.total() << '\n'
      << "fusion trainable overhead " << fmt("%.4f", overhead_trainable) << "%\n"
      << "overhead incl. table      " << fmt("%.4f", overhead_total) << "%\n";
  txt.close();

  auto kv = open_out(out.file("params.kv"));
  for (const auto& m : report.modules) {
    kv << m.module << ".trainable " << m.trainable << '\n' << m.module << ".frozen " << m.frozen << '\n';
  }
  kv << "backbone_trainable " << report.backbone_trainable << '\n'
     << "fusion_trainable " << report.fusion_trainable << '\n'
     << "structure_frozen " << report.structure_frozen << '\n'
     << "total " << report.total() << '\n'
     << "overhead_trainable_percent " << fmt("%.17g", overhead_trainable) << '\n'
     << "overhead_with_table_percent " << fmt("%.17g", overhead_total) << '\n';
  kv.close();
  out.finish();
  return report;
}

}  // namespace sgmpt::cli
