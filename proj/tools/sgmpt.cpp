// Command-line driver: one subcommand per pipeline step.
#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "sgmpt/commands.hpp"
#include "sgmpt/errors.hpp"

namespace {

using sgmpt::cli::RunConfig;

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Invocation& inv) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("-c,--config", inv.config_path, "config file (INI-style sections)");
  for (const auto& key : sgmpt::cli::config_keys()) {
    sub->add_option_function<std::string>(
        "--" + key.full(), [&inv, full = key.full()](const std::string& v) { inv.overrides[full] = v; }, key.help);
  }
  return sub;
}

RunConfig resolve(const Invocation& inv) {
  RunConfig cfg = inv.config_path.empty() ? RunConfig{} : sgmpt::cli::load_config(inv.config_path);
  for (const auto& [key, value] : inv.overrides) cfg.set(key, value);
  cfg.validate();
  return cfg;
}

void print_metrics(const sgmpt::eval::Metrics& m) {
  std::printf("MR %.2f  Hits@1 %.4f  Hits@3 %.4f  Hits@10 %.4f\n", m.mean_rank, m.hits1, m.hits3, m.hits10);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-guided multimodal transformer for knowledge-graph link prediction"};
  app.require_subcommand(1);
  Invocation inv;
  auto* synth = add_command(app, "synth", "write a synthetic multimodal KG", inv);
  auto* structure = add_command(app, "train-structure", "train the structure encoder and export its table", inv);
  auto* pretrain = add_command(app, "pretrain", "stage 1: entity prediction from descriptions", inv);
  auto* finetune = add_command(app, "finetune", "stage 2: tail prediction on training triples", inv);
  auto* evaluate = add_command(app, "evaluate", "filtered/raw ranking metrics for a checkpoint", inv);
  auto* ablate = add_command(app, "ablate", "train and evaluate every fusion-flag variant", inv);
  auto* sweep = add_command(app, "sweep", "train and evaluate over a lambda grid", inv);
  auto* count = add_command(app, "count-params", "parameter accounting per module", inv);

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = resolve(inv);
    if (synth->parsed()) {
      sgmpt::cli::cmd_synth(cfg);
    } else if (structure->parsed()) {
      sgmpt::cli::cmd_train_structure(cfg);
    } else if (pretrain->parsed()) {
      sgmpt::cli::cmd_pretrain(cfg);
    } else if (finetune->parsed()) {
      sgmpt::cli::cmd_finetune(cfg);
    } else if (evaluate->parsed()) {
      const auto report = sgmpt::cli::cmd_evaluate(cfg);
      std::printf("filtered  ");
      print_metrics(report.filtered);
      std::printf("raw       ");
      print_metrics(report.raw);
    } else if (ablate->parsed()) {
      for (const auto& r : sgmpt::cli::cmd_ablate(cfg)) {
        std::printf("%-36s ", r.variant.label.c_str());
        print_metrics(r.report.filtered);
      }
    } else if (sweep->parsed()) {
      for (const auto& p : sgmpt::cli::cmd_sweep(cfg)) {
        std::printf("ls_ts %-6g ls_vs %-6g la_ts %-6g la_vs %-6g  ", p.lambda_s_ts, p.lambda_s_vs, p.lambda_a_ts,
                    p.lambda_a_vs);
        print_metrics(p.filtered);
      }
    } else if (count->parsed()) {
      const auto r = sgmpt::cli::cmd_count_params(cfg);
      std::printf("backbone trainable %zu  fusion trainable %zu  structure table (frozen) %zu\n",
                  r.backbone_trainable, r.fusion_trainable, r.structure_frozen);
    }
    std::cout << "wrote " << cfg.output << '\n';
  } catch (const sgmpt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
