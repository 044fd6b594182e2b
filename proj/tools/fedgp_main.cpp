#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fedgp/partition.hpp"
#include "fedgp/plan.hpp"
#include "fedgp/rng.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Federated-learning simulator with GP-based client selection"};
  app.require_subcommand(1);

  // run
  std::string run_config;
  std::vector<std::string> overrides;
  std::string beta_flag, output_flag, strategies_flag, seeds_flag;
  auto* run = app.add_subcommand("run", "Run every (strategy, seed) cell of a plan");
  run->add_option("config", run_config, "Plan config file")->required();
  run->add_option("--override", overrides, "section.key=value (repeatable)");
  run->add_option("--beta", beta_flag, "Override the annealing coefficient");
  run->add_option("--output", output_flag, "Override run.output_dir");
  run->add_option("--strategies", strategies_flag, "Override run.strategies");
  run->add_option("--seeds", seeds_flag, "Override run.seeds");

  // partition
  std::string part_config, part_output;
  auto* part = app.add_subcommand("partition", "Emit the partition of seed[0] as JSON");
  part->add_option("config", part_config, "Plan config file")->required();
  part->add_option("-o,--output", part_output, "Output file (default stdout)");

  // diagnose
  std::string diag_dir;
  auto* diag = app.add_subcommand("diagnose", "Re-run diagnostics on stored loss samples");
  diag->add_option("run-dir", diag_dir, "Cell directory with loss_samples.jsonl")->required();

  // summarize
  std::vector<std::string> sum_dirs;
  double sum_target = -1.0;
  std::string sum_output;
  auto* sum = app.add_subcommand("summarize", "Aggregate rounds-to-target over cell directories");
  sum->add_option("run-dirs", sum_dirs, "Cell directories")->required();
  sum->add_option("--target", sum_target, "Target accuracy override");
  sum->add_option("-o,--output", sum_output, "Output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (!beta_flag.empty()) overrides.push_back("gp.beta=" + beta_flag);
      if (!output_flag.empty()) overrides.push_back("run.output_dir=" + output_flag);
      if (!strategies_flag.empty()) overrides.push_back("run.strategies=" + strategies_flag);
      if (!seeds_flag.empty()) overrides.push_back("run.seeds=" + seeds_flag);
      const fedgp::ExperimentPlan plan = fedgp::parse_plan(run_config, overrides);
      return fedgp::run_plan(plan);
    }
    if (*part) {
      const fedgp::ExperimentPlan plan = fedgp::parse_plan(part_config);
      const std::uint64_t seed = plan.seeds.front();
      auto [train, test] = fedgp::build_dataset(plan.dataset, fedgp::stream_seed(seed, "data"));
      const fedgp::Partition partition = fedgp::build_partition(
          plan.partition, train, plan.base.num_clients, fedgp::stream_seed(seed, "partition"));
      const std::string doc = fedgp::partition_to_json(partition).dump(2) + "\n";
      if (part_output.empty()) {
        std::cout << doc;
      } else {
        std::ofstream out(part_output);
        out << doc;
      }
      return 0;
    }
    if (*diag) {
      const nlohmann::json report = fedgp::diagnose_run(diag_dir);
      const std::string text = report.dump(2) + "\n";
      std::cout << text;
      std::ofstream out(fs::path(diag_dir) / "diagnose.json");
      out << text;
      return 0;
    }
    if (*sum) {
      std::optional<double> target;
      if (sum_target >= 0.0) target = sum_target;
      const nlohmann::json doc = fedgp::summarize_runs(sum_dirs, target);
      const std::string text = doc.dump(2) + "\n";
      if (sum_output.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(sum_output);
        out << text;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
