#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgp/engine.hpp"

namespace fedgp {

// Minimal sectioned key/value config. Lines are `key = value`, sections are
// `[name]`, `#` starts a comment.
struct IniDoc {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
};

IniDoc parse_ini(std::istream& in, const std::string& origin);

struct DatasetSpec {
  enum class Source { synthetic, idx };
  Source source = Source::synthetic;
  int num_classes = 10;
  int dim = 20;
  int per_class = 60;
  int test_per_class = 20;
  double class_separation = 3.0;
  std::string train_images, train_labels, test_images, test_labels;
};

struct PartitionSpec {
  enum class Scheme { two_spc, one_spc, dir };
  Scheme scheme = Scheme::one_spc;
  double alpha = 0.2;
};

std::string to_string(PartitionSpec::Scheme s);
PartitionSpec::Scheme scheme_from_string(const std::string& name);

struct DiagnosticsToggles {
  int stationarity_interval = 0;
  int stationarity_samples = 0;
  int normality_samples = 0;
  bool export_embeddings = true;
};

struct ExperimentPlan {
  FlConfig base;
  ModelSpec model;  // input_dim/num_classes resolved from the dataset at run time
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> seeds;
  DatasetSpec dataset;
  PartitionSpec partition;
  std::string output_dir;
  DiagnosticsToggles diagnostics;
  double target_accuracy = -1.0;  // < 0: no summary target
  int checkpoint_interval = 0;    // rounds; 0 disables

  void validate() const;
};

// Parses the config file, applies `section.key=value` overrides in order and
// validates the result. Unknown keys are rejected with a message listing them.
ExperimentPlan parse_plan(const std::string& path,
                          const std::vector<std::string>& overrides = {});

// Resolved-plan echo written next to the outputs for provenance.
std::string plan_to_ini(const ExperimentPlan& plan);

// Builds (train, test) per the dataset spec. Synthetic data is generated from
// the given seed; IDX data is loaded from disk (seed unused).
std::pair<LabeledDataset, LabeledDataset> build_dataset(const DatasetSpec& spec,
                                                        std::uint64_t seed);

Partition build_partition(const PartitionSpec& spec, const LabeledDataset& data,
                          int num_clients, std::uint64_t seed);

// Output directory resolution: relative paths are placed under
// $FEDGP_OUTPUT_ROOT when that variable is set.
std::string resolve_output_dir(const std::string& dir);

// 1-based number of rounds until test accuracy first reaches the target.
std::optional<int> rounds_to_target(const std::vector<RoundRecord>& rounds,
                                    double target);

// Runs every (strategy, seed) cell, writing per-cell artifacts and a summary.
// Returns a process exit status; on failure a FAILED marker is left in the
// offending cell directory and partial outputs are retained.
int run_plan(const ExperimentPlan& plan);

// Aggregates metrics from completed cell directories into the summary format.
nlohmann::json summarize_runs(const std::vector<std::string>& cell_dirs,
                              std::optional<double> target_override = {});

// Recomputes reports from a cell's stored loss samples.
nlohmann::json diagnose_run(const std::string& cell_dir);

std::string cell_dir_name(Strategy strategy, std::uint64_t seed);

}  // namespace fedgp
