#include "fedgp/plan.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "fedgp/diagnostics.hpp"
#include "fedgp/errors.hpp"
#include "fedgp/io.hpp"
#include "fedgp/rng.hpp"

namespace fs = std::filesystem;

namespace fedgp {

bool IniDoc::has(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  return it != sections.end() && it->second.count(key) > 0;
}

std::string IniDoc::get(const std::string& section, const std::string& key,
                        const std::string& fallback) const {
  auto it = sections.find(section);
  if (it == sections.end()) return fallback;
  auto kt = it->second.find(key);
  return kt == it->second.end() ? fallback : kt->second;
}

IniDoc parse_ini(std::istream& in, const std::string& origin) {
  IniDoc doc;
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      doc.sections[section];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    doc.sections[section][key] = value;
  }
  return doc;
}

std::string to_string(PartitionSpec::Scheme s) {
  switch (s) {
    case PartitionSpec::Scheme::two_spc: return "2spc";
    case PartitionSpec::Scheme::one_spc: return "1spc";
    case PartitionSpec::Scheme::dir: return "dir";
  }
  throw std::invalid_argument("unknown partition scheme");
}

PartitionSpec::Scheme scheme_from_string(const std::string& name) {
  if (name == "2spc") return PartitionSpec::Scheme::two_spc;
  if (name == "1spc") return PartitionSpec::Scheme::one_spc;
  if (name == "dir") return PartitionSpec::Scheme::dir;
  throw std::invalid_argument("unknown partition scheme '" + name + "'");
}

namespace {

const std::map<std::string, std::vector<std::string>> kKnownKeys = {
    {"run", {"strategies", "seeds", "output_dir", "target_accuracy", "checkpoint_interval"}},
    {"data",
     {"source", "num_classes", "dim", "per_class", "test_per_class",
      "class_separation", "train_images", "train_labels", "test_images",
      "test_labels"}},
    {"partition", {"scheme", "alpha", "num_clients"}},
    {"model", {"architecture", "hidden_dims"}},
    {"federated",
     {"clients_per_round", "local_epochs", "batch_size", "learning_rate",
      "lr_halving_rounds", "weight_decay", "total_rounds", "warmup_rounds"}},
    {"gp",
     {"interval", "probes_per_round", "history_depth", "discount_base", "beta",
      "embed_dim", "jitter", "train_steps", "train_lr"}},
    {"selection",
     {"powd_candidates", "afl_mask_fraction", "afl_softmax_scale",
      "afl_uniform_fraction"}},
    {"diagnostics",
     {"stationarity_interval", "stationarity_samples", "normality_samples",
      "export_embeddings"}},
};

void reject_unknown_keys(const IniDoc& doc) {
  std::vector<std::string> unknown;
  for (const auto& [section, kv] : doc.sections) {
    auto reg = kKnownKeys.find(section);
    if (reg == kKnownKeys.end()) {
      for (const auto& [key, _] : kv) unknown.push_back(section + "." + key);
      if (kv.empty()) unknown.push_back(section + ".*");
      continue;
    }
    for (const auto& [key, _] : kv)
      if (std::find(reg->second.begin(), reg->second.end(), key) == reg->second.end())
        unknown.push_back(section + "." + key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw std::invalid_argument(msg);
  }
}

int to_int(const std::string& v, const std::string& key) {
  try {
    return std::stoi(v);
  } catch (...) {
    throw std::invalid_argument(key + ": expected integer, got '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    return std::stod(v);
  } catch (...) {
    throw std::invalid_argument(key + ": expected number, got '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected boolean, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (const auto& tok : split(v, ',')) {
    auto t = trim(tok);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

ExperimentPlan plan_from_ini(const IniDoc& doc) {
  reject_unknown_keys(doc);
  ExperimentPlan plan;

  // [run]
  for (const auto& s : to_list(doc.get("run", "strategies", "rand")))
    plan.strategies.push_back(strategy_from_string(s));
  for (const auto& s : to_list(doc.get("run", "seeds", "1")))
    plan.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
  plan.output_dir = doc.get("run", "output_dir", "out");
  plan.target_accuracy = to_double(doc.get("run", "target_accuracy", "-1"), "run.target_accuracy");
  plan.checkpoint_interval =
      to_int(doc.get("run", "checkpoint_interval", "0"), "run.checkpoint_interval");

  // [data]
  const std::string source = doc.get("data", "source", "synthetic");
  if (source == "synthetic")
    plan.dataset.source = DatasetSpec::Source::synthetic;
  else if (source == "idx")
    plan.dataset.source = DatasetSpec::Source::idx;
  else
    throw std::invalid_argument("data.source: unknown source '" + source + "'");
  plan.dataset.num_classes = to_int(doc.get("data", "num_classes", "10"), "data.num_classes");
  plan.dataset.dim = to_int(doc.get("data", "dim", "20"), "data.dim");
  plan.dataset.per_class = to_int(doc.get("data", "per_class", "60"), "data.per_class");
  plan.dataset.test_per_class =
      to_int(doc.get("data", "test_per_class", "20"), "data.test_per_class");
  plan.dataset.class_separation =
      to_double(doc.get("data", "class_separation", "3.0"), "data.class_separation");
  plan.dataset.train_images = doc.get("data", "train_images", "");
  plan.dataset.train_labels = doc.get("data", "train_labels", "");
  plan.dataset.test_images = doc.get("data", "test_images", "");
  plan.dataset.test_labels = doc.get("data", "test_labels", "");

  // [partition]
  plan.partition.scheme = scheme_from_string(doc.get("partition", "scheme", "1spc"));
  plan.partition.alpha = to_double(doc.get("partition", "alpha", "0.2"), "partition.alpha");
  plan.base.num_clients = to_int(doc.get("partition", "num_clients", "30"), "partition.num_clients");

  // [model]
  const std::string arch = doc.get("model", "architecture", "mlp");
  if (arch == "logreg")
    plan.model.architecture = Architecture::logreg;
  else if (arch == "mlp")
    plan.model.architecture = Architecture::mlp;
  else
    throw std::invalid_argument("model.architecture: unknown architecture '" + arch + "'");
  for (const auto& h : to_list(doc.get("model", "hidden_dims", arch == "mlp" ? "16" : "")))
    plan.model.hidden_dims.push_back(to_int(h, "model.hidden_dims"));

  // [federated]
  plan.base.clients_per_round =
      to_int(doc.get("federated", "clients_per_round", "3"), "federated.clients_per_round");
  plan.base.local_epochs =
      to_int(doc.get("federated", "local_epochs", "1"), "federated.local_epochs");
  plan.base.batch_size = to_int(doc.get("federated", "batch_size", "10"), "federated.batch_size");
  plan.base.learning_rate =
      to_double(doc.get("federated", "learning_rate", "0.05"), "federated.learning_rate");
  for (const auto& r : to_list(doc.get("federated", "lr_halving_rounds", "")))
    plan.base.lr_halving_rounds.push_back(to_int(r, "federated.lr_halving_rounds"));
  plan.base.weight_decay =
      to_double(doc.get("federated", "weight_decay", "0.0001"), "federated.weight_decay");
  plan.base.total_rounds =
      to_int(doc.get("federated", "total_rounds", "50"), "federated.total_rounds");
  plan.base.warmup_rounds =
      to_int(doc.get("federated", "warmup_rounds", "15"), "federated.warmup_rounds");

  // [gp]
  plan.base.gp_interval = to_int(doc.get("gp", "interval", "10"), "gp.interval");
  plan.base.probes_per_gp_round =
      to_int(doc.get("gp", "probes_per_round", "1"), "gp.probes_per_round");
  plan.base.history_depth = to_int(doc.get("gp", "history_depth", "1"), "gp.history_depth");
  plan.base.discount_base =
      to_double(doc.get("gp", "discount_base", "0.9"), "gp.discount_base");
  plan.base.anneal_beta = to_double(doc.get("gp", "beta", "0.95"), "gp.beta");
  plan.base.embed_dim = to_int(doc.get("gp", "embed_dim", "15"), "gp.embed_dim");
  plan.base.jitter = to_double(doc.get("gp", "jitter", "1e-3"), "gp.jitter");
  plan.base.gp_train_steps = to_int(doc.get("gp", "train_steps", "500"), "gp.train_steps");
  plan.base.gp_train_lr = to_double(doc.get("gp", "train_lr", "0.01"), "gp.train_lr");

  // [selection]
  plan.base.powd_candidates =
      to_int(doc.get("selection", "powd_candidates", "0"), "selection.powd_candidates");
  plan.base.afl.mask_fraction =
      to_double(doc.get("selection", "afl_mask_fraction", "0.75"), "selection.afl_mask_fraction");
  plan.base.afl.softmax_scale =
      to_double(doc.get("selection", "afl_softmax_scale", "0.01"), "selection.afl_softmax_scale");
  plan.base.afl.uniform_fraction =
      to_double(doc.get("selection", "afl_uniform_fraction", "0.1"), "selection.afl_uniform_fraction");

  // [diagnostics]
  plan.diagnostics.stationarity_interval = to_int(
      doc.get("diagnostics", "stationarity_interval", "0"), "diagnostics.stationarity_interval");
  plan.diagnostics.stationarity_samples = to_int(
      doc.get("diagnostics", "stationarity_samples", "0"), "diagnostics.stationarity_samples");
  plan.diagnostics.normality_samples = to_int(
      doc.get("diagnostics", "normality_samples", "0"), "diagnostics.normality_samples");
  plan.diagnostics.export_embeddings = to_bool(
      doc.get("diagnostics", "export_embeddings", "true"), "diagnostics.export_embeddings");

  plan.validate();
  return plan;
}

}  // namespace

void ExperimentPlan::validate() const {
  if (strategies.empty()) throw std::invalid_argument("plan: no strategies");
  if (seeds.empty()) throw std::invalid_argument("plan: no seeds");
  if (output_dir.empty()) throw std::invalid_argument("plan: empty output_dir");
  if (dataset.source == DatasetSpec::Source::synthetic) {
    if (dataset.num_classes < 2 || dataset.dim < 2 || dataset.per_class < 1)
      throw std::invalid_argument("plan: invalid synthetic dataset sizes");
  } else if (dataset.train_images.empty() || dataset.train_labels.empty()) {
    throw std::invalid_argument("plan: idx source requires train_images/train_labels");
  }
  if (partition.scheme == PartitionSpec::Scheme::dir && partition.alpha <= 0.0)
    throw std::invalid_argument("plan: dirichlet alpha must be positive");
  FlConfig probe = base;
  probe.strategy = strategies.front();
  probe.seed = seeds.front();
  probe.validate();
}

ExperimentPlan parse_plan(const std::string& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  IniDoc doc = parse_ini(in, path);
  for (const auto& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override '" + ov + "': expected section.key=value");
    const std::string target = trim(ov.substr(0, eq));
    const std::size_t dot = target.find('.');
    if (dot == std::string::npos)
      throw std::invalid_argument("override '" + ov + "': expected section.key=value");
    doc.sections[target.substr(0, dot)][target.substr(dot + 1)] = trim(ov.substr(eq + 1));
  }
  return plan_from_ini(doc);
}

namespace {

template <typename T>
std::string join_list(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>)
      out += xs[i];
    else
      out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

std::string plan_to_ini(const ExperimentPlan& plan) {
  std::ostringstream out;
  std::vector<std::string> strat_names;
  for (auto s : plan.strategies) strat_names.push_back(to_string(s));

  out << "[run]\n";
  out << "strategies = " << join_list(strat_names) << "\n";
  out << "seeds = " << join_list(plan.seeds) << "\n";
  out << "output_dir = " << plan.output_dir << "\n";
  out << "target_accuracy = " << fmt_double(plan.target_accuracy) << "\n";
  out << "checkpoint_interval = " << plan.checkpoint_interval << "\n\n";

  out << "[data]\n";
  out << "source = "
      << (plan.dataset.source == DatasetSpec::Source::synthetic ? "synthetic" : "idx") << "\n";
  if (plan.dataset.source == DatasetSpec::Source::synthetic) {
    out << "num_classes = " << plan.dataset.num_classes << "\n";
    out << "dim = " << plan.dataset.dim << "\n";
    out << "per_class = " << plan.dataset.per_class << "\n";
    out << "test_per_class = " << plan.dataset.test_per_class << "\n";
    out << "class_separation = " << fmt_double(plan.dataset.class_separation) << "\n";
  } else {
    out << "train_images = " << plan.dataset.train_images << "\n";
    out << "train_labels = " << plan.dataset.train_labels << "\n";
    out << "test_images = " << plan.dataset.test_images << "\n";
    out << "test_labels = " << plan.dataset.test_labels << "\n";
  }
  out << "\n[partition]\n";
  out << "scheme = " << to_string(plan.partition.scheme) << "\n";
  out << "alpha = " << fmt_double(plan.partition.alpha) << "\n";
  out << "num_clients = " << plan.base.num_clients << "\n";

  out << "\n[model]\n";
  out << "architecture = "
      << (plan.model.architecture == Architecture::logreg ? "logreg" : "mlp") << "\n";
  out << "hidden_dims = " << join_list(plan.model.hidden_dims) << "\n";

  out << "\n[federated]\n";
  out << "clients_per_round = " << plan.base.clients_per_round << "\n";
  out << "local_epochs = " << plan.base.local_epochs << "\n";
  out << "batch_size = " << plan.base.batch_size << "\n";
  out << "learning_rate = " << fmt_double(plan.base.learning_rate) << "\n";
  out << "lr_halving_rounds = " << join_list(plan.base.lr_halving_rounds) << "\n";
  out << "weight_decay = " << fmt_double(plan.base.weight_decay) << "\n";
  out << "total_rounds = " << plan.base.total_rounds << "\n";
  out << "warmup_rounds = " << plan.base.warmup_rounds << "\n";

  out << "\n[gp]\n";
  out << "interval = " << plan.base.gp_interval << "\n";
  out << "probes_per_round = " << plan.base.probes_per_gp_round << "\n";
  out << "history_depth = " << plan.base.history_depth << "\n";
  out << "discount_base = " << fmt_double(plan.base.discount_base) << "\n";
  out << "beta = " << fmt_double(plan.base.anneal_beta) << "\n";
  out << "embed_dim = " << plan.base.embed_dim << "\n";
  out << "jitter = " << fmt_double(plan.base.jitter) << "\n";
  out << "train_steps = " << plan.base.gp_train_steps << "\n";
  out << "train_lr = " << fmt_double(plan.base.gp_train_lr) << "\n";

  out << "\n[selection]\n";
  out << "powd_candidates = " << plan.base.powd_candidates << "\n";
  out << "afl_mask_fraction = " << fmt_double(plan.base.afl.mask_fraction) << "\n";
  out << "afl_softmax_scale = " << fmt_double(plan.base.afl.softmax_scale) << "\n";
  out << "afl_uniform_fraction = " << fmt_double(plan.base.afl.uniform_fraction) << "\n";

  out << "\n[diagnostics]\n";
  out << "stationarity_interval = " << plan.diagnostics.stationarity_interval << "\n";
  out << "stationarity_samples = " << plan.diagnostics.stationarity_samples << "\n";
  out << "normality_samples = " << plan.diagnostics.normality_samples << "\n";
  out << "export_embeddings = " << (plan.diagnostics.export_embeddings ? "true" : "false")
      << "\n";
  return out.str();
}

std::pair<LabeledDataset, LabeledDataset> build_dataset(const DatasetSpec& spec,
                                                        std::uint64_t seed) {
  if (spec.source == DatasetSpec::Source::idx) {
    LabeledDataset train = load_idx(spec.train_images, spec.train_labels);
    LabeledDataset test = spec.test_images.empty()
                              ? train
                              : load_idx(spec.test_images, spec.test_labels);
    const int classes = std::max(train.num_classes, test.num_classes);
    train.num_classes = classes;
    test.num_classes = classes;
    return {std::move(train), std::move(test)};
  }
  LabeledDataset pool =
      gen_synthetic(spec.num_classes, spec.dim, spec.per_class + spec.test_per_class,
                    spec.class_separation, seed);
  return split_per_class(pool, spec.per_class);
}

Partition build_partition(const PartitionSpec& spec, const LabeledDataset& data,
                          int num_clients, std::uint64_t seed) {
  switch (spec.scheme) {
    case PartitionSpec::Scheme::one_spc:
      return partition_shards(data, num_clients, 1, seed);
    case PartitionSpec::Scheme::two_spc:
      return partition_shards(data, num_clients, 2, seed);
    case PartitionSpec::Scheme::dir:
      return partition_dirichlet(data, num_clients, spec.alpha, seed);
  }
  throw std::invalid_argument("unknown partition scheme");
}

std::string resolve_output_dir(const std::string& dir) {
  const char* root = std::getenv("FEDGP_OUTPUT_ROOT");
  if (root && *root && !fs::path(dir).is_absolute())
    return (fs::path(root) / dir).string();
  return dir;
}

std::optional<int> rounds_to_target(const std::vector<RoundRecord>& rounds,
                                    double target) {
  for (const auto& r : rounds)
    if (r.test_accuracy >= target) return r.round + 1;
  return std::nullopt;
}

std::string cell_dir_name(Strategy strategy, std::uint64_t seed) {
  return to_string(strategy) + "-seed" + std::to_string(seed);
}

namespace {

void write_embeddings_file(const fs::path& path, const Eigen::MatrixXd& x) {
  std::ofstream out(path);
  write_embeddings_csv(out, x);
}

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct CellOutcome {
  Strategy strategy;
  std::uint64_t seed;
  std::vector<RoundRecord> rounds;
};

CellOutcome run_cell(const ExperimentPlan& plan, Strategy strategy,
                     std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  const std::string started = timestamp_now();

  auto [train, test] = build_dataset(plan.dataset, stream_seed(seed, "data"));
  Partition part = build_partition(plan.partition, train, plan.base.num_clients,
                                   stream_seed(seed, "partition"));

  ModelSpec model = plan.model;
  model.input_dim = train.dim();
  model.num_classes = train.num_classes;

  FlConfig cfg = plan.base;
  cfg.seed = seed;
  cfg.strategy = strategy;

  DiagnosticsOptions diag;
  diag.stationarity_interval = plan.diagnostics.stationarity_interval;
  diag.stationarity_samples = plan.diagnostics.stationarity_samples;
  diag.normality_samples = plan.diagnostics.normality_samples;

  RoundCallback checkpoint = nullptr;
  if (plan.checkpoint_interval > 0) {
    fs::create_directories(dir / "checkpoints");
    checkpoint = [&, dir](const RoundRecord& rec, const ParamVector& params) {
      if ((rec.round + 1) % plan.checkpoint_interval != 0) return;
      const std::string stem = "round_" + std::to_string(rec.round);
      save_params(params, (dir / "checkpoints" / (stem + ".bin")).string(),
                  (dir / "checkpoints" / (stem + ".layout.json")).string());
    };
  }

  ExperimentResult result =
      run_experiment(cfg, model, train, part, test, diag, checkpoint);

  {
    std::ofstream out(dir / "metrics.csv");
    write_metrics_csv(out, result.rounds, strategy, /*include_elapsed=*/false);
  }
  {
    std::ofstream out(dir / "selection_trace.jsonl");
    write_selection_traces_jsonl(out, result.rounds, result.selection_traces, strategy);
  }
  {
    std::ofstream out(dir / "loss_samples.jsonl");
    write_loss_samples_jsonl(out, result.gp_samples);
  }
  {
    nlohmann::json cell;
    cell["strategy"] = to_string(strategy);
    cell["seed"] = seed;
    cell["target_accuracy"] = plan.target_accuracy;
    cell["num_clients"] = plan.base.num_clients;
    std::ofstream out(dir / "cell.json");
    out << cell.dump(2) << "\n";
  }

  if (strategy == Strategy::fedgp && plan.diagnostics.export_embeddings) {
    write_embeddings_file(dir / "embeddings.csv", result.final_embeddings);
    write_embeddings_file(dir / "embeddings_normalized.csv",
                          normalize_columns(result.final_embeddings));
    write_embeddings_file(dir / "embeddings_warmup.csv", result.warmup_embeddings);
    const std::vector<int> labels = dominant_labels(train, part);
    {
      std::ofstream out(dir / "embeddings_2d.csv");
      export_projected_embeddings(result.final_embeddings, labels, out);
    }
    {
      std::ofstream out(dir / "embeddings_warmup_2d.csv");
      export_projected_embeddings(result.warmup_embeddings, labels, out);
    }
    const CohesionStats final_cs =
        embedding_label_cohesion(result.final_embeddings, labels);
    const CohesionStats warm_cs =
        embedding_label_cohesion(result.warmup_embeddings, labels);
    nlohmann::json cohesion;
    cohesion["final"] = {{"intra", final_cs.intra}, {"inter", final_cs.inter}};
    cohesion["warmup"] = {{"intra", warm_cs.intra}, {"inter", warm_cs.inter}};
    std::ofstream out(dir / "cohesion.json");
    out << cohesion.dump(2) << "\n";
  }

  if (result.normality) {
    std::ofstream out(dir / "normality.json");
    out << normality_to_json(*result.normality).dump(2) << "\n";
  }
  if (!result.stationarity.empty()) {
    std::ofstream out(dir / "stationarity.json");
    out << stationarity_to_json(result.stationarity).dump(2) << "\n";
  }

  {
    nlohmann::json info;
    info["started_at"] = started;
    info["finished_at"] = timestamp_now();
    std::vector<double> elapsed;
    for (const auto& r : result.rounds) elapsed.push_back(r.elapsed_ms);
    info["round_elapsed_ms"] = elapsed;
    info["total_elapsed_ms"] = std::accumulate(elapsed.begin(), elapsed.end(), 0.0);
    std::ofstream out(dir / "run_info.json");
    out << info.dump(2) << "\n";
  }

  return {strategy, seed, std::move(result.rounds)};
}

}  // namespace

nlohmann::json summarize_runs(const std::vector<std::string>& cell_dirs,
                              std::optional<double> target_override) {
  struct Cell {
    std::uint64_t seed;
    std::optional<int> rounds;
  };
  std::map<std::string, std::vector<Cell>> per_strategy;
  std::optional<double> target = target_override;

  for (const auto& dir : cell_dirs) {
    std::ifstream cell_in(fs::path(dir) / "cell.json");
    if (!cell_in) throw ParseError(dir + "/cell.json: cannot open");
    nlohmann::json cell = nlohmann::json::parse(cell_in);
    if (!target) {
      const double t = cell.at("target_accuracy").get<double>();
      if (t >= 0.0) target = t;
    }
    std::ifstream metrics_in(fs::path(dir) / "metrics.csv");
    if (!metrics_in) throw ParseError(dir + "/metrics.csv: cannot open");
    const auto rounds = read_metrics_csv(metrics_in);
    Cell c;
    c.seed = cell.at("seed").get<std::uint64_t>();
    if (target) c.rounds = rounds_to_target(rounds, *target);
    per_strategy[cell.at("strategy").get<std::string>()].push_back(c);
  }

  nlohmann::json doc;
  doc["target_accuracy"] = target ? nlohmann::json(*target) : nlohmann::json(nullptr);
  doc["strategies"] = nlohmann::json::object();
  for (auto& [name, cells] : per_strategy) {
    std::sort(cells.begin(), cells.end(),
              [](const Cell& a, const Cell& b) { return a.seed < b.seed; });
    nlohmann::json entry;
    entry["cells"] = nlohmann::json::array();
    std::vector<double> reached;
    bool all_reached = true;
    for (const auto& c : cells) {
      entry["cells"].push_back(
          {{"seed", c.seed},
           {"rounds", c.rounds ? nlohmann::json(*c.rounds) : nlohmann::json(nullptr)},
           {"reached", c.rounds.has_value()}});
      if (c.rounds)
        reached.push_back(*c.rounds);
      else
        all_reached = false;
    }
    entry["reached_all"] = all_reached;
    if (all_reached && !reached.empty()) {
      const double mean =
          std::accumulate(reached.begin(), reached.end(), 0.0) / reached.size();
      double var = 0.0;
      for (double r : reached) var += (r - mean) * (r - mean);
      var = reached.size() > 1 ? var / (reached.size() - 1) : 0.0;
      entry["mean_rounds"] = mean;
      entry["std_rounds"] = std::sqrt(var);
    } else {
      entry["mean_rounds"] = nullptr;
      entry["std_rounds"] = nullptr;
    }
    // median over all cells, unreached counted as worse than any finite value
    std::vector<double> ordered;
    for (const auto& c : cells)
      ordered.push_back(c.rounds ? static_cast<double>(*c.rounds)
                                 : std::numeric_limits<double>::infinity());
    std::sort(ordered.begin(), ordered.end());
    double median;
    const std::size_t m = ordered.size();
    median = m % 2 ? ordered[m / 2] : 0.5 * (ordered[m / 2 - 1] + ordered[m / 2]);
    entry["median_rounds"] =
        std::isfinite(median) ? nlohmann::json(median) : nlohmann::json(nullptr);
    doc["strategies"][name] = std::move(entry);
  }
  return doc;
}

int run_plan(const ExperimentPlan& plan) {
  plan.validate();
  const fs::path root = resolve_output_dir(plan.output_dir);
  fs::create_directories(root);
  write_text_file((root / "plan_resolved.ini").string(), plan_to_ini(plan));

  std::vector<std::string> cell_dirs;
  for (Strategy strategy : plan.strategies) {
    for (std::uint64_t seed : plan.seeds) {
      const fs::path dir = root / cell_dir_name(strategy, seed);
      try {
        run_cell(plan, strategy, seed, dir);
        cell_dirs.push_back(dir.string());
      } catch (const std::exception& e) {
        fs::create_directories(dir);
        write_text_file((dir / "FAILED").string(), std::string(e.what()) + "\n");
        std::cerr << "cell " << dir << " failed: " << e.what() << "\n";
        return 1;
      }
    }
  }

  const nlohmann::json summary = summarize_runs(cell_dirs);
  write_text_file((root / "summary.json").string(), summary.dump(2) + "\n");
  return 0;
}

nlohmann::json diagnose_run(const std::string& cell_dir) {
  std::ifstream in(fs::path(cell_dir) / "loss_samples.jsonl");
  if (!in) throw ParseError(cell_dir + "/loss_samples.jsonl: cannot open");
  const auto samples = read_loss_samples_jsonl(in);

  nlohmann::json doc;
  doc["sample_count"] = samples.size();
  if (samples.empty()) {
    doc["normality"] = nullptr;
    doc["stationarity"] = nlohmann::json::array();
    return doc;
  }
  const Eigen::Index n = samples.front().delta_losses.size();

  if (samples.size() >= 100) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), n);
    for (std::size_t i = 0; i < samples.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) = samples[i].delta_losses.transpose();
    doc["normality"] = normality_to_json(normality_test(m));
  } else {
    doc["normality"] = nullptr;
  }

  std::map<int, std::vector<Eigen::VectorXd>> by_round;
  for (const auto& s : samples) by_round[s.round].push_back(s.delta_losses);
  std::vector<StationarityPoint> series;
  std::optional<Eigen::MatrixXd> prev;
  for (const auto& [round, group] : by_round) {
    Eigen::MatrixXd cov = empirical_covariance(group);
    if (prev)
      series.push_back({round, probe_similarity(*prev, cov),
                        static_cast<Eigen::Index>(group.size()) < n + 1});
    prev = std::move(cov);
  }
  doc["stationarity"] = stationarity_to_json(series);
  return doc;
}

}  // namespace fedgp
