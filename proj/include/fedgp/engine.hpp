#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedgp/dataset.hpp"
#include "fedgp/diagnostics.hpp"
#include "fedgp/model.hpp"
#include "fedgp/partition.hpp"
#include "fedgp/selection.hpp"

namespace fedgp {

enum class Strategy { rand, afl, powd, fedgp };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

struct FlConfig {
  int num_clients = 0;        // N
  int clients_per_round = 0;  // C
  int local_epochs = 1;       // E
  int batch_size = 32;        // B
  double learning_rate = 0.01;
  std::vector<int> lr_halving_rounds;
  double weight_decay = 0.0;
  int total_rounds = 1;
  int warmup_rounds = 0;  // uniform selection, per-round GP training
  int gp_interval = 10;   // rounds between GP retraining in the normal phase
  int probes_per_gp_round = 1;
  int history_depth = 1;       // reused past probe groups
  double discount_base = 0.9;  // sample weight = base^(rounds since collection)
  double anneal_beta = 0.95;
  int embed_dim = 15;
  double jitter = 1e-3;
  int gp_train_steps = 500;
  double gp_train_lr = 0.01;
  int powd_candidates = 0;  // 0 -> 2 * clients_per_round
  AflParams afl;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::rand;

  void validate() const;
  // Initial rate halved once per configured round index <= round.
  double learning_rate_at(int round) const;
  int powd_candidate_count() const;
};

// One uniformly probed selection and the loss change it induced on every
// client (candidate model discarded by the caller unless in warm-up).
struct LossSample {
  int round = 0;
  std::vector<int> selection;
  Eigen::VectorXd delta_losses;
};

struct RoundRecord {
  enum class Phase { warmup, normal };

  int round = 0;
  double global_train_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<int> selected;  // in pick order
  Phase phase = Phase::normal;
  bool gp_trained = false;
  double elapsed_ms = 0.0;
};

// Local training pass: `epochs` sweeps of seeded mini-batch SGD from the
// global parameters. Returns the accumulated per-step gradient sum, i.e. the
// client's total update divided by the learning rate.
ParamVector local_update(const ParamVector& global, const ModelSpec& spec,
                         const LabeledDataset& data,
                         std::span<const int> client_examples,
                         const FlConfig& cfg, double eta,
                         std::uint64_t shuffle_seed);

// global - (eta / C) * sum of cumulative gradients, summed in list order.
ParamVector aggregate(const ParamVector& global,
                      const std::vector<ParamVector>& cumulative_gradients,
                      double eta);

// Per-client mean loss (no decay term) over each client's full local data.
Eigen::VectorXd evaluate_all_losses(const ParamVector& params,
                                    const ModelSpec& spec,
                                    const LabeledDataset& data,
                                    const Partition& part);

struct ProbeResult {
  LossSample sample;
  ParamVector candidate;
};

// Sliding window of probe samples reused across GP training rounds. Holds at
// most (history_depth + 1) * probes_per_round samples; a sample collected r
// rounds ago carries weight discount_base^r.
class ProbeHistory {
 public:
  ProbeHistory(int history_depth, int probes_per_round)
      : cap_(static_cast<std::size_t>(history_depth + 1) *
             static_cast<std::size_t>(probes_per_round)) {}

  void add(LossSample sample) {
    samples_.push_back(std::move(sample));
    while (samples_.size() > cap_) samples_.erase(samples_.begin());
  }

  std::vector<WeightedSample> weighted(double discount_base, int current_round) const {
    std::vector<WeightedSample> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_)
      out.push_back({s.delta_losses,
                     std::pow(discount_base, current_round - s.round)});
    return out;
  }

  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return cap_; }

 private:
  std::size_t cap_;
  std::vector<LossSample> samples_;
};

// Draws a uniform selection, builds the candidate model it would produce and
// measures the loss change of every client against base_losses.
ProbeResult collect_probe(const ParamVector& global, const ModelSpec& spec,
                          const LabeledDataset& data, const Partition& part,
                          const FlConfig& cfg, double eta, int round,
                          const Eigen::VectorXd& base_losses,
                          std::mt19937_64& rng);

struct DiagnosticsOptions {
  int stationarity_interval = 0;  // 0 disables
  int stationarity_samples = 0;
  int normality_samples = 0;  // probes at the last warm-up round; 0 disables
};

struct ExperimentResult {
  std::vector<RoundRecord> rounds;
  std::vector<LossSample> gp_samples;  // every probe collected for GP training
  std::vector<SelectionTrace> selection_traces;
  Eigen::MatrixXd warmup_embeddings;  // at the end of the warm-up phase
  Eigen::MatrixXd final_embeddings;
  std::vector<StationarityPoint> stationarity;
  std::optional<NormalityReport> normality;
  std::vector<Eigen::VectorXd> normality_samples;
  ParamVector final_params;
};

using RoundCallback =
    std::function<void(const RoundRecord&, const ParamVector&)>;

// Two-phase federated simulation. Warm-up rounds force per-round GP training
// with a single probe whose candidate doubles as the applied update; normal
// rounds retrain every gp_interval rounds on discount-weighted history and
// select with the configured strategy. Baseline strategies skip the GP
// machinery entirely but share the uniform warm-up behavior.
ExperimentResult run_experiment(const FlConfig& cfg, const ModelSpec& spec,
                                const LabeledDataset& train,
                                const Partition& part,
                                const LabeledDataset& test,
                                const DiagnosticsOptions& diag = {},
                                const RoundCallback& on_round = nullptr);

// One CSV row per round. elapsed_ms is the only non-reproducible column and
// is included only on request.
void write_metrics_csv(std::ostream& out, const std::vector<RoundRecord>& rounds,
                       Strategy strategy, bool include_elapsed = false);
std::vector<RoundRecord> read_metrics_csv(std::istream& in);

void write_loss_samples_jsonl(std::ostream& out,
                              const std::vector<LossSample>& samples);
std::vector<LossSample> read_loss_samples_jsonl(std::istream& in);

void write_selection_traces_jsonl(std::ostream& out,
                                  const std::vector<RoundRecord>& rounds,
                                  const std::vector<SelectionTrace>& traces,
                                  Strategy strategy);

struct SelectionTraceRecord {
  int round = 0;
  std::string strategy;
  std::vector<int> picks;
  std::vector<Eigen::VectorXd> criteria;  // NaN where a candidate was unavailable
};

std::vector<SelectionTraceRecord> read_selection_traces_jsonl(std::istream& in);

}  // namespace fedgp
