#include "fedgp/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fedgp/errors.hpp"
#include "fedgp/gp.hpp"
#include "fedgp/io.hpp"
#include "fedgp/rng.hpp"

namespace fedgp {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::rand: return "rand";
    case Strategy::afl: return "afl";
    case Strategy::powd: return "powd";
    case Strategy::fedgp: return "fedgp";
  }
  throw std::invalid_argument("unknown strategy");
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "rand") return Strategy::rand;
  if (name == "afl") return Strategy::afl;
  if (name == "powd") return Strategy::powd;
  if (name == "fedgp") return Strategy::fedgp;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

void FlConfig::validate() const {
  if (num_clients < 1) throw std::invalid_argument("config: num_clients must be positive");
  if (clients_per_round < 1 || clients_per_round > num_clients)
    throw std::invalid_argument("config: clients_per_round (" +
                                std::to_string(clients_per_round) +
                                ") must be in [1, num_clients (" +
                                std::to_string(num_clients) + ")]");
  if (local_epochs < 1) throw std::invalid_argument("config: local_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (total_rounds < 1) throw std::invalid_argument("config: total_rounds must be >= 1");
  if (warmup_rounds < 0) throw std::invalid_argument("config: warmup_rounds must be >= 0");
  if (gp_interval < 1) throw std::invalid_argument("config: gp_interval must be >= 1");
  if (probes_per_gp_round < 1)
    throw std::invalid_argument("config: probes_per_gp_round must be >= 1");
  if (history_depth < 0) throw std::invalid_argument("config: history_depth must be >= 0");
  if (!(discount_base > 0.0 && discount_base <= 1.0))
    throw std::invalid_argument("config: discount_base must be in (0, 1]");
  if (!(anneal_beta > 0.0 && anneal_beta <= 1.0))
    throw std::invalid_argument("config: anneal_beta must be in (0, 1]");
  if (embed_dim < 1) throw std::invalid_argument("config: embed_dim must be >= 1");
  if (!(jitter > 0.0)) throw std::invalid_argument("config: jitter must be positive");
  if (gp_train_steps < 1) throw std::invalid_argument("config: gp_train_steps must be >= 1");
  const int d = powd_candidate_count();
  if (strategy == Strategy::powd && (d < clients_per_round || d > num_clients))
    throw std::invalid_argument("config: powd candidate count out of range");
}

double FlConfig::learning_rate_at(int round) const {
  int halvings = 0;
  for (int r : lr_halving_rounds)
    if (r <= round) ++halvings;
  return learning_rate * std::pow(0.5, halvings);
}

int FlConfig::powd_candidate_count() const {
  if (powd_candidates > 0) return powd_candidates;
  return std::min(2 * clients_per_round, num_clients);
}

ParamVector local_update(const ParamVector& global, const ModelSpec& spec,
                         const LabeledDataset& data,
                         std::span<const int> client_examples,
                         const FlConfig& cfg, double eta,
                         std::uint64_t shuffle_seed) {
  if (client_examples.empty())
    throw std::invalid_argument("local_update: client has no data");

  ParamVector params = global;
  ParamVector cumulative{Eigen::VectorXd::Zero(global.values.size()), global.layout};
  std::vector<int> order(client_examples.begin(), client_examples.end());
  std::mt19937_64 rng = make_rng(shuffle_seed);

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len =
          std::min<std::size_t>(cfg.batch_size, order.size() - start);
      LossGrad lg = loss_and_grad(params, spec, data,
                                  {order.data() + start, len}, cfg.weight_decay);
      cumulative.values += lg.grad.values;
      params.values -= eta * lg.grad.values;
    }
  }
  if (!cumulative.values.allFinite())
    throw NumericError("local_update: non-finite cumulative gradient");
  return cumulative;
}

ParamVector aggregate(const ParamVector& global,
                      const std::vector<ParamVector>& cumulative_gradients,
                      double eta) {
  if (cumulative_gradients.empty())
    throw std::invalid_argument("aggregate: empty gradient list");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(global.values.size());
  for (const auto& g : cumulative_gradients) {
    if (!(g.layout == global.layout))
      throw std::invalid_argument("aggregate: parameter layout mismatch");
    sum += g.values;
  }
  ParamVector out = global;
  out.values -= (eta / static_cast<double>(cumulative_gradients.size())) * sum;
  return out;
}

Eigen::VectorXd evaluate_all_losses(const ParamVector& params,
                                    const ModelSpec& spec,
                                    const LabeledDataset& data,
                                    const Partition& part) {
  Eigen::VectorXd losses(part.num_clients());
  for (int k = 0; k < part.num_clients(); ++k)
    losses[k] = evaluate(params, spec, data, part.assignments[k]).mean_loss;
  return losses;
}

namespace {

// Within one round a client's local computation is deterministic, so probe
// draws and the applied update can share cumulative gradients.
class RoundUpdateCache {
 public:
  RoundUpdateCache(const ParamVector& global, const ModelSpec& spec,
                   const LabeledDataset& data, const Partition& part,
                   const FlConfig& cfg, double eta, int round)
      : global_(global), spec_(spec), data_(data), part_(part), cfg_(cfg),
        eta_(eta), round_(round) {}

  const ParamVector& gradient_for(int client) {
    auto it = cache_.find(client);
    if (it != cache_.end()) return it->second;
    ParamVector g = local_update(
        global_, spec_, data_, part_.assignments[static_cast<std::size_t>(client)],
        cfg_, eta_,
        stream_seed(cfg_.seed, "shuffle", static_cast<std::uint64_t>(round_),
                    static_cast<std::uint64_t>(client)));
    return cache_.emplace(client, std::move(g)).first->second;
  }

  ParamVector candidate_for(std::span<const int> selection) {
    std::vector<int> ascending(selection.begin(), selection.end());
    std::sort(ascending.begin(), ascending.end());
    std::vector<ParamVector> grads;
    grads.reserve(ascending.size());
    for (int k : ascending) grads.push_back(gradient_for(k));
    return aggregate(global_, grads, eta_);
  }

 private:
  const ParamVector& global_;
  const ModelSpec& spec_;
  const LabeledDataset& data_;
  const Partition& part_;
  const FlConfig& cfg_;
  double eta_;
  int round_;
  std::map<int, ParamVector> cache_;
};

ProbeResult probe_with_cache(RoundUpdateCache& cache, const ModelSpec& spec,
                             const LabeledDataset& data, const Partition& part,
                             const FlConfig& cfg, int round,
                             const Eigen::VectorXd& base_losses,
                             std::mt19937_64& rng) {
  ProbeResult out;
  out.sample.round = round;
  out.sample.selection = random_select(cfg.num_clients, cfg.clients_per_round, rng);
  out.candidate = cache.candidate_for(out.sample.selection);
  out.sample.delta_losses =
      evaluate_all_losses(out.candidate, spec, data, part) - base_losses;
  return out;
}

}  // namespace

ProbeResult collect_probe(const ParamVector& global, const ModelSpec& spec,
                          const LabeledDataset& data, const Partition& part,
                          const FlConfig& cfg, double eta, int round,
                          const Eigen::VectorXd& base_losses,
                          std::mt19937_64& rng) {
  RoundUpdateCache cache(global, spec, data, part, cfg, eta, round);
  return probe_with_cache(cache, spec, data, part, cfg, round, base_losses, rng);
}

ExperimentResult run_experiment(const FlConfig& cfg, const ModelSpec& spec,
                                const LabeledDataset& train,
                                const Partition& part,
                                const LabeledDataset& test,
                                const DiagnosticsOptions& diag,
                                const RoundCallback& on_round) {
  cfg.validate();
  spec.validate();
  train.validate();
  test.validate();
  if (part.num_clients() != cfg.num_clients)
    throw std::invalid_argument("run_experiment: partition size != num_clients");
  for (const auto& client : part.assignments)
    if (client.empty())
      throw std::invalid_argument("run_experiment: empty client dataset");

  const int n = cfg.num_clients;
  std::mt19937_64 probe_rng = make_rng(stream_seed(cfg.seed, "probe"));
  std::mt19937_64 strategy_rng = make_rng(stream_seed(cfg.seed, "strategy"));
  std::mt19937_64 diag_rng = make_rng(stream_seed(cfg.seed, "diagnostics"));

  ParamVector params = init_params(spec, stream_seed(cfg.seed, "model-init"));
  EmbeddingMatrix embeddings =
      init_embeddings(cfg.embed_dim, n, stream_seed(cfg.seed, "embed-init"));
  SelectionContext ctx(n, cfg.anneal_beta);
  ProbeHistory history(cfg.history_depth, cfg.probes_per_gp_round);

  Eigen::VectorXd current_losses = evaluate_all_losses(params, spec, train, part);
  const std::vector<int> test_idx = all_indices(test);

  ExperimentResult result;
  result.warmup_embeddings = embeddings;
  std::optional<Eigen::MatrixXd> prev_probe_cov;

  for (int t = 0; t < cfg.total_rounds; ++t) {
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const bool warm = t < cfg.warmup_rounds;
      const double eta = cfg.learning_rate_at(t);
      const int dt = warm ? 1 : cfg.gp_interval;
      RoundUpdateCache cache(params, spec, train, part, cfg, eta, t);

      // (a) probe collection and GP retraining
      bool gp_trained = false;
      std::optional<ProbeResult> warm_probe;
      if (cfg.strategy == Strategy::fedgp && t % dt == 0) {
        const int probes = warm ? 1 : cfg.probes_per_gp_round;
        for (int i = 0; i < probes; ++i) {
          ProbeResult pr = probe_with_cache(cache, spec, train, part, cfg, t,
                                            current_losses, probe_rng);
          history.add(pr.sample);
          result.gp_samples.push_back(pr.sample);
          if (warm) warm_probe = std::move(pr);
        }
        ctx.reset();
        embeddings = train_embeddings(std::move(embeddings), cfg.jitter,
                                      history.weighted(cfg.discount_base, t),
                                      cfg.gp_train_steps, cfg.gp_train_lr);
        gp_trained = true;
      }

      // diagnostics probes against the pre-update model
      if (diag.normality_samples > 0 && t == cfg.warmup_rounds - 1) {
        for (int i = 0; i < diag.normality_samples; ++i)
          result.normality_samples.push_back(
              probe_with_cache(cache, spec, train, part, cfg, t, current_losses,
                               diag_rng)
                  .sample.delta_losses);
        Eigen::MatrixXd m(diag.normality_samples, n);
        for (int i = 0; i < diag.normality_samples; ++i)
          m.row(i) = result.normality_samples[static_cast<std::size_t>(i)].transpose();
        result.normality = normality_test(m);
      }
      if (diag.stationarity_interval > 0 && t % diag.stationarity_interval == 0 &&
          diag.stationarity_samples > 0) {
        std::vector<Eigen::VectorXd> probe_deltas;
        probe_deltas.reserve(static_cast<std::size_t>(diag.stationarity_samples));
        for (int i = 0; i < diag.stationarity_samples; ++i)
          probe_deltas.push_back(
              probe_with_cache(cache, spec, train, part, cfg, t, current_losses,
                               diag_rng)
                  .sample.delta_losses);
        Eigen::MatrixXd cov = empirical_covariance(probe_deltas);
        if (prev_probe_cov)
          result.stationarity.push_back(
              {t, probe_similarity(*prev_probe_cov, cov),
               diag.stationarity_samples < n + 1});
        prev_probe_cov = std::move(cov);
      }

      // (b) selection
      std::vector<int> selected;
      SelectionTrace trace;
      if (warm) {
        selected = cfg.strategy == Strategy::fedgp
                       ? warm_probe->sample.selection
                       : random_select(n, cfg.clients_per_round, strategy_rng);
      } else {
        switch (cfg.strategy) {
          case Strategy::rand:
            selected = random_select(n, cfg.clients_per_round, strategy_rng);
            break;
          case Strategy::afl:
            selected = afl_select(current_losses, cfg.clients_per_round, cfg.afl,
                                  strategy_rng);
            break;
          case Strategy::powd:
            selected = powd_select(
                [&](int k) {
                  return evaluate(params, spec, train, part.assignments[k]).mean_loss;
                },
                n, cfg.clients_per_round, cfg.powd_candidate_count(), strategy_rng);
            break;
          case Strategy::fedgp: {
            const GpState prior = make_prior(embeddings, cfg.jitter);
            selected = fedgp_select(prior, part.weights, ctx,
                                    cfg.clients_per_round, &trace);
            break;
          }
        }
      }

      // (c) apply the round's update; warm-up reuses the probe candidate
      if (warm && cfg.strategy == Strategy::fedgp)
        params = std::move(warm_probe->candidate);
      else
        params = cache.candidate_for(selected);

      // (d) annealing bookkeeping
      ctx.record_selection(selected);

      // (e) metrics
      current_losses = evaluate_all_losses(params, spec, train, part);
      const EvalResult test_eval = evaluate(params, spec, test, test_idx);
      if (t == cfg.warmup_rounds - 1) result.warmup_embeddings = embeddings;

      RoundRecord rec;
      rec.round = t;
      rec.global_train_loss = part.weights.dot(current_losses);
      rec.test_accuracy = test_eval.accuracy;
      rec.selected = selected;
      rec.phase = warm ? RoundRecord::Phase::warmup : RoundRecord::Phase::normal;
      rec.gp_trained = gp_trained;
      rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
      if (cfg.strategy == Strategy::fedgp) result.selection_traces.push_back(trace);
      result.rounds.push_back(rec);
      if (on_round) on_round(rec, params);
    } catch (const std::exception& e) {
      throw std::runtime_error("round " + std::to_string(t) + ": " + e.what());
    }
  }

  result.final_embeddings = embeddings;
  result.final_params = std::move(params);
  return result;
}

namespace {

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<int> parse_ids(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  for (const auto& tok : split(s, ';')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<RoundRecord>& rounds,
                       Strategy strategy, bool include_elapsed) {
  out << "round,phase,strategy,global_train_loss,test_accuracy,selected,gp_trained";
  if (include_elapsed) out << ",elapsed_ms";
  out << "\n";
  for (const auto& r : rounds) {
    out << r.round << ","
        << (r.phase == RoundRecord::Phase::warmup ? "warmup" : "normal") << ","
        << to_string(strategy) << "," << fmt_double(r.global_train_loss) << ","
        << fmt_double(r.test_accuracy) << "," << join_ids(r.selected) << ","
        << (r.gp_trained ? 1 : 0);
    if (include_elapsed) out << "," << fmt_double(r.elapsed_ms);
    out << "\n";
  }
}

std::vector<RoundRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("metrics csv: missing header");
  std::vector<RoundRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() < 7) throw ParseError("metrics csv: malformed row '" + line + "'");
    RoundRecord r;
    r.round = std::stoi(cols[0]);
    r.phase = cols[1] == "warmup" ? RoundRecord::Phase::warmup
                                  : RoundRecord::Phase::normal;
    r.global_train_loss = std::stod(cols[3]);
    r.test_accuracy = std::stod(cols[4]);
    r.selected = parse_ids(cols[5]);
    r.gp_trained = cols[6] == "1";
    if (cols.size() > 7) r.elapsed_ms = std::stod(cols[7]);
    out.push_back(std::move(r));
  }
  return out;
}

void write_loss_samples_jsonl(std::ostream& out,
                              const std::vector<LossSample>& samples) {
  for (const auto& s : samples) {
    nlohmann::json doc;
    doc["round"] = s.round;
    doc["selection"] = s.selection;
    doc["delta_losses"] = std::vector<double>(
        s.delta_losses.data(), s.delta_losses.data() + s.delta_losses.size());
    out << doc.dump() << "\n";
  }
}

std::vector<LossSample> read_loss_samples_jsonl(std::istream& in) {
  std::vector<LossSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json doc = nlohmann::json::parse(line);
    LossSample s;
    s.round = doc.at("round").get<int>();
    s.selection = doc.at("selection").get<std::vector<int>>();
    auto d = doc.at("delta_losses").get<std::vector<double>>();
    s.delta_losses =
        Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
    out.push_back(std::move(s));
  }
  return out;
}

void write_selection_traces_jsonl(std::ostream& out,
                                  const std::vector<RoundRecord>& rounds,
                                  const std::vector<SelectionTrace>& traces,
                                  Strategy strategy) {
  for (std::size_t t = 0; t < rounds.size(); ++t) {
    nlohmann::json doc;
    doc["round"] = rounds[t].round;
    doc["strategy"] = to_string(strategy);
    doc["picks"] = rounds[t].selected;
    if (strategy == Strategy::fedgp && t < traces.size() &&
        !traces[t].criteria.empty()) {
      nlohmann::json crit = nlohmann::json::array();
      for (const auto& row : traces[t].criteria) {
        nlohmann::json vals = nlohmann::json::array();
        for (Eigen::Index k = 0; k < row.size(); ++k) {
          if (std::isnan(row[k]))
            vals.push_back(nullptr);
          else
            vals.push_back(row[k]);
        }
        crit.push_back(std::move(vals));
      }
      doc["criteria"] = std::move(crit);
    }
    out << doc.dump() << "\n";
  }
}

std::vector<SelectionTraceRecord> read_selection_traces_jsonl(std::istream& in) {
  std::vector<SelectionTraceRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json doc = nlohmann::json::parse(line);
    SelectionTraceRecord rec;
    rec.round = doc.at("round").get<int>();
    rec.strategy = doc.at("strategy").get<std::string>();
    rec.picks = doc.at("picks").get<std::vector<int>>();
    if (doc.contains("criteria")) {
      for (const auto& row : doc.at("criteria")) {
        Eigen::VectorXd vals(static_cast<Eigen::Index>(row.size()));
        for (std::size_t k = 0; k < row.size(); ++k)
          vals[static_cast<Eigen::Index>(k)] =
              row[k].is_null() ? std::numeric_limits<double>::quiet_NaN()
                               : row[k].get<double>();
        rec.criteria.push_back(std::move(vals));
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace fedgp
