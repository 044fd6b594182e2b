#include "fedgp/partition.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

#include "fedgp/errors.hpp"
#include "fedgp/rng.hpp"

namespace fedgp {

void Partition::validate(const LabeledDataset& data) const {
  if (weights.size() != num_clients())
    throw std::invalid_argument("partition: weights length != client count");
  std::vector<char> seen(data.size(), 0);
  long long total = 0;
  for (const auto& client : assignments) {
    for (int idx : client) {
      if (idx < 0 || idx >= data.size())
        throw std::invalid_argument("partition: index out of range");
      if (seen[idx]++)
        throw std::invalid_argument("partition: duplicate index assignment");
    }
    total += static_cast<long long>(client.size());
  }
  for (int k = 0; k < num_clients(); ++k) {
    double expect = static_cast<double>(assignments[k].size()) / static_cast<double>(total);
    if (weights[k] != expect)
      throw std::invalid_argument("partition: weight law violated");
  }
}

namespace {

Eigen::VectorXd weights_from_sizes(const std::vector<std::vector<int>>& assignments) {
  long long total = 0;
  for (const auto& a : assignments) total += static_cast<long long>(a.size());
  Eigen::VectorXd w(static_cast<Eigen::Index>(assignments.size()));
  for (std::size_t k = 0; k < assignments.size(); ++k)
    w[static_cast<Eigen::Index>(k)] =
        static_cast<double>(assignments[k].size()) / static_cast<double>(total);
  return w;
}

}  // namespace

Partition partition_shards(const LabeledDataset& data, int num_clients,
                           int shards_per_client, std::uint64_t seed) {
  data.validate();
  if (num_clients < 1 || shards_per_client < 1)
    throw std::invalid_argument("partition_shards: counts must be positive");
  const int num_shards = num_clients * shards_per_client;
  if (data.size() % num_shards != 0)
    throw std::invalid_argument(
        "partition_shards: example count " + std::to_string(data.size()) +
        " not divisible by shard count " + std::to_string(num_shards));
  const int shard_size = data.size() / num_shards;

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return data.labels[a] < data.labels[b]; });

  std::vector<int> shard_ids(num_shards);
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  std::mt19937_64 rng = make_rng(seed);
  std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

  Partition part;
  part.assignments.resize(num_clients);
  for (int k = 0; k < num_clients; ++k) {
    auto& client = part.assignments[k];
    client.reserve(static_cast<std::size_t>(shards_per_client) * shard_size);
    for (int s = 0; s < shards_per_client; ++s) {
      const int shard = shard_ids[k * shards_per_client + s];
      for (int i = 0; i < shard_size; ++i)
        client.push_back(order[shard * shard_size + i]);
    }
  }
  part.weights = weights_from_sizes(part.assignments);
  return part;
}

Eigen::VectorXd solve_balance_qp(const Eigen::MatrixXd& label_fractions,
                                 const Eigen::VectorXd& label_counts) {
  const Eigen::MatrixXd& Q = label_fractions;
  const Eigen::VectorXd& d = label_counts;
  if (Q.rows() != d.size())
    throw std::invalid_argument("solve_balance_qp: row count != label count");
  if (d.minCoeff() < 0.0)
    throw std::invalid_argument("solve_balance_qp: negative label count");
  for (Eigen::Index k = 0; k < Q.cols(); ++k)
    if (std::abs(Q.col(k).sum() - 1.0) > 1e-6)
      throw std::invalid_argument("solve_balance_qp: column " + std::to_string(k) +
                                  " does not sum to 1");

  constexpr double kFloor = 1.0;  // one example per client
  constexpr int kMaxIters = 10000;
  const double rtol = std::max(1e-6 * d.lpNorm<Eigen::Infinity>(), 1e-12);

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Q);
  Eigen::VectorXd x = cod.solve(d);  // min-norm point of Qx = d

  double residual = 0.0;
  for (int iter = 0; iter < kMaxIters; ++iter) {
    Eigen::VectorXd clamped = x.cwiseMax(kFloor);
    residual = (Q * clamped - d).lpNorm<Eigen::Infinity>();
    if (residual <= rtol) return clamped;
    x = clamped - cod.solve(Q * clamped - d);
  }
  throw InfeasibleError(
      "solve_balance_qp: no strictly positive solution after " +
          std::to_string(kMaxIters) + " iterations (residual " +
          std::to_string(residual) + ")",
      residual);
}

namespace {

// Largest-remainder apportionment of `total` items across clients in
// proportion to `shares` (nonnegative, not all zero). Ties by lowest index.
std::vector<int> apportion(const Eigen::VectorXd& shares, int total) {
  const Eigen::Index n = shares.size();
  double sum = shares.sum();
  std::vector<int> counts(static_cast<std::size_t>(n), 0);
  std::vector<std::pair<double, int>> remainders;
  remainders.reserve(static_cast<std::size_t>(n));
  int assigned = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    double target = sum > 0.0 ? shares[k] / sum * total
                              : static_cast<double>(total) / static_cast<double>(n);
    int base = static_cast<int>(std::floor(target));
    counts[static_cast<std::size_t>(k)] = base;
    assigned += base;
    remainders.emplace_back(target - base, static_cast<int>(k));
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < total - assigned; ++i)
    counts[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)]++;
  return counts;
}

}  // namespace

Partition partition_dirichlet(const LabeledDataset& data, int num_clients,
                              double alpha, std::uint64_t seed) {
  data.validate();
  if (alpha <= 0.0) throw std::invalid_argument("partition_dirichlet: alpha must be positive");
  if (data.size() < num_clients)
    throw std::invalid_argument("partition_dirichlet: fewer examples than clients");

  const int L = data.num_classes;
  std::vector<std::vector<int>> pools(L);
  for (int i = 0; i < data.size(); ++i) pools[data.labels[i]].push_back(i);

  Eigen::VectorXd d(L);
  for (int c = 0; c < L; ++c) d[c] = static_cast<double>(pools[c].size());
  const Eigen::VectorXd prior = d / d.sum();

  std::mt19937_64 rng = make_rng(seed);
  Eigen::MatrixXd Q(L, num_clients);
  for (int k = 0; k < num_clients; ++k) {
    Eigen::VectorXd g(L);
    double s = 0.0;
    do {
      for (int c = 0; c < L; ++c) {
        std::gamma_distribution<double> gamma(alpha * prior[c], 1.0);
        g[c] = gamma(rng);
      }
      s = g.sum();
    } while (!(s > 1e-300));
    Q.col(k) = g / s;
  }

  Eigen::VectorXd x = solve_balance_qp(Q, d);

  // Per label, round the fractional targets q_k * x_k to integers so the
  // label's total matches its availability exactly.
  std::vector<std::vector<int>> counts(L);
  for (int c = 0; c < L; ++c) {
    Eigen::VectorXd targets = Q.row(c).transpose().cwiseProduct(x);
    counts[c] = apportion(targets, static_cast<int>(pools[c].size()));
  }

  // Rounding can leave a client empty; donate one example of the donor's
  // most plentiful label, which keeps per-label totals exact.
  std::vector<long long> sizes(num_clients, 0);
  for (int c = 0; c < L; ++c)
    for (int k = 0; k < num_clients; ++k) sizes[k] += counts[c][k];
  for (int k = 0; k < num_clients; ++k) {
    if (sizes[k] > 0) continue;
    int donor = -1, label = -1, best = 1;
    for (int c = 0; c < L; ++c)
      for (int j = 0; j < num_clients; ++j)
        if (sizes[j] > 1 && counts[c][j] > best) {
          best = counts[c][j];
          donor = j;
          label = c;
        }
    if (donor < 0)
      throw InfeasibleError("partition_dirichlet: cannot make every client nonempty", 0.0);
    counts[label][donor]--;
    counts[label][k]++;
    sizes[donor]--;
    sizes[k]++;
  }

  Partition part;
  part.assignments.resize(num_clients);
  for (int c = 0; c < L; ++c) {
    std::shuffle(pools[c].begin(), pools[c].end(), rng);
    std::size_t cursor = 0;
    for (int k = 0; k < num_clients; ++k) {
      for (int i = 0; i < counts[c][k]; ++i)
        part.assignments[k].push_back(pools[c][cursor++]);
    }
  }
  part.weights = weights_from_sizes(part.assignments);
  return part;
}

nlohmann::json partition_to_json(const Partition& part) {
  nlohmann::json doc;
  doc["clients"] = part.assignments;
  std::vector<double> w(part.weights.data(), part.weights.data() + part.weights.size());
  doc["weights"] = w;
  return doc;
}

Partition partition_from_json(const nlohmann::json& doc) {
  Partition part;
  part.assignments = doc.at("clients").get<std::vector<std::vector<int>>>();
  auto w = doc.at("weights").get<std::vector<double>>();
  part.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  return part;
}

}  // namespace fedgp
