#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "fedgp/dataset.hpp"

namespace fedgp {

// Assignment of example indices to clients plus size-proportional weights.
struct Partition {
  std::vector<std::vector<int>> assignments;
  Eigen::VectorXd weights;

  int num_clients() const { return static_cast<int>(assignments.size()); }

  // Disjointness, index validity, weight law p_k = |D_k| / total.
  void validate(const LabeledDataset& data) const;
};

// Label-sorted shard partition: the dataset is sorted by label, cut into
// num_clients * shards_per_client equal contiguous shards, and shards are
// dealt to clients via one seeded permutation. shards_per_client = 1 gives
// single-label clients, 2 gives at most two labels per client.
Partition partition_shards(const LabeledDataset& data, int num_clients,
                           int shards_per_client, std::uint64_t seed);

// Heterogeneous unbalanced partition: per-client label fractions drawn from
// Dirichlet(alpha * global prior), client sizes from the balance QP, then
// largest-remainder rounding so per-label totals match the dataset exactly.
Partition partition_dirichlet(const LabeledDataset& data, int num_clients,
                              double alpha, std::uint64_t seed);

// Minimizes ||x||_2 subject to label_fractions * x = label_counts and
// x >= 1, by alternating the closed-form projection onto the equality
// constraint with clamping. Throws InfeasibleError when no strictly positive
// solution is reached within the iteration budget.
Eigen::VectorXd solve_balance_qp(const Eigen::MatrixXd& label_fractions,
                                 const Eigen::VectorXd& label_counts);

nlohmann::json partition_to_json(const Partition& part);
Partition partition_from_json(const nlohmann::json& doc);

}  // namespace fedgp
