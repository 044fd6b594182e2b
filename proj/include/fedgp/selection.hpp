#pragma once

#include <Eigen/Core>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "fedgp/gp.hpp"

namespace fedgp {

// Per-client annealing bookkeeping. The damping factor is always recomputed
// from the integer selection count, never accumulated incrementally.
struct SelectionContext {
  std::vector<int> times_selected;
  double beta = 0.95;
  double scale = 1.0;

  explicit SelectionContext(int num_clients = 0, double beta_ = 0.95,
                            double scale_ = 1.0)
      : times_selected(num_clients, 0), beta(beta_), scale(scale_) {}

  double alpha(int k) const {
    return scale * std::pow(beta, times_selected[static_cast<std::size_t>(k)]);
  }
  void reset() { std::fill(times_selected.begin(), times_selected.end(), 0); }
  void record_selection(std::span<const int> picked) {
    for (int k : picked) times_selected[static_cast<std::size_t>(k)]++;
  }
};

// Per-iteration objective value of every candidate (NaN where unavailable),
// exported for debugging and the closed-form cross-checks.
struct SelectionTrace {
  std::vector<Eigen::VectorXd> criteria;
  std::vector<int> picks;
};

// Greedy correlation-aware selection: per iteration, estimate each remaining
// candidate's loss change as mean - alpha * std, score it by the client-weighted
// posterior mean conditioned on that estimate, pick the arg-min (ties toward
// the lowest id), then condition the state on the pick and repeat. Returns
// clients in pick order.
std::vector<int> fedgp_select(const GpState& prior,
                              const Eigen::VectorXd& client_weights,
                              const SelectionContext& ctx, int count,
                              SelectionTrace* trace = nullptr);

// First-pick score of every client under the closed-form reduction of the
// greedy criterion: beta^tau_k * sum_i p_i * sigma_i * r_ik.
Eigen::VectorXd first_pick_scores(const Eigen::MatrixXd& cov,
                                  const Eigen::VectorXd& client_weights,
                                  std::span<const int> times_selected,
                                  double beta);

// Closed-form first and second picks of the greedy selection, derived by
// substituting the one-step posterior into the first-pick score. Serves as an
// independent oracle for fedgp_select with count = 2.
std::pair<int, int> closed_form_pair(const Eigen::MatrixXd& cov,
                                     const Eigen::VectorXd& client_weights,
                                     std::span<const int> times_selected,
                                     double beta);

// Uniform subset without replacement; every subset equiprobable. Ascending.
std::vector<int> random_select(int num_clients, int count, std::mt19937_64& rng);

struct AflParams {
  double mask_fraction = 0.75;    // lowest-loss clients excluded from the softmax
  double softmax_scale = 0.01;    // weight ∝ exp(scale * loss)
  double uniform_fraction = 0.1;  // share of picks drawn uniformly
};

// Loss-valuation-weighted sampling with masking and a uniform exploration
// mixture. Returns ascending ids.
std::vector<int> afl_select(const Eigen::VectorXd& local_losses, int count,
                            const AflParams& params, std::mt19937_64& rng);

// Power-of-choice: draw candidate_count candidates uniformly, evaluate losses
// only for them, keep the `count` largest (ties toward the lowest id).
std::vector<int> powd_select(const std::function<double(int)>& loss_of,
                             int num_clients, int count, int candidate_count,
                             std::mt19937_64& rng);

}  // namespace fedgp
