#include "fedgp/selection.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fedgp/errors.hpp"

namespace fedgp {

namespace {

// Scores computed along different algebraic routes can disagree by a few ulps
// on symmetric instances; candidates within this relative band count as tied
// so the lowest-id rule resolves them identically everywhere.
constexpr double kTieTol = 1e-12;

bool strictly_less(double value, double best) {
  return value < best - kTieTol * (std::abs(value) + std::abs(best));
}

bool strictly_greater(double value, double best) {
  return value > best + kTieTol * (std::abs(value) + std::abs(best));
}

}  // namespace

std::vector<int> fedgp_select(const GpState& prior,
                              const Eigen::VectorXd& client_weights,
                              const SelectionContext& ctx, int count,
                              SelectionTrace* trace) {
  const int n = prior.num_clients();
  if (count < 1 || count > n)
    throw std::invalid_argument("fedgp_select: count out of range");
  if (client_weights.size() != n)
    throw std::invalid_argument("fedgp_select: weight length mismatch");
  if (static_cast<int>(ctx.times_selected.size()) != n)
    throw std::invalid_argument("fedgp_select: context size mismatch");

  GpState state = prior;
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  std::vector<int> picks;
  picks.reserve(static_cast<std::size_t>(count));

  for (int step = 0; step < count; ++step) {
    Eigen::VectorXd row =
        Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    int best = -1;
    double best_value = std::numeric_limits<double>::infinity();
    double best_estimate = 0.0;
    for (int k = 0; k < n; ++k) {
      if (taken[static_cast<std::size_t>(k)]) continue;
      const double var = state.cov(k, k);
      if (var <= kDegenerateVarianceTol) {
        std::cerr << "fedgp_select: skipping client " << k
                  << " with degenerate variance\n";
        continue;
      }
      const double estimate = state.mean[k] - ctx.alpha(k) * state.std[k];
      // posterior mean under the estimated observation; only the mean is
      // needed to score the candidate
      const Eigen::VectorXd post_mean =
          state.mean + state.cov.col(k) * ((estimate - state.mean[k]) / var);
      const double value = client_weights.dot(post_mean);
      row[k] = value;
      if (best < 0 || strictly_less(value, best_value)) {
        best_value = value;
        best = k;
        best_estimate = estimate;
      }
    }
    if (best < 0)
      throw SelectionError("fedgp_select: no candidate with usable variance at step " +
                           std::to_string(step));
    if (trace) trace->criteria.push_back(row);
    picks.push_back(best);
    taken[static_cast<std::size_t>(best)] = true;
    if (step + 1 < count) state = condition(state, best, best_estimate);
  }
  if (trace) trace->picks = picks;
  return picks;
}

namespace {

struct CorrelationView {
  Eigen::VectorXd sigma;
  Eigen::MatrixXd corr;
};

CorrelationView correlations(const Eigen::MatrixXd& cov) {
  CorrelationView v;
  v.sigma = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  const Eigen::Index n = cov.rows();
  v.corr.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double denom = v.sigma[i] * v.sigma[j];
      v.corr(i, j) = denom > 0.0 ? cov(i, j) / denom : 0.0;
    }
  return v;
}

}  // namespace

Eigen::VectorXd first_pick_scores(const Eigen::MatrixXd& cov,
                                  const Eigen::VectorXd& client_weights,
                                  std::span<const int> times_selected,
                                  double beta) {
  const auto v = correlations(cov);
  const Eigen::Index n = cov.rows();
  Eigen::VectorXd scores(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      s += client_weights[i] * v.sigma[i] * v.corr(i, k);
    scores[k] = std::pow(beta, times_selected[static_cast<std::size_t>(k)]) * s;
  }
  return scores;
}

std::pair<int, int> closed_form_pair(const Eigen::MatrixXd& cov,
                                     const Eigen::VectorXd& client_weights,
                                     std::span<const int> times_selected,
                                     double beta) {
  const Eigen::Index n = cov.rows();
  if (n < 2) throw std::invalid_argument("closed_form_pair: needs at least 2 clients");
  const auto v = correlations(cov);

  // raw first-pick sums, reused in the second-pick expression
  Eigen::VectorXd raw(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      s += client_weights[i] * v.sigma[i] * v.corr(i, k);
    raw[k] = s;
  }

  int k1 = -1;
  double best1 = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) {
    if (v.sigma[k] * v.sigma[k] <= kDegenerateVarianceTol) continue;
    const double score = std::pow(beta, times_selected[static_cast<std::size_t>(k)]) * raw[k];
    if (k1 < 0 || strictly_greater(score, best1)) {
      best1 = score;
      k1 = static_cast<int>(k);
    }
  }
  if (k1 < 0) throw DegenerateVarianceError("closed_form_pair: all variances degenerate");

  int k2 = -1;
  double best2 = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) {
    if (static_cast<int>(k) == k1) continue;
    if (v.sigma[k] * v.sigma[k] <= kDegenerateVarianceTol) continue;
    const double r = v.corr(k, k1);
    const double slack = 1.0 - r * r;
    if (slack <= kDegenerateVarianceTol) continue;
    const double score =
        std::pow(beta, times_selected[static_cast<std::size_t>(k)]) / std::sqrt(slack) *
        (raw[k] - r * raw[k1]);
    if (k2 < 0 || strictly_greater(score, best2)) {
      best2 = score;
      k2 = static_cast<int>(k);
    }
  }
  if (k2 < 0)
    throw DegenerateVarianceError(
        "closed_form_pair: every remaining client is perfectly correlated with the first pick");
  return {k1, k2};
}

std::vector<int> random_select(int num_clients, int count, std::mt19937_64& rng) {
  if (count < 0 || count > num_clients)
    throw std::invalid_argument("random_select: count out of range");
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, num_clients - 1);
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(pick(rng))]);
  }
  ids.resize(static_cast<std::size_t>(count));
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> afl_select(const Eigen::VectorXd& local_losses, int count,
                            const AflParams& params, std::mt19937_64& rng) {
  const int n = static_cast<int>(local_losses.size());
  if (count < 0 || count > n)
    throw std::invalid_argument("afl_select: count out of range");
  if (!local_losses.allFinite())
    throw std::invalid_argument("afl_select: non-finite losses");

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (local_losses[a] != local_losses[b]) return local_losses[a] < local_losses[b];
    return a < b;
  });

  const int masked = static_cast<int>(std::floor(params.mask_fraction * n + 1e-9));
  std::vector<int> eligible(order.begin() + masked, order.end());

  const int soft_target =
      static_cast<int>(std::ceil((1.0 - params.uniform_fraction) * count - 1e-9));
  const int soft_count = std::min(soft_target, static_cast<int>(eligible.size()));

  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::vector<int> picks;
  picks.reserve(static_cast<std::size_t>(count));

  // softmax stage: weight ∝ exp(scale * loss), renormalized against the
  // remaining maximum so huge scales cannot overflow
  std::vector<int> pool = eligible;
  for (int s = 0; s < soft_count; ++s) {
    double max_loss = -std::numeric_limits<double>::infinity();
    for (int k : pool) max_loss = std::max(max_loss, local_losses[k]);
    std::vector<double> cdf(pool.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      acc += std::exp(params.softmax_scale * (local_losses[pool[i]] - max_loss));
      cdf[i] = acc;
    }
    std::uniform_real_distribution<double> uni(0.0, acc);
    const double u = uni(rng);
    std::size_t idx = std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
    if (idx >= pool.size()) idx = pool.size() - 1;
    const int k = pool[idx];
    picks.push_back(k);
    chosen[static_cast<std::size_t>(k)] = true;
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(idx));
  }

  // uniform stage over everyone not yet selected
  std::vector<int> rest;
  for (int k = 0; k < n; ++k)
    if (!chosen[static_cast<std::size_t>(k)]) rest.push_back(k);
  while (static_cast<int>(picks.size()) < count) {
    std::uniform_int_distribution<std::size_t> pick(0, rest.size() - 1);
    const std::size_t idx = pick(rng);
    picks.push_back(rest[idx]);
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(idx));
  }
  std::sort(picks.begin(), picks.end());
  return picks;
}

std::vector<int> powd_select(const std::function<double(int)>& loss_of,
                             int num_clients, int count, int candidate_count,
                             std::mt19937_64& rng) {
  if (count > candidate_count || candidate_count > num_clients)
    throw std::invalid_argument(
        "powd_select: need count <= candidate_count <= num_clients");
  std::vector<int> candidates = random_select(num_clients, candidate_count, rng);
  std::vector<std::pair<double, int>> scored;
  scored.reserve(candidates.size());
  for (int k : candidates) scored.emplace_back(loss_of(k), k);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> picks;
  picks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) picks.push_back(scored[static_cast<std::size_t>(i)].second);
  std::sort(picks.begin(), picks.end());
  return picks;
}

}  // namespace fedgp
