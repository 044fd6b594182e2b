#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace fedgp {

// Client embeddings live in the columns of a dim x num_clients matrix; inner
// products of columns define the loss-change covariance (homogeneous linear
// kernel plus a diagonal noise term).
using EmbeddingMatrix = Eigen::MatrixXd;

// Multivariate-normal belief over per-client loss changes.
struct GpState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::VectorXd std;  // sqrt of the covariance diagonal, cached

  int num_clients() const { return static_cast<int>(mean.size()); }
};

// Below this, a client's variance is treated as degenerate.
inline constexpr double kDegenerateVarianceTol = 1e-12;

// X^T X + jitter * I, exactly symmetric (one triangle computed, mirrored).
Eigen::MatrixXd covariance_from_embeddings(const EmbeddingMatrix& embeddings,
                                           double jitter);

// Zero-mean prior with the kernel covariance.
GpState make_prior(const EmbeddingMatrix& embeddings, double jitter);

struct WeightedSample {
  Eigen::VectorXd delta_losses;
  double weight = 1.0;
};

// Weighted sum of zero-mean Gaussian log-densities of the samples under the
// kernel covariance, via one Cholesky factorization (no explicit inverse).
double log_likelihood(const EmbeddingMatrix& embeddings, double jitter,
                      const std::vector<WeightedSample>& samples);

// Analytic gradient of log_likelihood with respect to the embeddings.
Eigen::MatrixXd log_likelihood_grad(const EmbeddingMatrix& embeddings,
                                    double jitter,
                                    const std::vector<WeightedSample>& samples);

// Fresh embeddings with i.i.d. N(0, 0.1^2) entries.
EmbeddingMatrix init_embeddings(int embed_dim, int num_clients,
                                std::uint64_t seed);

// Runs `steps` full-gradient Adam updates (beta1 0.9, beta2 0.999, eps 1e-8)
// on the negative log-likelihood, warm-starting from `init`. Deterministic.
EmbeddingMatrix train_embeddings(EmbeddingMatrix init, double jitter,
                                 const std::vector<WeightedSample>& samples,
                                 int steps, double lr);

// Gaussian conditioning on one observed coordinate: rank-one mean shift and
// covariance downdate. The observed client's posterior mean equals the
// observation and its variance collapses to zero (up to rounding).
GpState condition(const GpState& state, int client, double observed);

// Client-weighted sum of the (possibly conditioned) mean.
double weighted_posterior_objective(const GpState& state,
                                    const Eigen::VectorXd& client_weights);

}  // namespace fedgp
