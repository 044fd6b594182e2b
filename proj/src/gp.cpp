#include "fedgp/gp.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "fedgp/errors.hpp"
#include "fedgp/rng.hpp"

namespace fedgp {

Eigen::MatrixXd covariance_from_embeddings(const EmbeddingMatrix& embeddings,
                                           double jitter) {
  if (jitter <= 0.0) throw std::invalid_argument("covariance: jitter must be positive");
  const Eigen::Index n = embeddings.cols();
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    cov(i, i) = embeddings.col(i).squaredNorm() + jitter;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = embeddings.col(i).dot(embeddings.col(j));
      cov(i, j) = v;
      cov(j, i) = v;
    }
  }
  return cov;
}

GpState make_prior(const EmbeddingMatrix& embeddings, double jitter) {
  GpState state;
  state.cov = covariance_from_embeddings(embeddings, jitter);
  state.mean = Eigen::VectorXd::Zero(state.cov.rows());
  state.std = state.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return state;
}

namespace {

Eigen::LLT<Eigen::MatrixXd> factor_kernel(const EmbeddingMatrix& embeddings,
                                          double jitter) {
  Eigen::LLT<Eigen::MatrixXd> llt(covariance_from_embeddings(embeddings, jitter));
  if (llt.info() != Eigen::Success)
    throw NumericError("gp: Cholesky factorization of the kernel failed");
  return llt;
}

void check_samples(const EmbeddingMatrix& embeddings,
                   const std::vector<WeightedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("gp: no samples");
  for (const auto& s : samples)
    if (s.delta_losses.size() != embeddings.cols())
      throw std::invalid_argument("gp: sample length != client count");
}

}  // namespace

double log_likelihood(const EmbeddingMatrix& embeddings, double jitter,
                      const std::vector<WeightedSample>& samples) {
  check_samples(embeddings, samples);
  const auto llt = factor_kernel(embeddings, jitter);
  const double logdet =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double n = static_cast<double>(embeddings.cols());
  const double norm_const = n * std::log(2.0 * std::numbers::pi);

  double total = 0.0;
  for (const auto& s : samples) {
    const Eigen::VectorXd alpha = llt.solve(s.delta_losses);
    total += s.weight * (-0.5 * (s.delta_losses.dot(alpha) + logdet + norm_const));
  }
  return total;
}

Eigen::MatrixXd log_likelihood_grad(const EmbeddingMatrix& embeddings,
                                    double jitter,
                                    const std::vector<WeightedSample>& samples) {
  check_samples(embeddings, samples);
  const auto llt = factor_kernel(embeddings, jitter);
  const Eigen::Index n = embeddings.cols();
  const Eigen::MatrixXd cov_inv =
      llt.solve(Eigen::MatrixXd::Identity(n, n));

  // d/dSigma of each log-density is (alpha alpha^T - Sigma^-1)/2, and
  // dSigma/dX contributes X * (G + G^T) for symmetric G.
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  double total_weight = 0.0;
  for (const auto& s : samples) {
    const Eigen::VectorXd alpha = llt.solve(s.delta_losses);
    g.noalias() += s.weight * (alpha * alpha.transpose());
    total_weight += s.weight;
  }
  g -= total_weight * cov_inv;
  return embeddings * g;
}

EmbeddingMatrix init_embeddings(int embed_dim, int num_clients,
                                std::uint64_t seed) {
  if (embed_dim < 1 || num_clients < 1)
    throw std::invalid_argument("init_embeddings: sizes must be positive");
  std::mt19937_64 rng = make_rng(seed);
  std::normal_distribution<double> small(0.0, 0.1);
  EmbeddingMatrix x(embed_dim, num_clients);
  for (Eigen::Index k = 0; k < x.cols(); ++k)
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, k) = small(rng);
  return x;
}

EmbeddingMatrix train_embeddings(EmbeddingMatrix init, double jitter,
                                 const std::vector<WeightedSample>& samples,
                                 int steps, double lr) {
  if (steps < 1) throw std::invalid_argument("train_embeddings: steps must be >= 1");
  check_samples(init, samples);

  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;

  EmbeddingMatrix x = std::move(init);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(x.rows(), x.cols());

  for (int step = 1; step <= steps; ++step) {
    const Eigen::MatrixXd grad = -log_likelihood_grad(x, jitter, samples);
    if (!grad.allFinite())
      throw NumericError("train_embeddings: non-finite gradient at step " +
                         std::to_string(step));
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    x.array() -= lr * (m.array() / bc1) /
                 ((v.array() / bc2).sqrt() + eps);
  }
  if (!x.allFinite())
    throw NumericError("train_embeddings: non-finite embeddings after training");
  return x;
}

GpState condition(const GpState& state, int client, double observed) {
  const Eigen::Index n = state.mean.size();
  if (client < 0 || client >= n)
    throw std::invalid_argument("condition: client id out of range");
  const double var = state.cov(client, client);
  if (var <= kDegenerateVarianceTol)
    throw DegenerateVarianceError("condition: client " + std::to_string(client) +
                                  " has degenerate variance");

  GpState post;
  const Eigen::VectorXd col = state.cov.col(client);
  post.mean = state.mean + col * ((observed - state.mean[client]) / var);
  post.cov = state.cov - (col * col.transpose()) / var;
  // the observed coordinate's limit is exact: pin it instead of keeping the
  // last-ulp rounding residue of a - a*a/a
  post.mean[client] = observed;
  post.cov.row(client).setZero();
  post.cov.col(client).setZero();
  post.std = post.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return post;
}

double weighted_posterior_objective(const GpState& state,
                                    const Eigen::VectorXd& client_weights) {
  if (client_weights.size() != state.mean.size())
    throw std::invalid_argument("weighted_posterior_objective: weight length mismatch");
  return client_weights.dot(state.mean);
}

}  // namespace fedgp
