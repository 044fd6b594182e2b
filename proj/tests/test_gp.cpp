#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "fedgp/diagnostics.hpp"
#include "fedgp/errors.hpp"
#include "fedgp/gp.hpp"
#include "test_support.hpp"

using namespace fedgp;

namespace {

// Textbook block conditioning: observe coordinates `obs` at `values`, return
// the full-state convention (observed means pinned, observed rows/cols zero).
GpState block_condition_oracle(const GpState& state, const std::vector<int>& obs,
                               const Eigen::VectorXd& values) {
  const Eigen::Index n = state.mean.size();
  std::vector<int> rest;
  for (int i = 0; i < n; ++i)
    if (std::find(obs.begin(), obs.end(), i) == obs.end()) rest.push_back(i);

  const auto na = static_cast<Eigen::Index>(obs.size());
  const auto nb = static_cast<Eigen::Index>(rest.size());
  Eigen::MatrixXd caa(na, na), cba(nb, na), cbb(nb, nb);
  Eigen::VectorXd ma(na), mb(nb);
  for (Eigen::Index i = 0; i < na; ++i) {
    ma[i] = state.mean[obs[i]];
    for (Eigen::Index j = 0; j < na; ++j) caa(i, j) = state.cov(obs[i], obs[j]);
  }
  for (Eigen::Index i = 0; i < nb; ++i) {
    mb[i] = state.mean[rest[i]];
    for (Eigen::Index j = 0; j < na; ++j) cba(i, j) = state.cov(rest[i], obs[j]);
    for (Eigen::Index j = 0; j < nb; ++j) cbb(i, j) = state.cov(rest[i], rest[j]);
  }

  const Eigen::MatrixXd gain = cba * caa.inverse();
  const Eigen::VectorXd mb_post = mb + gain * (values - ma);
  const Eigen::MatrixXd cbb_post = cbb - gain * cba.transpose();

  GpState out;
  out.mean = Eigen::VectorXd::Zero(n);
  out.cov = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < na; ++i) out.mean[obs[i]] = values[i];
  for (Eigen::Index i = 0; i < nb; ++i) {
    out.mean[rest[i]] = mb_post[i];
    for (Eigen::Index j = 0; j < nb; ++j) out.cov(rest[i], rest[j]) = cbb_post(i, j);
  }
  out.std = out.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

double direct_gaussian_log_density(const Eigen::VectorXd& y,
                                   const Eigen::MatrixXd& cov) {
  const Eigen::Index n = y.size();
  return -0.5 * (y.dot(cov.inverse() * y) + std::log(cov.determinant()) +
                 n * std::log(2.0 * std::numbers::pi));
}

}  // namespace

TEST_CASE("covariance of zero embeddings is the jitter diagonal") {
  EmbeddingMatrix x = EmbeddingMatrix::Zero(3, 4);
  Eigen::MatrixXd cov = covariance_from_embeddings(x, 0.5);
  CHECK(cov == Eigen::MatrixXd(0.5 * Eigen::MatrixXd::Identity(4, 4)));
}

TEST_CASE("covariance hand instance") {
  EmbeddingMatrix x(1, 2);
  x << 1.0, 2.0;
  Eigen::MatrixXd cov = covariance_from_embeddings(x, 0.01);
  CHECK(cov(0, 0) == doctest::Approx(1.01).epsilon(1e-15));
  CHECK(cov(0, 1) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(cov(1, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(cov(1, 1) == doctest::Approx(4.01).epsilon(1e-15));
}

TEST_CASE("covariance is exactly symmetric and positive definite") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingMatrix x(4, 7);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
    Eigen::MatrixXd cov = covariance_from_embeddings(x, 1e-4);
    for (Eigen::Index i = 0; i < 7; ++i)
      for (Eigen::Index j = 0; j < 7; ++j) CHECK(cov(i, j) == cov(j, i));
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    CHECK(llt.info() == Eigen::Success);
  }
}

TEST_CASE("log likelihood of the standard normal at zero") {
  EmbeddingMatrix x = EmbeddingMatrix::Zero(1, 1);
  std::vector<WeightedSample> samples{{Eigen::VectorXd::Zero(1), 1.0}};
  CHECK(log_likelihood(x, 1.0, samples) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("log likelihood matches the dense-inverse oracle") {
  std::mt19937_64 rng(17);
  for (int n : {2, 3, 5}) {
    EmbeddingMatrix x(2, n);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
    const double jitter = 0.3;
    std::vector<WeightedSample> samples;
    for (int s = 0; s < 4; ++s)
      samples.push_back({test_support::random_vector(n, rng), 0.25 + 0.5 * s});

    const Eigen::MatrixXd cov = covariance_from_embeddings(x, jitter);
    double expect = 0.0;
    for (const auto& s : samples)
      expect += s.weight * direct_gaussian_log_density(s.delta_losses, cov);
    CHECK(log_likelihood(x, jitter, samples) == doctest::Approx(expect).epsilon(1e-8));
  }
}

TEST_CASE("log likelihood is linear in the sample weights") {
  std::mt19937_64 rng(5);
  EmbeddingMatrix x(2, 3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
  std::vector<WeightedSample> samples;
  for (int s = 0; s < 3; ++s)
    samples.push_back({test_support::random_vector(3, rng), 0.5 + 0.25 * s});
  const double base = log_likelihood(x, 0.1, samples);
  for (auto& s : samples) s.weight *= 2.0;
  CHECK(log_likelihood(x, 0.1, samples) == doctest::Approx(2.0 * base).epsilon(1e-12));
}

TEST_CASE("likelihood gradient matches central finite differences") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3, d = 2;
    EmbeddingMatrix x(d, n);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
    std::vector<WeightedSample> samples;
    for (int s = 0; s < 5; ++s)
      samples.push_back({test_support::random_vector(n, rng), 0.4 + 0.2 * s});

    const Eigen::MatrixXd grad = log_likelihood_grad(x, 1e-2, samples);
    auto f = [&](const Eigen::VectorXd& flat) {
      EmbeddingMatrix m = Eigen::Map<const EmbeddingMatrix>(flat.data(), d, n);
      return log_likelihood(m, 1e-2, samples);
    };
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    double max_err = 0.0;
    for (Eigen::Index c = 0; c < flat.size(); ++c) {
      const double fd = test_support::central_difference(f, flat, c, 1e-5);
      max_err = std::max(max_err, std::abs(fd - grad.data()[c]));
    }
    CHECK(max_err <= 1e-4);
  }
}

TEST_CASE("train_embeddings rejects zero steps") {
  EmbeddingMatrix x = EmbeddingMatrix::Zero(2, 3);
  std::vector<WeightedSample> samples{{Eigen::VectorXd::Zero(3), 1.0}};
  CHECK_THROWS_AS(train_embeddings(x, 1e-3, samples, 0, 0.01), std::invalid_argument);
}

TEST_CASE("train_embeddings recovers a planted covariance") {
  std::mt19937_64 rng(41);
  const int n = 6, d = 2;
  std::normal_distribution<double> gauss(0.0, 1.0);
  EmbeddingMatrix planted(d, n);
  for (Eigen::Index i = 0; i < planted.size(); ++i) planted.data()[i] = gauss(rng);
  const double jitter = 1e-3;
  const Eigen::MatrixXd true_cov = covariance_from_embeddings(planted, jitter);

  std::vector<WeightedSample> samples;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < 100; ++s)
    samples.push_back({test_support::mvn_sample(zero, true_cov, rng), 1.0});

  EmbeddingMatrix start = init_embeddings(d, n, 7);
  const double before = -log_likelihood(start, jitter, samples);
  EmbeddingMatrix learned = train_embeddings(start, jitter, samples, 500, 0.01);
  const double after = -log_likelihood(learned, jitter, samples);
  CHECK(after <= before);

  const Eigen::MatrixXd learned_cov = covariance_from_embeddings(learned, jitter);
  CHECK(covariance_similarity(learned_cov, true_cov) >= 0.9);
}

TEST_CASE("conditioning an independent prior") {
  GpState state;
  state.mean = Eigen::VectorXd::Zero(4);
  state.cov = Eigen::MatrixXd::Identity(4, 4);
  state.std = Eigen::VectorXd::Ones(4);
  GpState post = condition(state, 0, -0.5);
  CHECK(post.mean[0] == doctest::Approx(-0.5).epsilon(1e-12));
  for (int i = 1; i < 4; ++i) CHECK(post.mean[i] == 0.0);
  CHECK(post.cov(0, 0) == doctest::Approx(0.0));
  for (int i = 1; i < 4; ++i) CHECK(post.cov(i, i) == doctest::Approx(1.0));
}

TEST_CASE("zero innovation leaves the mean but shrinks the covariance") {
  std::mt19937_64 rng(11);
  GpState state;
  state.cov = test_support::random_pd(5, rng);
  state.mean = test_support::random_vector(5, rng);
  state.std = state.cov.diagonal().cwiseSqrt();
  GpState post = condition(state, 2, state.mean[2]);
  CHECK((post.mean - state.mean).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(post.cov(2, 2) < 1e-12);
  for (int i = 0; i < 5; ++i) CHECK(post.cov(i, i) <= state.cov(i, i) + 1e-12);
}

TEST_CASE("conditioning matches the block oracle") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    GpState state;
    state.cov = test_support::random_pd(3, rng);
    state.mean = test_support::random_vector(3, rng);
    state.std = state.cov.diagonal().cwiseSqrt();
    const double observed = -0.3 + 0.1 * trial;

    GpState post = condition(state, 1, observed);
    GpState oracle = block_condition_oracle(state, {1}, Eigen::VectorXd::Constant(1, observed));
    CHECK((post.mean - oracle.mean).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((post.cov - oracle.cov).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("posterior identities in correlation form") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 5;
    GpState state;
    state.cov = test_support::random_pd(n, rng);
    state.mean = Eigen::VectorXd::Zero(n);
    state.std = state.cov.diagonal().cwiseSqrt();
    const int k = trial % n;
    GpState post = condition(state, k, -0.2);
    CHECK(post.std[k] == 0.0);
    for (int i = 0; i < n; ++i) {
      const double rik = state.cov(i, k) / (state.std[i] * state.std[k]);
      if (i != k)
        CHECK(post.std[i] ==
              doctest::Approx(state.std[i] * std::sqrt(std::max(0.0, 1.0 - rik * rik)))
                  .epsilon(1e-9));
      for (int j = 0; j < n; ++j) {
        const double rij = state.cov(i, j) / (state.std[i] * state.std[j]);
        const double rkj = state.cov(k, j) / (state.std[k] * state.std[j]);
        CHECK(post.cov(i, j) ==
              doctest::Approx(state.std[i] * state.std[j] * (rij - rik * rkj))
                  .epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("sequential conditioning equals joint block conditioning") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 25; ++trial) {
    GpState state;
    state.cov = test_support::random_pd(5, rng);
    state.mean = test_support::random_vector(5, rng);
    state.std = state.cov.diagonal().cwiseSqrt();

    const double va = 0.4, vb = -0.7;
    GpState seq = condition(condition(state, 1, va), 3, vb);
    Eigen::VectorXd vals(2);
    vals << va, vb;
    GpState joint = block_condition_oracle(state, {1, 3}, vals);
    CHECK((seq.mean - joint.mean).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((seq.cov - joint.cov).lpNorm<Eigen::Infinity>() < 1e-9);
  }
}

TEST_CASE("conditioning a degenerate coordinate fails") {
  GpState state;
  state.mean = Eigen::VectorXd::Zero(2);
  state.cov = Eigen::MatrixXd::Zero(2, 2);
  state.cov(1, 1) = 1.0;
  state.std = state.cov.diagonal().cwiseSqrt();
  CHECK_THROWS_AS(condition(state, 0, 1.0), DegenerateVarianceError);
}

TEST_CASE("weighted posterior objective") {
  GpState state;
  state.mean = Eigen::VectorXd::Zero(3);
  state.cov = Eigen::MatrixXd::Identity(3, 3);
  state.std = Eigen::VectorXd::Ones(3);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  CHECK(weighted_posterior_objective(state, p) == 0.0);

  state.mean << 1.0, 2.0, 3.0;
  CHECK(weighted_posterior_objective(state, p) == doctest::Approx(2.0).epsilon(1e-15));
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(3);
  e1[1] = 1.0;
  CHECK(weighted_posterior_objective(state, e1) == 2.0);
}
