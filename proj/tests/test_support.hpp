#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <functional>
#include <random>

namespace test_support {

// Random symmetric positive-definite matrix A A^T / n + ridge I.
inline Eigen::MatrixXd random_pd(int n, std::mt19937_64& rng, double ridge = 0.05) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = gauss(rng);
  Eigen::MatrixXd m = a * a.transpose() / n;
  m.diagonal().array() += ridge;
  return m;
}

inline Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

// Positive weights summing to one.
inline Eigen::VectorXd random_weights(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.1, 1.0);
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = uni(rng);
  return w / w.sum();
}

// Draw from N(mean, cov) via Cholesky.
inline Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& cov,
                                  std::mt19937_64& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(rng);
  return mean + llt.matrixL() * z;
}

// Central finite difference of a scalar function of a flat vector.
inline double central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, Eigen::Index coord,
                                 double step) {
  Eigen::VectorXd hi = x, lo = x;
  hi[coord] += step;
  lo[coord] -= step;
  return (f(hi) - f(lo)) / (2.0 * step);
}

}  // namespace test_support
