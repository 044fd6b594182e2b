#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "fedgp/dataset.hpp"
#include "fedgp/partition.hpp"

namespace fedgp {

struct PcaResult {
  Eigen::MatrixXd projections;         // samples x count
  Eigen::VectorXd explained_variance;  // non-increasing
  Eigen::MatrixXd components;          // dim x count, unit columns
};

// Centers the samples (one per row) and returns the top principal components
// of the unbiased sample covariance. Component signs are fixed so the entry
// of largest magnitude is positive.
PcaResult pca_components(const Eigen::MatrixXd& samples, int count);

struct ComponentStats {
  double mean = 0.0;
  double stddev = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  std::vector<double> bin_edges;
  std::vector<long> bin_counts;
};

struct NormalityReport {
  std::vector<ComponentStats> components;  // descending explained variance
  bool pass = false;
};

inline constexpr double kSkewnessThreshold = 0.5;
inline constexpr double kExcessKurtosisThreshold = 1.0;

// Projects onto the top three principal components and checks each
// projection's skewness and excess kurtosis against the thresholds above.
// Zero-variance components count as passing with both moments zero.
NormalityReport normality_test(const Eigen::MatrixXd& samples);

// tr(A^T B) / sqrt(tr(A^T A) tr(B^T B)); in [0,1] for PSD inputs.
double covariance_similarity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Unbiased covariance of the samples; with a single sample falls back to the
// uncentered second moment so downstream similarity stays defined.
Eigen::MatrixXd empirical_covariance(const std::vector<Eigen::VectorXd>& samples);

struct StationarityPoint {
  int round = 0;
  double similarity = 0.0;
  bool low_confidence = false;
};

// Similarity between consecutive probe covariances. Two exactly-zero
// estimates describe identical (degenerate) distributions and score 1.
double probe_similarity(const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur);

// Columns scaled to unit length; zero columns stay zero (with a warning).
Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& m);

// Normalizes client embedding columns, projects them to 2-D via PCA and
// writes one CSV row per client: client_id, dominant_label, u, v.
void export_projected_embeddings(const Eigen::MatrixXd& embeddings,
                                 const std::vector<int>& dominant_labels,
                                 std::ostream& out);

// Raw embedding export: one row per client, columns client_id, x_1..x_d.
void write_embeddings_csv(std::ostream& out, const Eigen::MatrixXd& embeddings);
Eigen::MatrixXd read_embeddings_csv(std::istream& in);

struct CohesionStats {
  double intra = 0.0;  // mean cosine similarity within a label
  double inter = 0.0;  // mean cosine similarity across labels
};

CohesionStats embedding_label_cohesion(const Eigen::MatrixXd& embeddings,
                                       const std::vector<int>& dominant_labels);

// Most frequent label on each client (ties toward the lowest label).
std::vector<int> dominant_labels(const LabeledDataset& data, const Partition& part);

nlohmann::json normality_to_json(const NormalityReport& report);
nlohmann::json stationarity_to_json(const std::vector<StationarityPoint>& series);

}  // namespace fedgp
