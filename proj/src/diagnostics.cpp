#include "fedgp/diagnostics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <ostream>
#include <stdexcept>

#include "fedgp/io.hpp"

namespace fedgp {

PcaResult pca_components(const Eigen::MatrixXd& samples, int count) {
  const Eigen::Index s = samples.rows();
  const Eigen::Index n = samples.cols();
  if (count < 1 || count > std::min<Eigen::Index>(s, n))
    throw std::invalid_argument("pca_components: count out of range");

  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Eigen::MatrixXd centered = samples.rowwise() - mean;
  const double denom = s > 1 ? static_cast<double>(s - 1) : 1.0;
  const Eigen::MatrixXd cov = centered.transpose() * centered / denom;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("pca_components: eigendecomposition failed");

  PcaResult out;
  out.components.resize(n, count);
  out.explained_variance.resize(count);
  for (int j = 0; j < count; ++j) {
    const Eigen::Index src = n - 1 - j;  // solver sorts ascending
    Eigen::VectorXd v = eig.eigenvectors().col(src);
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0.0) v = -v;
    out.components.col(j) = v;
    out.explained_variance[j] = std::max(eig.eigenvalues()[src], 0.0);
  }
  out.projections = centered * out.components;
  return out;
}

namespace {

ComponentStats component_stats(const Eigen::VectorXd& x) {
  const auto s = static_cast<double>(x.size());
  ComponentStats st;
  st.mean = x.mean();
  const Eigen::ArrayXd d = x.array() - st.mean;
  const double m2 = d.square().mean();
  st.stddev = std::sqrt(m2);
  if (m2 > 0.0) {
    st.skewness = d.cube().mean() / std::pow(m2, 1.5);
    st.excess_kurtosis = d.square().square().mean() / (m2 * m2) - 3.0;
  }

  const int bins = static_cast<int>(std::ceil(std::sqrt(s)));
  double lo = x.minCoeff(), hi = x.maxCoeff();
  if (hi <= lo) hi = lo + 1.0;
  st.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  st.bin_counts.assign(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i <= bins; ++i)
    st.bin_edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    int bin = static_cast<int>((x[i] - lo) / (hi - lo) * bins);
    bin = std::clamp(bin, 0, bins - 1);
    st.bin_counts[static_cast<std::size_t>(bin)]++;
  }
  return st;
}

}  // namespace

NormalityReport normality_test(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 100)
    throw std::invalid_argument("normality_test: needs at least 100 samples");
  const int k = static_cast<int>(std::min<Eigen::Index>(3, samples.cols()));
  PcaResult pca = pca_components(samples, k);

  NormalityReport report;
  report.pass = true;
  for (int j = 0; j < k; ++j) {
    ComponentStats st = component_stats(pca.projections.col(j));
    if (std::abs(st.skewness) > kSkewnessThreshold ||
        std::abs(st.excess_kurtosis) > kExcessKurtosisThreshold)
      report.pass = false;
    report.components.push_back(std::move(st));
  }
  return report;
}

double covariance_similarity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("covariance_similarity: shape mismatch");
  const double na = a.squaredNorm();
  const double nb = b.squaredNorm();
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("covariance_similarity: zero matrix");
  return a.cwiseProduct(b).sum() / std::sqrt(na * nb);
}

Eigen::MatrixXd empirical_covariance(const std::vector<Eigen::VectorXd>& samples) {
  if (samples.empty())
    throw std::invalid_argument("empirical_covariance: no samples");
  const Eigen::Index n = samples.front().size();
  if (samples.size() == 1)
    return samples.front() * samples.front().transpose();

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  for (const auto& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  for (const auto& s : samples) {
    const Eigen::VectorXd d = s - mean;
    cov.noalias() += d * d.transpose();
  }
  return cov / static_cast<double>(samples.size() - 1);
}

double probe_similarity(const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur) {
  const bool prev_zero = prev.squaredNorm() == 0.0;
  const bool cur_zero = cur.squaredNorm() == 0.0;
  if (prev_zero && cur_zero) return 1.0;
  if (prev_zero || cur_zero) return 0.0;
  return covariance_similarity(prev, cur);
}

Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index k = 0; k < out.cols(); ++k) {
    const double norm = out.col(k).norm();
    if (norm > 0.0)
      out.col(k) /= norm;
    else
      std::cerr << "normalize_columns: column " << k << " has zero norm\n";
  }
  return out;
}

void export_projected_embeddings(const Eigen::MatrixXd& embeddings,
                                 const std::vector<int>& dominant_labels,
                                 std::ostream& out) {
  if (static_cast<Eigen::Index>(dominant_labels.size()) != embeddings.cols())
    throw std::invalid_argument("export_projected_embeddings: label count mismatch");
  const Eigen::MatrixXd normalized = normalize_columns(embeddings);
  // clients are the samples here, so project the transpose
  const int k = static_cast<int>(std::min<Eigen::Index>(2, normalized.rows()));
  PcaResult pca = pca_components(normalized.transpose(), k);

  out << "client_id,dominant_label,u,v\n";
  for (Eigen::Index c = 0; c < normalized.cols(); ++c) {
    const double u = pca.projections(c, 0);
    const double v = k > 1 ? pca.projections(c, 1) : 0.0;
    out << c << "," << dominant_labels[static_cast<std::size_t>(c)] << ","
        << fmt_double(u) << "," << fmt_double(v) << "\n";
  }
}

void write_embeddings_csv(std::ostream& out, const Eigen::MatrixXd& embeddings) {
  out << "client_id";
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) out << ",x_" << (i + 1);
  out << "\n";
  for (Eigen::Index k = 0; k < embeddings.cols(); ++k) {
    out << k;
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i)
      out << "," << fmt_double(embeddings(i, k));
    out << "\n";
  }
}

Eigen::MatrixXd read_embeddings_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("embeddings csv: missing header");
  const auto header = split(line, ',');
  const auto dim = static_cast<Eigen::Index>(header.size()) - 1;
  std::vector<Eigen::VectorXd> cols;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (static_cast<Eigen::Index>(cells.size()) != dim + 1)
      throw std::invalid_argument("embeddings csv: malformed row '" + line + "'");
    Eigen::VectorXd col(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      col[i] = std::stod(cells[static_cast<std::size_t>(i + 1)]);
    cols.push_back(std::move(col));
  }
  Eigen::MatrixXd out(dim, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k)
    out.col(static_cast<Eigen::Index>(k)) = cols[k];
  return out;
}

CohesionStats embedding_label_cohesion(const Eigen::MatrixXd& embeddings,
                                       const std::vector<int>& dominant_labels) {
  if (static_cast<Eigen::Index>(dominant_labels.size()) != embeddings.cols())
    throw std::invalid_argument("embedding_label_cohesion: label count mismatch");
  const Eigen::MatrixXd x = normalize_columns(embeddings);
  double intra = 0.0, inter = 0.0;
  long n_intra = 0, n_inter = 0;
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    for (Eigen::Index j = i + 1; j < x.cols(); ++j) {
      const double cos = x.col(i).dot(x.col(j));
      if (dominant_labels[static_cast<std::size_t>(i)] ==
          dominant_labels[static_cast<std::size_t>(j)]) {
        intra += cos;
        ++n_intra;
      } else {
        inter += cos;
        ++n_inter;
      }
    }
  CohesionStats st;
  st.intra = n_intra > 0 ? intra / static_cast<double>(n_intra) : 0.0;
  st.inter = n_inter > 0 ? inter / static_cast<double>(n_inter) : 0.0;
  return st;
}

std::vector<int> dominant_labels(const LabeledDataset& data, const Partition& part) {
  std::vector<int> out;
  out.reserve(part.assignments.size());
  for (const auto& client : part.assignments) {
    std::vector<long> counts(static_cast<std::size_t>(data.num_classes), 0);
    for (int idx : client) counts[static_cast<std::size_t>(data.labels[idx])]++;
    out.push_back(static_cast<int>(
        std::max_element(counts.begin(), counts.end()) - counts.begin()));
  }
  return out;
}

nlohmann::json normality_to_json(const NormalityReport& report) {
  nlohmann::json doc;
  doc["pass"] = report.pass;
  doc["skewness_threshold"] = kSkewnessThreshold;
  doc["excess_kurtosis_threshold"] = kExcessKurtosisThreshold;
  doc["components"] = nlohmann::json::array();
  for (const auto& c : report.components)
    doc["components"].push_back({{"mean", c.mean},
                                 {"stddev", c.stddev},
                                 {"skewness", c.skewness},
                                 {"excess_kurtosis", c.excess_kurtosis},
                                 {"bin_edges", c.bin_edges},
                                 {"bin_counts", c.bin_counts}});
  return doc;
}

nlohmann::json stationarity_to_json(const std::vector<StationarityPoint>& series) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& p : series)
    doc.push_back({{"round", p.round},
                   {"similarity", p.similarity},
                   {"low_confidence", p.low_confidence}});
  return doc;
}

}  // namespace fedgp
