#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "fedgp/dataset.hpp"
#include "fedgp/errors.hpp"

using namespace fedgp;
namespace fs = std::filesystem;

TEST_CASE("gen_synthetic minimal instance") {
  LabeledDataset d = gen_synthetic(2, 2, 1, 4.0, 0);
  CHECK(d.size() == 2);
  CHECK(d.dim() == 2);
  CHECK(std::set<int>(d.labels.begin(), d.labels.end()) == std::set<int>{0, 1});
  d.validate();
}

TEST_CASE("gen_synthetic counts per class") {
  LabeledDataset d = gen_synthetic(10, 20, 100, 3.0, 7);
  CHECK(d.size() == 1000);
  std::vector<int> counts(10, 0);
  for (int y : d.labels) counts[y]++;
  for (int c : counts) CHECK(c == 100);
}

TEST_CASE("gen_synthetic is deterministic per seed") {
  LabeledDataset a = gen_synthetic(4, 5, 20, 2.5, 99);
  LabeledDataset b = gen_synthetic(4, 5, 20, 2.5, 99);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  LabeledDataset c = gen_synthetic(4, 5, 20, 2.5, 100);
  CHECK(a.features != c.features);
}

TEST_CASE("gen_synthetic class centroids respect the separation") {
  const double sep = 4.0;
  LabeledDataset d = gen_synthetic(6, 8, 200, sep, 3);
  std::vector<Eigen::VectorXd> centroids(6, Eigen::VectorXd::Zero(8));
  std::vector<int> counts(6, 0);
  for (int i = 0; i < d.size(); ++i) {
    centroids[d.labels[i]] += d.features.row(i).transpose();
    counts[d.labels[i]]++;
  }
  for (int c = 0; c < 6; ++c) centroids[c] /= counts[c];
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b)
      CHECK((centroids[a] - centroids[b]).norm() > sep - 0.5);
}

TEST_CASE("gen_synthetic rejects invalid sizes") {
  CHECK_THROWS_AS(gen_synthetic(1, 2, 1, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic(2, 1, 1, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic(2, 2, 0, 1.0, 0), std::invalid_argument);
}

namespace {

void write_be_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

struct IdxFixture {
  fs::path dir;
  fs::path images = "images.idx";
  fs::path labels = "labels.idx";

  IdxFixture() {
    dir = fs::temp_directory_path() / "fedgp_idx_test";
    fs::create_directories(dir);
    images = dir / images;
    labels = dir / labels;
  }

  void write_images(std::uint32_t magic, std::uint32_t count, std::uint32_t rows,
                    std::uint32_t cols, std::size_t payload) const {
    std::ofstream out(images, std::ios::binary);
    write_be_u32(out, magic);
    write_be_u32(out, count);
    write_be_u32(out, rows);
    write_be_u32(out, cols);
    for (std::size_t i = 0; i < payload; ++i)
      out.put(static_cast<char>(i % 251));
  }

  void write_labels(std::uint32_t magic, std::uint32_t count,
                    std::size_t payload) const {
    std::ofstream out(labels, std::ios::binary);
    write_be_u32(out, magic);
    write_be_u32(out, count);
    for (std::size_t i = 0; i < payload; ++i)
      out.put(static_cast<char>(i % 3));
  }
};

}  // namespace

TEST_CASE("load_idx round-trips a well-formed pair") {
  IdxFixture fx;
  fx.write_images(0x803, 4, 2, 2, 16);
  fx.write_labels(0x801, 4, 4);
  LabeledDataset d = load_idx(fx.images.string(), fx.labels.string());
  CHECK(d.size() == 4);
  CHECK(d.dim() == 4);
  CHECK(d.labels == std::vector<int>{0, 1, 2, 0});
  CHECK(d.features(0, 0) == doctest::Approx(0.0));
  CHECK(d.features(0, 1) == doctest::Approx(1.0 / 255.0));
  CHECK(d.features.maxCoeff() <= 1.0);
}

TEST_CASE("load_idx rejects a bad label magic naming the file") {
  IdxFixture fx;
  fx.write_images(0x803, 4, 2, 2, 16);
  fx.write_labels(0x999, 4, 4);
  CHECK_THROWS_WITH_AS(load_idx(fx.images.string(), fx.labels.string()),
                       doctest::Contains("labels.idx"), ParseError);
}

TEST_CASE("load_idx rejects a bad image magic") {
  IdxFixture fx;
  fx.write_images(0x802, 4, 2, 2, 16);
  fx.write_labels(0x801, 4, 4);
  CHECK_THROWS_WITH_AS(load_idx(fx.images.string(), fx.labels.string()),
                       doctest::Contains("images.idx"), ParseError);
}

TEST_CASE("load_idx rejects count mismatch") {
  IdxFixture fx;
  fx.write_images(0x803, 3, 2, 2, 12);
  fx.write_labels(0x801, 4, 4);
  CHECK_THROWS_WITH_AS(load_idx(fx.images.string(), fx.labels.string()),
                       doctest::Contains("count mismatch"), ParseError);
}

TEST_CASE("load_idx rejects truncated image data") {
  IdxFixture fx;
  fx.write_images(0x803, 4, 2, 2, 9);  // needs 16 bytes
  fx.write_labels(0x801, 4, 4);
  CHECK_THROWS_WITH_AS(load_idx(fx.images.string(), fx.labels.string()),
                       doctest::Contains("truncated"), ParseError);
}

TEST_CASE("split_per_class splits stratified head and tail") {
  LabeledDataset d = gen_synthetic(3, 4, 10, 3.0, 1);
  auto [train, test] = split_per_class(d, 7);
  CHECK(train.size() == 21);
  CHECK(test.size() == 9);
  std::vector<int> train_counts(3, 0), test_counts(3, 0);
  for (int y : train.labels) train_counts[y]++;
  for (int y : test.labels) test_counts[y]++;
  for (int c = 0; c < 3; ++c) {
    CHECK(train_counts[c] == 7);
    CHECK(test_counts[c] == 3);
  }
}
