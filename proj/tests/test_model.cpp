#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "fedgp/errors.hpp"
#include "fedgp/model.hpp"
#include "test_support.hpp"

using namespace fedgp;

namespace {

ModelSpec logreg_spec(int in, int classes) {
  return {Architecture::logreg, in, {}, classes};
}

ModelSpec mlp_spec(int in, std::vector<int> hidden, int classes) {
  return {Architecture::mlp, in, std::move(hidden), classes};
}

}  // namespace

TEST_CASE("init_params layout sizes") {
  CHECK(init_params(logreg_spec(4, 3), 0).values.size() == 4 * 3 + 3);
  const ModelSpec big = mlp_spec(784, {64, 30}, 10);
  CHECK(init_params(big, 0).values.size() ==
        784 * 64 + 64 + 64 * 30 + 30 + 30 * 10 + 10);
}

TEST_CASE("init_params deterministic per seed, biases zero") {
  const ModelSpec spec = mlp_spec(6, {5}, 3);
  ParamVector a = init_params(spec, 11);
  ParamVector b = init_params(spec, 11);
  CHECK(a.values == b.values);
  ParamVector c = init_params(spec, 12);
  CHECK(a.values != c.values);
  for (const auto& seg : a.layout.segments)
    if (seg.bias)
      for (int i = 0; i < seg.size(); ++i) CHECK(a.values[seg.offset + i] == 0.0);
}

TEST_CASE("model spec invariants") {
  CHECK_THROWS_AS(layout_for({Architecture::logreg, 4, {8}, 3}), std::invalid_argument);
  CHECK_THROWS_AS(layout_for({Architecture::mlp, 4, {}, 3}), std::invalid_argument);
}

TEST_CASE("zero logreg gives ln K loss and uniform-softmax bias gradient") {
  const int k = 4;
  const ModelSpec spec = logreg_spec(3, k);
  ParamVector zero{Eigen::VectorXd::Zero(layout_for(spec).total), layout_for(spec)};
  LabeledDataset data = gen_synthetic(k, 3, 5, 3.0, 1);
  auto idx = all_indices(data);

  LossGrad lg = loss_and_grad(zero, spec, data, idx, 0.0);
  CHECK(lg.loss == doctest::Approx(std::log(double(k))).epsilon(1e-12));

  // bias gradient = mean over batch of (uniform softmax - onehot)
  const auto& bseg = zero.layout.segments[1];
  std::vector<double> label_frac(k, 0.0);
  for (int i : idx) label_frac[data.labels[i]] += 1.0 / idx.size();
  for (int c = 0; c < k; ++c)
    CHECK(lg.grad.values[bseg.offset + c] ==
          doctest::Approx(1.0 / k - label_frac[c]).epsilon(1e-12));
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(31);
  LabeledDataset data = gen_synthetic(3, 5, 8, 3.0, 9);
  auto idx = all_indices(data);
  std::span<const int> batch(idx.data(), 6);

  for (const double decay : {0.0, 3e-4}) {
    for (const ModelSpec& spec :
         {logreg_spec(5, 3), mlp_spec(5, {7, 4}, 3)}) {
      ParamVector params = init_params(spec, rng());
      LossGrad lg = loss_and_grad(params, spec, data, batch, decay);
      auto f = [&](const Eigen::VectorXd& v) {
        ParamVector p{v, params.layout};
        return loss_and_grad(p, spec, data, batch, decay).loss;
      };
      std::uniform_int_distribution<Eigen::Index> pick(0, params.values.size() - 1);
      double max_err = 0.0;
      for (int t = 0; t < 20; ++t) {
        const Eigen::Index coord = pick(rng);
        const double fd =
            test_support::central_difference(f, params.values, coord, 1e-5);
        max_err = std::max(max_err, std::abs(fd - lg.grad.values[coord]));
      }
      CHECK(max_err <= 1e-4);
    }
  }
}

TEST_CASE("decay term vanishes on zero weights") {
  const ModelSpec spec = logreg_spec(4, 3);
  ParamVector zero{Eigen::VectorXd::Zero(layout_for(spec).total), layout_for(spec)};
  LabeledDataset data = gen_synthetic(3, 4, 4, 3.0, 0);
  auto idx = all_indices(data);
  CHECK(loss_and_grad(zero, spec, data, idx, 0.0).loss ==
        loss_and_grad(zero, spec, data, idx, 0.5).loss);
}

TEST_CASE("loss is permutation-invariant over batch order") {
  const ModelSpec spec = mlp_spec(4, {6}, 3);
  ParamVector params = init_params(spec, 5);
  LabeledDataset data = gen_synthetic(3, 4, 10, 3.0, 2);
  auto idx = all_indices(data);
  const double base = loss_and_grad(params, spec, data, idx, 1e-4).loss;
  std::mt19937_64 rng(7);
  std::shuffle(idx.begin(), idx.end(), rng);
  CHECK(loss_and_grad(params, spec, data, idx, 1e-4).loss ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("evaluate on zero logreg uses the lowest-index tie break") {
  const ModelSpec spec = logreg_spec(3, 4);
  ParamVector zero{Eigen::VectorXd::Zero(layout_for(spec).total), layout_for(spec)};
  LabeledDataset data = gen_synthetic(4, 3, 6, 3.0, 3);
  auto idx = all_indices(data);
  EvalResult r = evaluate(zero, spec, data, idx);
  CHECK(r.mean_loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  double zero_frac = 0.0;
  for (int i : idx)
    if (data.labels[i] == 0) zero_frac += 1.0 / idx.size();
  CHECK(r.accuracy == doctest::Approx(zero_frac));
  EvalResult again = evaluate(zero, spec, data, idx);
  CHECK(r.mean_loss == again.mean_loss);
  CHECK(r.accuracy == again.accuracy);
}

TEST_CASE("full-batch descent separates two blobs") {
  LabeledDataset data = gen_synthetic(2, 4, 30, 6.0, 13);
  auto idx = all_indices(data);
  const ModelSpec spec = logreg_spec(4, 2);
  ParamVector params = init_params(spec, 1);
  double loss = 1e9;
  for (int step = 0; step < 4000 && loss >= 0.05; ++step) {
    LossGrad lg = loss_and_grad(params, spec, data, idx, 0.0);
    loss = lg.loss;
    params.values -= 0.5 * lg.grad.values;
  }
  REQUIRE(loss < 0.05);
  CHECK(evaluate(params, spec, data, idx).accuracy == 1.0);
}

TEST_CASE("evaluate ignores the decay term") {
  const ModelSpec spec = mlp_spec(4, {5}, 3);
  ParamVector params = init_params(spec, 3);
  LabeledDataset data = gen_synthetic(3, 4, 8, 3.0, 4);
  auto idx = all_indices(data);
  const double plain = loss_and_grad(params, spec, data, idx, 0.0).loss;
  CHECK(evaluate(params, spec, data, idx).mean_loss == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("non-finite activations raise a numeric error naming the layer") {
  const ModelSpec spec = mlp_spec(4, {5}, 3);
  ParamVector params = init_params(spec, 3);
  params.values.setConstant(1e308);
  LabeledDataset data = gen_synthetic(3, 4, 4, 3.0, 4);
  auto idx = all_indices(data);
  CHECK_THROWS_WITH_AS(loss_and_grad(params, spec, data, idx, 0.0),
                       doctest::Contains("layer"), NumericError);
}

TEST_CASE("parameters round-trip through the binary file format") {
  namespace fs = std::filesystem;
  const ModelSpec spec = mlp_spec(6, {4}, 3);
  ParamVector params = init_params(spec, 21);
  const fs::path dir = fs::temp_directory_path() / "fedgp_model_test";
  fs::create_directories(dir);
  save_params(params, (dir / "p.bin").string(), (dir / "p.layout.json").string());
  ParamVector back = load_params((dir / "p.bin").string(), (dir / "p.layout.json").string());
  CHECK(back.values == params.values);
  CHECK(back.layout == params.layout);
}
