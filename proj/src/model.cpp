#include "fedgp/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "fedgp/errors.hpp"
#include "fedgp/rng.hpp"

namespace fedgp {

void ModelSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("model: input_dim must be positive");
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
  if (architecture == Architecture::logreg && !hidden_dims.empty())
    throw std::invalid_argument("model: logreg takes no hidden layers");
  if (architecture == Architecture::mlp && hidden_dims.empty())
    throw std::invalid_argument("model: mlp requires hidden layers");
  for (int h : hidden_dims)
    if (h < 1) throw std::invalid_argument("model: hidden layer width must be positive");
}

namespace {

std::vector<int> layer_dims(const ModelSpec& spec) {
  std::vector<int> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.num_classes);
  return dims;
}

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

}  // namespace

ParamLayout layout_for(const ModelSpec& spec) {
  spec.validate();
  ParamLayout layout;
  const auto dims = layer_dims(spec);
  int offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    ParamSegment w{"w" + std::to_string(l), dims[l + 1], dims[l], offset, false};
    offset += w.size();
    layout.segments.push_back(w);
    ParamSegment b{"b" + std::to_string(l), dims[l + 1], 1, offset, true};
    offset += b.size();
    layout.segments.push_back(b);
  }
  layout.total = offset;
  return layout;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector p;
  p.layout = layout_for(spec);
  p.values = Eigen::VectorXd::Zero(p.layout.total);
  std::mt19937_64 rng = make_rng(seed);
  for (const auto& seg : p.layout.segments) {
    if (seg.bias) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(seg.cols));
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (int i = 0; i < seg.size(); ++i) p.values[seg.offset + i] = uni(rng);
  }
  return p;
}

namespace {

struct Forward {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] = input batch
  std::vector<Eigen::MatrixXd> pre;          // pre-activation per layer
  Eigen::MatrixXd probs;                     // softmax of final layer
};

Eigen::MatrixXd gather_rows(const LabeledDataset& data, std::span<const int> idx) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(idx.size()), data.dim());
  for (std::size_t r = 0; r < idx.size(); ++r)
    m.row(static_cast<Eigen::Index>(r)) = data.features.row(idx[r]);
  return m;
}

Forward forward_pass(const ParamVector& params, const Eigen::MatrixXd& batch) {
  const int layers = static_cast<int>(params.layout.segments.size()) / 2;
  Forward f;
  f.activations.reserve(layers + 1);
  f.pre.reserve(layers);
  f.activations.push_back(batch);
  for (int l = 0; l < layers; ++l) {
    const auto& wseg = params.layout.segments[2 * l];
    const auto& bseg = params.layout.segments[2 * l + 1];
    ConstMatMap W(params.values.data() + wseg.offset, wseg.rows, wseg.cols);
    ConstVecMap b(params.values.data() + bseg.offset, bseg.rows);
    Eigen::MatrixXd z = f.activations.back() * W.transpose();
    z.rowwise() += b.transpose();
    if (!z.allFinite())
      throw NumericError("model: non-finite activations at layer " + std::to_string(l));
    f.pre.push_back(z);
    if (l + 1 < layers)
      f.activations.push_back(z.cwiseMax(0.0));
  }
  // softmax with per-row max subtraction
  const Eigen::MatrixXd& logits = f.pre.back();
  Eigen::VectorXd rowmax = logits.rowwise().maxCoeff();
  Eigen::MatrixXd shifted = logits.colwise() - rowmax;
  Eigen::MatrixXd ex = shifted.array().exp().matrix();
  Eigen::VectorXd denom = ex.rowwise().sum();
  f.probs = ex.array().colwise() / denom.array();
  return f;
}

double batch_cross_entropy(const Forward& f, const LabeledDataset& data,
                           std::span<const int> idx) {
  double loss = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double p = f.probs(static_cast<Eigen::Index>(r), data.labels[idx[r]]);
    loss -= std::log(std::max(p, 1e-300));
  }
  return loss / static_cast<double>(idx.size());
}

}  // namespace

LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec,
                       const LabeledDataset& data, std::span<const int> batch,
                       double weight_decay) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  if (data.dim() != spec.input_dim)
    throw std::invalid_argument("loss_and_grad: feature dim != spec input_dim");

  const Eigen::MatrixXd x = gather_rows(data, batch);
  Forward f = forward_pass(params, x);
  const int layers = static_cast<int>(params.layout.segments.size()) / 2;
  const auto b = static_cast<double>(batch.size());

  LossGrad out;
  out.loss = batch_cross_entropy(f, data, batch);
  out.grad.layout = params.layout;
  out.grad.values = Eigen::VectorXd::Zero(params.layout.total);

  // d(loss)/d(logits) = (softmax - onehot) / batch
  Eigen::MatrixXd dz = f.probs;
  for (std::size_t r = 0; r < batch.size(); ++r)
    dz(static_cast<Eigen::Index>(r), data.labels[batch[r]]) -= 1.0;
  dz /= b;

  for (int l = layers - 1; l >= 0; --l) {
    const auto& wseg = params.layout.segments[2 * l];
    const auto& bseg = params.layout.segments[2 * l + 1];
    ConstMatMap W(params.values.data() + wseg.offset, wseg.rows, wseg.cols);
    MatMap dW(out.grad.values.data() + wseg.offset, wseg.rows, wseg.cols);
    VecMap db(out.grad.values.data() + bseg.offset, bseg.rows);

    dW = dz.transpose() * f.activations[l];
    db = dz.colwise().sum().transpose();
    if (weight_decay != 0.0) {
      dW += weight_decay * W;
      out.loss += 0.5 * weight_decay * W.squaredNorm();
    }
    if (l > 0) {
      Eigen::MatrixXd da = dz * W;
      dz = (f.pre[l - 1].array() > 0.0).cast<double>() * da.array();
    }
  }
  return out;
}

EvalResult evaluate(const ParamVector& params, const ModelSpec& spec,
                    const LabeledDataset& data, std::span<const int> examples) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty example set");
  if (data.dim() != spec.input_dim)
    throw std::invalid_argument("evaluate: feature dim != spec input_dim");

  const Eigen::MatrixXd x = gather_rows(data, examples);
  Forward f = forward_pass(params, x);

  EvalResult out;
  out.mean_loss = batch_cross_entropy(f, data, examples);
  int correct = 0;
  for (std::size_t r = 0; r < examples.size(); ++r) {
    int best = 0;
    for (int c = 1; c < spec.num_classes; ++c)
      if (f.probs(static_cast<Eigen::Index>(r), c) >
          f.probs(static_cast<Eigen::Index>(r), best))
        best = c;
    if (best == data.labels[examples[r]]) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return out;
}

void save_params(const ParamVector& params, const std::string& bin_path,
                 const std::string& layout_json_path) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw ParseError(bin_path + ": cannot open for writing");
  bin.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(sizeof(double) * params.values.size()));

  nlohmann::json doc;
  doc["total"] = params.layout.total;
  doc["segments"] = nlohmann::json::array();
  for (const auto& seg : params.layout.segments)
    doc["segments"].push_back({{"name", seg.name},
                               {"rows", seg.rows},
                               {"cols", seg.cols},
                               {"offset", seg.offset},
                               {"bias", seg.bias}});
  std::ofstream js(layout_json_path);
  if (!js) throw ParseError(layout_json_path + ": cannot open for writing");
  js << doc.dump(2) << "\n";
}

ParamVector load_params(const std::string& bin_path,
                        const std::string& layout_json_path) {
  std::ifstream js(layout_json_path);
  if (!js) throw ParseError(layout_json_path + ": cannot open");
  nlohmann::json doc = nlohmann::json::parse(js, nullptr, true, true);

  ParamVector p;
  p.layout.total = doc.at("total").get<int>();
  for (const auto& s : doc.at("segments"))
    p.layout.segments.push_back({s.at("name").get<std::string>(),
                                 s.at("rows").get<int>(), s.at("cols").get<int>(),
                                 s.at("offset").get<int>(), s.at("bias").get<bool>()});

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw ParseError(bin_path + ": cannot open");
  p.values.resize(p.layout.total);
  bin.read(reinterpret_cast<char*>(p.values.data()),
           static_cast<std::streamsize>(sizeof(double) * p.values.size()));
  if (!bin || bin.gcount() != static_cast<std::streamsize>(sizeof(double) * p.values.size()))
    throw ParseError(bin_path + ": truncated parameter file");
  return p;
}

}  // namespace fedgp
