#include "cure/embedding.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "cure/errors.hpp"

namespace cure {

using nlohmann::json;

std::vector<Sample> DatasetSplit::train() const {
  std::vector<Sample> out;
  out.reserve(forget.size() + retain.size());
  out.insert(out.end(), forget.begin(), forget.end());
  out.insert(out.end(), retain.begin(), retain.end());
  return out;
}

Matrix stack_inputs(std::span<const Sample> samples) {
  if (samples.empty()) throw EmptyInputError("stack_inputs: no samples");
  const auto dim = samples.front().input.size();
  Matrix out(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].input.size() != dim) throw DimensionError("stack_inputs: ragged sample inputs");
    out.row(static_cast<Eigen::Index>(i)) = samples[i].input.transpose();
  }
  return out;
}

Vector l2_normalize(const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw DegenerateInputError("l2_normalize: zero vector");
  return v / n;
}

Matrix normalize_rows(const Matrix& m, Vector* norms) {
  Vector n = m.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    if (!(n(i) > 0.0)) throw DegenerateInputError("normalize_rows: zero row");
  }
  Matrix out = n.cwiseInverse().asDiagonal() * m;
  if (norms) *norms = std::move(n);
  return out;
}

FeatureExtractor::FeatureExtractor(std::vector<int> layer_sizes, std::uint64_t seed)
    : layer_sizes_(std::move(layer_sizes)) {
  if (layer_sizes_.size() < 2) throw ConfigError("extractor needs at least input and output sizes");
  for (int s : layer_sizes_) {
    if (s <= 0) throw ConfigError("extractor layer sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    const int in = layer_sizes_[l];
    const int out = layer_sizes_[l + 1];
    // Xavier/Glorot normal
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in + out)));
    DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = dist(rng);
    }
    layers_.push_back(std::move(layer));
  }
  frozen_.assign(layers_.size(), false);
}

FeatureExtractor::FeatureExtractor(std::vector<int> layer_sizes, std::vector<DenseLayer> layers,
                                   std::vector<bool> frozen)
    : layer_sizes_(std::move(layer_sizes)), layers_(std::move(layers)), frozen_(std::move(frozen)) {
  if (layer_sizes_.size() < 2 || layers_.size() + 1 != layer_sizes_.size() ||
      frozen_.size() != layers_.size()) {
    throw DimensionError("extractor: descriptor does not match parameter list");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight.rows() != layer_sizes_[l + 1] ||
        layers_[l].weight.cols() != layer_sizes_[l] ||
        layers_[l].bias.size() != layer_sizes_[l + 1]) {
      throw DimensionError("extractor: layer " + std::to_string(l) + " has the wrong shape");
    }
  }
}

std::size_t FeatureExtractor::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<std::string> FeatureExtractor::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    names.push_back("layer" + std::to_string(l) + ".weight");
    names.push_back("layer" + std::to_string(l) + ".bias");
  }
  return names;
}

ForwardCache FeatureExtractor::forward(const Matrix& inputs) const {
  if (inputs.cols() != input_dim()) {
    throw DimensionError("extractor: expected input dimension " + std::to_string(input_dim()) +
                         ", got " + std::to_string(inputs.cols()));
  }
  ForwardCache cache;
  cache.activations.reserve(layers_.size());
  cache.activations.push_back(inputs);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = cache.activations.back() * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    if (l + 1 < layers_.size()) {
      cache.activations.push_back(z.array().tanh().matrix());
    } else {
      cache.raw_output = std::move(z);
    }
  }
  cache.embeddings = normalize_rows(cache.raw_output, &cache.output_norms);
  return cache;
}

Matrix FeatureExtractor::embed(const Matrix& inputs) const { return forward(inputs).embeddings; }

Gradients FeatureExtractor::zero_gradients() const {
  Gradients g;
  for (const auto& l : layers_) {
    g.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return g;
}

Gradients FeatureExtractor::backward(const ForwardCache& cache, const Matrix& grad_embeddings) const {
  const Matrix& e = cache.embeddings;
  if (grad_embeddings.rows() != e.rows() || grad_embeddings.cols() != e.cols()) {
    throw DimensionError("extractor backward: gradient shape mismatch");
  }
  // d(y/|y|)/dy = (I - e e^T) / |y|
  const Vector radial = (grad_embeddings.cwiseProduct(e)).rowwise().sum();
  Matrix delta = cache.output_norms.cwiseInverse().asDiagonal() *
                 (grad_embeddings - radial.asDiagonal() * e);

  Gradients grads(layers_.size());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Matrix& a_in = cache.activations[l];
    grads[l].weight = delta.transpose() * a_in;
    grads[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix upstream = delta * layers_[l].weight;
      // tanh' = 1 - a^2
      delta = upstream.cwiseProduct((1.0 - a_in.array().square()).matrix());
    }
  }
  return grads;
}

bool FeatureExtractor::operator==(const FeatureExtractor& other) const {
  if (layer_sizes_ != other.layer_sizes_ || frozen_ != other.frozen_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight != other.layers_[l].weight || layers_[l].bias != other.layers_[l].bias) {
      return false;
    }
  }
  return true;
}

ClassifierHead ClassifierHead::random(int dim, int classes, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  ClassifierHead head{Matrix(dim, classes), Vector::Zero(classes)};
  for (Eigen::Index c = 0; c < head.weight.cols(); ++c) {
    for (Eigen::Index r = 0; r < head.weight.rows(); ++r) head.weight(r, c) = dist(rng);
  }
  return head;
}

Matrix ClassifierHead::logits(const Matrix& embeddings) const {
  if (embeddings.cols() != weight.rows()) throw DimensionError("classifier head: dimension mismatch");
  Matrix z = embeddings * weight;
  z.rowwise() += bias.transpose();
  return z;
}

std::string to_string(ModelRole role) { return role == ModelRole::teacher ? "teacher" : "student"; }

ModelRole model_role_from_string(const std::string& s) {
  if (s == "teacher") return ModelRole::teacher;
  if (s == "student") return ModelRole::student;
  throw ConfigError("unknown model role '" + s + "'");
}

Matrix extract_embeddings(const ModelSnapshot& model, std::span<const Sample> samples) {
  if (samples.empty()) throw EmptyInputError("extract_embeddings: empty sample list");
  return model.extractor.embed(stack_inputs(samples));
}

ModelSnapshot freeze_early_layers(const ModelSnapshot& model, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("freeze fraction must lie in [0, 1]");
  }
  const auto groups = model.extractor.num_groups();
  if (groups < 2) throw ConfigError("freeze_early_layers: model needs at least two parameter groups");
  const auto n_frozen = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(groups) - 1e-12));
  ModelSnapshot out = model;
  for (std::size_t g = 0; g < groups; ++g) out.extractor.set_frozen(g, g < n_frozen);
  return out;
}

namespace {

json matrix_to_json(const std::string& name, const Matrix& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), m.rows(), m.cols()) = m;
  return {{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", data}};
}

Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols ||
      static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw IoError("checkpoint: tensor '" + j.at("name").get<std::string>() + "' has the wrong shape");
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), rows, cols);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelSnapshot& model) {
  const auto& ex = model.extractor;
  json params = json::array();
  for (std::size_t l = 0; l < ex.num_groups(); ++l) {
    params.push_back(matrix_to_json("layer" + std::to_string(l) + ".weight", ex.layer(l).weight));
    params.push_back(matrix_to_json("layer" + std::to_string(l) + ".bias", Matrix(ex.layer(l).bias)));
  }
  json doc = {
      {"format", "cure-checkpoint"},
      {"version", 1},
      {"role", to_string(model.role)},
      {"architecture", {{"layer_sizes", ex.layer_sizes()}, {"activation", "tanh"}, {"output", "l2"}}},
      {"frozen", ex.frozen_mask()},
      {"parameters", params},
  };
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
}

ModelSnapshot load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  json doc;
  try {
    in >> doc;
    if (doc.at("format") != "cure-checkpoint") throw IoError("not a checkpoint: " + path.string());
    const auto sizes = doc.at("architecture").at("layer_sizes").get<std::vector<int>>();
    const auto frozen = doc.at("frozen").get<std::vector<bool>>();
    const auto& params = doc.at("parameters");
    if (sizes.size() < 2 || params.size() != 2 * (sizes.size() - 1)) {
      throw IoError("checkpoint: parameter count does not match architecture");
    }
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      DenseLayer layer;
      layer.weight = matrix_from_json(params[2 * l], sizes[l + 1], sizes[l]);
      layer.bias = matrix_from_json(params[2 * l + 1], sizes[l + 1], 1).col(0);
      layers.push_back(std::move(layer));
    }
    return {FeatureExtractor(sizes, std::move(layers), frozen),
            model_role_from_string(doc.at("role").get<std::string>())};
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace cure
