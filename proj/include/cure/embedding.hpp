#pragma once

// Samples, dataset splits, the fully connected feature extractor and the
// linear classifier head shared by every other module.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cure {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Sample {
  Vector input;
  int identity = 0;
  double quality = 1.0;
  std::int64_t id = 0;
};

struct DatasetSplit {
  std::vector<Sample> forget;
  std::vector<Sample> retain;
  std::vector<Sample> holdout;

  std::vector<Sample> train() const;  // forget followed by retain
};

// Stacks sample inputs as rows.
Matrix stack_inputs(std::span<const Sample> samples);

Vector l2_normalize(const Vector& v);

// Row-wise normalization; returns the row norms through `norms` when given.
Matrix normalize_rows(const Matrix& m, Vector* norms = nullptr);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  bool operator==(const DenseLayer& o) const {
    return weight.rows() == o.weight.rows() && weight.cols() == o.weight.cols() && bias.size() == o.bias.size() &&
           weight == o.weight && bias == o.bias;
  }
};

// Cached activations of one forward pass, consumed by backward().
struct ForwardCache {
  std::vector<Matrix> activations;  // activations[0] = inputs, then post-tanh hidden
  Matrix raw_output;                // last layer before normalization
  Vector output_norms;
  Matrix embeddings;                // normalized rows
};

using Gradients = std::vector<DenseLayer>;

// input -> hidden... -> embedding, tanh between layers, L2-normalized output.
// One parameter group per dense layer.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(std::vector<int> layer_sizes, std::uint64_t seed);
  FeatureExtractor(std::vector<int> layer_sizes, std::vector<DenseLayer> layers,
                   std::vector<bool> frozen);

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  int input_dim() const { return layer_sizes_.front(); }
  int embedding_dim() const { return layer_sizes_.back(); }
  std::size_t num_groups() const { return layers_.size(); }
  std::size_t num_parameters() const;

  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  DenseLayer& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  bool frozen(std::size_t group) const { return frozen_.at(group); }
  void set_frozen(std::size_t group, bool value) { frozen_.at(group) = value; }
  const std::vector<bool>& frozen_mask() const { return frozen_; }

  std::vector<std::string> parameter_names() const;

  Matrix embed(const Matrix& inputs) const;
  ForwardCache forward(const Matrix& inputs) const;
  // Gradient w.r.t. every layer given dLoss/dEmbeddings.
  Gradients backward(const ForwardCache& cache, const Matrix& grad_embeddings) const;
  Gradients zero_gradients() const;

  bool operator==(const FeatureExtractor& other) const;

 private:
  std::vector<int> layer_sizes_;
  std::vector<DenseLayer> layers_;
  std::vector<bool> frozen_;
};

// g : R^d -> R^K, logits = E * weight + bias.
struct ClassifierHead {
  Matrix weight;  // d x K
  Vector bias;    // K

  static ClassifierHead random(int dim, int classes, double stddev, std::uint64_t seed);
  int num_classes() const { return static_cast<int>(bias.size()); }
  Matrix logits(const Matrix& embeddings) const;
};

enum class ModelRole { teacher, student };

struct ModelSnapshot {
  FeatureExtractor extractor;
  ModelRole role = ModelRole::teacher;
};

std::string to_string(ModelRole role);
ModelRole model_role_from_string(const std::string& s);

// One unit-norm embedding per sample (rows), in input order.
Matrix extract_embeddings(const ModelSnapshot& model, std::span<const Sample> samples);

// Marks the first ceil(fraction * groups) parameter groups frozen.
ModelSnapshot freeze_early_layers(const ModelSnapshot& model, double fraction);

void save_checkpoint(const std::filesystem::path& path, const ModelSnapshot& model);
ModelSnapshot load_checkpoint(const std::filesystem::path& path);

}  // namespace cure
