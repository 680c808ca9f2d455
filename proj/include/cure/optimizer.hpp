#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cure {

enum class OptimizerKind { sgd_momentum, adaptive };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // beta1 for the adaptive variant
  double weight_decay = 5e-4;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// SGD with momentum and coupled weight decay, or Adam. Parameters are passed
// as flat views on every step; slot i keeps its state across steps, so the
// caller must pass the same tensors in the same order each time.
class Optimizer {
 public:
  explicit Optimizer(OptimizerSettings settings);

  void set_learning_rate(double lr) { settings_.learning_rate = lr; }
  double learning_rate() const { return settings_.learning_rate; }

  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads);

 private:
  OptimizerSettings settings_;
  std::vector<Eigen::VectorXd> first_;
  std::vector<Eigen::VectorXd> second_;
  long steps_ = 0;
};

template <typename Derived>
std::span<double> flat_view(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Derived>
std::span<const double> flat_view(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace cure
