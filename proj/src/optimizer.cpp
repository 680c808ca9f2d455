#include "cure/optimizer.hpp"

#include <cmath>

#include "cure/errors.hpp"

namespace cure {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adaptive";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adaptive") return OptimizerKind::adaptive;
  throw ConfigError("unknown optimizer '" + s + "'");
}

Optimizer::Optimizer(OptimizerSettings settings) : settings_(settings) {
  if (!(settings_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (settings_.momentum < 0.0 || settings_.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (settings_.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
}

void Optimizer::step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: parameter/gradient count mismatch");
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.size())));
      second_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.size())));
    }
  }
  if (first_.size() != params.size()) throw DimensionError("optimizer: parameter list changed between steps");
  ++steps_;

  const double lr = settings_.learning_rate;
  const double mu = settings_.momentum;
  const double wd = settings_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || static_cast<Eigen::Index>(params[i].size()) != first_[i].size()) {
      throw DimensionError("optimizer: tensor size mismatch");
    }
    Eigen::Map<Eigen::VectorXd> p(params[i].data(), static_cast<Eigen::Index>(params[i].size()));
    Eigen::Map<const Eigen::VectorXd> g(grads[i].data(), static_cast<Eigen::Index>(grads[i].size()));
    Eigen::VectorXd grad = g + wd * p;
    if (settings_.kind == OptimizerKind::sgd_momentum) {
      first_[i] = mu * first_[i] + grad;
      p -= lr * first_[i];
    } else {
      const double b2 = settings_.beta2;
      first_[i] = mu * first_[i] + (1.0 - mu) * grad;
      second_[i] = b2 * second_[i] + (1.0 - b2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(mu, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
      p.array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + settings_.epsilon);
    }
  }
}

}  // namespace cure
