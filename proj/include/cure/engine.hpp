#pragma once

// Teacher training, the centroid-guided unlearning loop, and the comparison
// procedures (negative gradient, incompetent teacher, retrain oracle).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cure/clustering.hpp"
#include "cure/embedding.hpp"
#include "cure/losses.hpp"
#include "cure/optimizer.hpp"

namespace cure {

enum class PseudoLabelSpace { teacher, student };

std::string to_string(PseudoLabelSpace space);
PseudoLabelSpace pseudo_label_space_from_string(const std::string& s);

struct TeacherConfig {
  std::vector<int> hidden = {64, 64};
  int embedding_dim = 16;
  int epochs = 40;
  int batch_size = 64;
  double learning_rate = 0.05;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double arc_margin = 0.2;
  double scale = 16.0;
  double target_accuracy = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TeacherResult {
  ModelSnapshot model;
  Matrix class_weights;               // d x C, unit columns
  std::vector<int> class_identities;  // column -> identity label
  double train_accuracy = 0.0;
  int epochs_run = 0;
  bool converged = false;
  std::string diagnostic;
};

// Supervised angular-margin training. Never throws on a missed accuracy
// target; the result carries converged = false and a diagnostic instead.
TeacherResult train_teacher(std::span<const Sample> train, const TeacherConfig& config);

// Retrains from scratch on the retain set only.
TeacherResult retrain_oracle(const DatasetSplit& split, const TeacherConfig& config);

struct UnlearnConfig {
  int clusters = 8;
  double margin = 0.3;
  double temperature = 0.5;
  int update_interval = 5;
  int epochs = 30;
  double learning_rate = 0.1;
  int batch_size = 32;
  LossWeights weights;
  double freeze_fraction = 0.5;
  std::uint64_t seed = 0;
  PseudoLabelSpace pseudo_label_space = PseudoLabelSpace::student;
  ClusteringBackend clustering = ClusteringBackend::kmeans;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool reinit_head_on_recompute = true;
  double head_init_std = 0.01;
  // Baselines: weight on the forget-side and retain-side objective.
  double baseline_forget_weight = 1.0;
  double baseline_retain_weight = 1.0;
  double divergence_limit = 1e3;

  void validate() const;
  // Learning rate for 1-based epoch e: x0.1 after floor(E/10) and floor(E/5).
  double learning_rate_at(int epoch) const;
};

struct EpochLoss {
  int epoch = 0;
  double learning_rate = 0.0;
  LossBreakdown mean;
};

struct UnlearnHooks {
  std::function<void(int epoch, int step, const LossBreakdown&)> on_step;
  std::function<void(int epoch, const ModelSnapshot& student)> on_epoch_end;
  std::function<void(int epoch, const ClusterModel& forget, const ClusterModel& retain)> on_recompute;
};

struct UnlearnResult {
  ModelSnapshot student;
  ClusterModel retain_clusters;
  ClusterModel forget_clusters;
  std::vector<int> mapping;
  int recomputations = 0;
  std::vector<EpochLoss> epochs;
};

// The unlearning loop. Reads sample inputs and the forget/retain partition
// only; identity labels are never consulted.
UnlearnResult cure_unlearn(const ModelSnapshot& teacher, const DatasetSplit& split, const UnlearnConfig& config,
                           const UnlearnHooks& hooks = {});

// Ascent on forget feature-matching distance alternating with descent on the
// retain feature-matching loss.
UnlearnResult baseline_neggrad(const ModelSnapshot& teacher, const DatasetSplit& split, const UnlearnConfig& config,
                               const UnlearnHooks& hooks = {});

// Distills forget samples toward a randomly initialized extractor and retain
// samples toward the teacher (KL + feature matching on both sides).
UnlearnResult baseline_badteacher(const ModelSnapshot& teacher, const DatasetSplit& split,
                                  const UnlearnConfig& config, const UnlearnHooks& hooks = {});

// Derives independent stream seeds from one root seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

}  // namespace cure
