#pragma once

// Unlearning evaluation: accuracy drops, UES, confidence/entropy shifts,
// membership-inference style diagnostics and pair verification.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cure/embedding.hpp"
#include "cure/synth.hpp"

namespace cure {

// Per-sample class posteriors. Rows of `probabilities` sum to one.
struct PredictionDump {
  Matrix probabilities;                  // N x C
  std::vector<std::array<int, 3>> top3;  // requires C >= 3; otherwise padded with -1
  std::vector<std::int64_t> ids;

  static PredictionDump from_probabilities(Matrix probabilities, std::vector<std::int64_t> ids);
  std::size_t size() const { return ids.size(); }
  int num_classes() const { return static_cast<int>(probabilities.cols()); }
};

struct UESInputs {
  double acc_forget_before = 0.0;
  double acc_forget_after = 0.0;
  double acc_retain_before = 0.0;
  double acc_retain_after = 0.0;
  double alpha = 0.5;
};

double ues(const UESInputs& in);
double confidence(const PredictionDump& dump);
double entropy(const PredictionDump& dump);
double activation_distance(const PredictionDump& before, const PredictionDump& after);
double layerwise_distance(const ModelSnapshot& before, const ModelSnapshot& after);
double completeness(const PredictionDump& before, const PredictionDump& after);
double membership_recall(const PredictionDump& dump, double threshold = 0.8);

struct VerificationResult {
  double accuracy = 0.0;
  double threshold = 0.0;
  bool balanced = true;
};

// Best-threshold accuracy of "same iff score >= threshold"; the lowest
// maximizing threshold wins.
VerificationResult verification_from_scores(std::span<const double> scores, const std::vector<bool>& same);
VerificationResult verification_accuracy(const ModelSnapshot& model, std::span<const VerificationPair> pairs);

// Unit-norm mean embedding per identity.
struct Prototypes {
  Matrix directions;            // C x d
  std::vector<int> identities;  // row -> identity label

  int row_of(int identity) const;  // -1 when absent
};

Prototypes class_prototypes(const ModelSnapshot& model, std::span<const Sample> samples);

// softmax(scale * cosine similarity to each prototype).
PredictionDump predict(const ModelSnapshot& model, const Prototypes& prototypes, std::span<const Sample> samples,
                       double scale);

// Fraction of samples whose argmax prototype is their own identity.
double prototype_accuracy(const PredictionDump& dump, const Prototypes& prototypes, std::span<const Sample> samples);

struct EvalOptions {
  double alpha = 0.5;
  double prototype_scale = 16.0;
  double membership_threshold = 0.8;
  // Classify the student against its own prototypes built from the retain
  // set (retrain oracle); otherwise against the teacher's training prototypes.
  bool student_prototypes = false;
};

struct EvaluationReport {
  double acc_forget_before = 0.0;
  double acc_forget_after = 0.0;
  double acc_retain_before = 0.0;
  double acc_retain_after = 0.0;
  double alpha = 0.5;
  double ues = 0.0;
  double conf_drop_forget = 0.0;
  double ent_inc_forget = 0.0;
  double conf_drop_retain = 0.0;
  double ent_inc_retain = 0.0;
  double activation_distance = 0.0;
  double layerwise_distance = 0.0;
  double completeness = 0.0;
  double membership_recall_before = 0.0;
  double membership_recall_after = 0.0;
  double verification_before = 0.0;
  double verification_after = 0.0;
  std::vector<std::string> warnings;

  bool operator==(const EvaluationReport&) const = default;
};

void to_json(nlohmann::json& j, const EvaluationReport& r);
void from_json(const nlohmann::json& j, EvaluationReport& r);

EvaluationReport evaluate_all(const ModelSnapshot& teacher, const ModelSnapshot& student, const DatasetSplit& split,
                              std::span<const VerificationPair> pairs, const EvalOptions& options = {});

}  // namespace cure
