#pragma once

// Experiment orchestration behind the command-line tool. Each command writes
// into one run directory: config.ini (snapshot), metrics.csv, report.json,
// plus command-specific artifacts.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cure/config.hpp"

namespace cure {

struct PreparedData {
  std::vector<Sample> samples;
  DatasetSplit split;
  std::vector<VerificationPair> pairs;
};

// Generates the dataset, splits it and draws verification pairs from the
// holdout, all from the config's root seed.
PreparedData prepare_data(const ExperimentConfig& config);

// Quality mode only: forgets the same number of training samples as the
// quality split, chosen uniformly at random, over the same holdout.
DatasetSplit matched_random_split(const ExperimentConfig& config, const PreparedData& data);

// Exit status the CLI uses for each error family.
enum ExitCode : int {
  exit_ok = 0,
  exit_failure = 1,
  exit_usage = 2,
  exit_config = 3,
  exit_io = 4,
  exit_data = 5,
  exit_infeasible = 6,
  exit_divergence = 7,
  exit_metric = 8,
};

int exit_code_for(const std::exception& e);

// Resolves the run directory: explicit path, else <root>/<name> where root is
// config.output_dir, $CURE_OUTPUT_ROOT or ./runs, in that order.
std::filesystem::path resolve_run_dir(const ExperimentConfig& config, const std::optional<std::filesystem::path>& explicit_dir,
                                      const std::string& name);

// Files every run directory must hold.
std::vector<std::string> required_run_files();
// Throws IoError naming the first missing file.
void check_run_manifest(const std::filesystem::path& run_dir);

enum class Method { cure, neggrad, badteacher, oracle };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct TeacherArtifacts {
  TeacherResult teacher;
  std::filesystem::path checkpoint;
};

TeacherArtifacts cmd_train_teacher(const ExperimentConfig& config, const std::filesystem::path& run_dir);

struct UnlearnArtifacts {
  ModelSnapshot student;
  EvaluationReport report;
};

// Trains the teacher in place unless a checkpoint is given.
UnlearnArtifacts cmd_unlearn(const ExperimentConfig& config, Method method, const std::filesystem::path& run_dir,
                             const std::optional<std::filesystem::path>& teacher_checkpoint = std::nullopt);

EvaluationReport cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& teacher_checkpoint,
                              const std::filesystem::path& student_checkpoint, const std::filesystem::path& run_dir,
                              bool student_prototypes = false);

struct ComparisonRow {
  std::string method;
  double forget_acc = 0.0;
  double retain_acc = 0.0;
  std::optional<double> ues;  // absent for the pre-unlearning row
  double verification = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  double alpha = 0.5;

  const ComparisonRow& row(const std::string& method) const;
  std::string to_csv() const;
};

ComparisonTable cmd_compare(const ExperimentConfig& config, const std::filesystem::path& run_dir);

// Loss-term names accepted by ablations: pseudo_label, cos_forget, contrast,
// cos_retain, feat, fd.
std::vector<std::string> loss_term_names();
LossWeights disable_terms(LossWeights weights, const std::set<std::string>& terms);

struct AblationSpec {
  std::string label;
  std::set<std::string> disabled;
  std::optional<double> margin;
  std::optional<ClusteringBackend> clustering;
};

struct AblationRow {
  AblationSpec spec;
  double forget_acc = 0.0;
  double retain_acc = 0.0;
  double ues = 0.0;
};

// A1..A12 loss toggles, margin rows m in {0, 0.1, 0.3, 0.6}, the GMM row and
// the unmodified configuration.
std::vector<AblationSpec> standard_ablation_grid();

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const std::vector<AblationSpec>& specs,
                                    const std::filesystem::path& run_dir);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace cure
