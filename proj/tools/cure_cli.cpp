#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cure/errors.hpp"
#include "cure/experiment.hpp"

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_report(const cure::EvaluationReport& r) {
  std::cout << "forget acc  " << fmt(r.acc_forget_before) << " -> " << fmt(r.acc_forget_after) << "\n"
            << "retain acc  " << fmt(r.acc_retain_before) << " -> " << fmt(r.acc_retain_after) << "\n"
            << "UES         " << fmt(r.ues) << "\n"
            << "membership  " << fmt(r.membership_recall_before) << " -> " << fmt(r.membership_recall_after) << "\n"
            << "verification " << fmt(r.verification_before) << " -> " << fmt(r.verification_after) << "\n";
  for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Centroid-guided unsupervised unlearning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("-c,--config", config_path, "Config file (sectioned key = value)");
  app.add_option("-s,--set", overrides, "Override a config key: section.key=value (repeatable)");
  app.add_option("--seed", seed, "Root seed (overrides experiment.seed)");
  app.add_option("-o,--out", out_dir, "Run directory (default: <output root>/<command>-seed<N>)");

  auto* train = app.add_subcommand("train-teacher", "Train the angular-margin teacher");

  auto* unlearn = app.add_subcommand("unlearn", "Run one unlearning method");
  std::string method = "cure";
  std::optional<std::string> teacher_ckpt;
  unlearn->add_option("-m,--method", method, "Method")
      ->check(CLI::IsMember({"cure", "neggrad", "badteacher", "oracle"}));
  unlearn->add_option("--teacher", teacher_ckpt, "Reuse a teacher checkpoint instead of training one")
      ->check(CLI::ExistingFile);

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a student checkpoint against its teacher");
  std::string eval_teacher, eval_student;
  bool own_prototypes = false;
  evaluate->add_option("--teacher", eval_teacher, "Teacher checkpoint")->required();
  evaluate->add_option("--student", eval_student, "Student checkpoint")->required();
  evaluate->add_flag("--own-prototypes", own_prototypes, "Classify with the student's own retain prototypes");

  auto* compare = app.add_subcommand("compare", "Before/CURE/baselines/oracle comparison table");

  auto* ablate = app.add_subcommand("ablate", "Loss-term, margin and clustering ablations");
  std::vector<std::string> disable;
  std::optional<double> margin;
  std::optional<std::string> clustering;
  std::string label = "custom";
  bool grid = false;
  ablate->add_option("--disable", disable, "Loss terms to switch off")->delimiter(',')
      ->check(CLI::IsMember(cure::loss_term_names()));
  ablate->add_option("--margin", margin, "Contrastive margin");
  ablate->add_option("--clustering", clustering, "Clustering backend")->check(CLI::IsMember({"kmeans", "gmm"}));
  ablate->add_option("--label", label, "Row label");
  ablate->add_flag("--grid", grid, "Run the standard grid (A1-A12, margin sweep, GMM, full)");

  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cure::exit_ok : cure::exit_usage;
  }

  try {
    cure::ExperimentConfig config = config_path.empty() ? cure::ExperimentConfig{} : cure::load_config(config_path);
    config.propagate_seed();
    for (const auto& o : overrides) cure::apply_override(config, o);
    if (seed) cure::apply_override(config, "experiment.seed", std::to_string(*seed));
    config.validate();

    const auto dir = [&](const std::string& command) {
      const std::optional<std::filesystem::path> explicit_dir =
          out_dir ? std::optional<std::filesystem::path>(*out_dir) : std::nullopt;
      return cure::resolve_run_dir(config, explicit_dir, command + "-seed" + std::to_string(config.seed));
    };

    if (show->parsed()) {
      std::cout << cure::to_config_text(config);
      return cure::exit_ok;
    }
    std::filesystem::path run_dir;
    if (train->parsed()) {
      run_dir = dir("train-teacher");
      const auto t = cure::cmd_train_teacher(config, run_dir);
      std::cout << "train accuracy " << fmt(t.teacher.train_accuracy) << " after " << t.teacher.epochs_run
                << " epochs\n";
      if (!t.teacher.converged) std::cerr << "warning: " << t.teacher.diagnostic << "\n";
    } else if (unlearn->parsed()) {
      run_dir = dir("unlearn-" + method);
      const std::optional<std::filesystem::path> ckpt =
          teacher_ckpt ? std::optional<std::filesystem::path>(*teacher_ckpt) : std::nullopt;
      print_report(cure::cmd_unlearn(config, cure::method_from_string(method), run_dir, ckpt).report);
    } else if (evaluate->parsed()) {
      run_dir = dir("evaluate");
      print_report(cure::cmd_evaluate(config, eval_teacher, eval_student, run_dir, own_prototypes));
    } else if (compare->parsed()) {
      run_dir = dir("compare");
      std::cout << cure::cmd_compare(config, run_dir).to_csv();
    } else if (ablate->parsed()) {
      run_dir = dir("ablate");
      std::vector<cure::AblationSpec> specs;
      if (grid) {
        specs = cure::standard_ablation_grid();
      } else {
        cure::AblationSpec spec{label, {disable.begin(), disable.end()}, margin, std::nullopt};
        if (clustering) spec.clustering = cure::clustering_backend_from_string(*clustering);
        specs.push_back(spec);
      }
      std::cout << cure::ablation_csv(cure::cmd_ablate(config, specs, run_dir));
    }
    cure::check_run_manifest(run_dir);
    std::cerr << "run directory: " << run_dir.string() << "\n";
    return cure::exit_ok;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cure::exit_code_for(e);
  }
}
