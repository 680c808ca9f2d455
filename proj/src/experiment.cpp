#include "cure/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cure/errors.hpp"

namespace cure {

namespace fs = std::filesystem;
using nlohmann::json;

PreparedData prepare_data(const ExperimentConfig& config) {
  config.validate();
  PreparedData out;
  out.samples = generate_dataset(config.data);
  const std::uint64_t split_seed = derive_seed(config.seed, 1);
  std::vector<Sample> pair_pool;
  if (config.split == SplitMode::random) {
    out.split = split_random_forget(out.samples, config.forget_fraction, split_seed, config.holdout_fraction);
    pair_pool = out.split.holdout;
  } else {
    out.split = split_quality_forget(out.samples, config.quality_percentile, split_seed, config.holdout_fraction);
    // Only clean holdout samples take part in verification.
    const double cut = quality_percentile(out.split.train(), config.quality_percentile);
    for (const auto& s : out.split.holdout) {
      if (s.quality >= cut) pair_pool.push_back(s);
    }
  }
  if (config.verification_pairs > 0) {
    out.pairs = make_verification_pairs(pair_pool, config.verification_pairs, derive_seed(config.seed, 2));
  }
  return out;
}

DatasetSplit matched_random_split(const ExperimentConfig& config, const PreparedData& data) {
  if (config.split != SplitMode::quality) throw ConfigError("matched_random_split requires split = quality");
  return split_random_samples(data.samples, data.split.forget.size(), derive_seed(config.seed, 1),
                              config.holdout_fraction);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return exit_config;
  if (dynamic_cast<const IoError*>(&e)) return exit_io;
  if (dynamic_cast<const InfeasibleError*>(&e)) return exit_infeasible;
  if (dynamic_cast<const DivergenceError*>(&e)) return exit_divergence;
  if (dynamic_cast<const UndefinedMetricError*>(&e)) return exit_metric;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DegenerateInputError*>(&e) ||
      dynamic_cast<const EmptyInputError*>(&e) || dynamic_cast<const DimensionError*>(&e)) {
    return exit_data;
  }
  return exit_failure;
}

fs::path resolve_run_dir(const ExperimentConfig& config, const std::optional<fs::path>& explicit_dir,
                         const std::string& name) {
  fs::path dir;
  if (explicit_dir) {
    dir = *explicit_dir;
  } else {
    fs::path root = "runs";
    if (!config.output_dir.empty()) {
      root = config.output_dir;
    } else if (const char* env = std::getenv("CURE_OUTPUT_ROOT"); env && *env) {
      root = env;
    }
    dir = root / name;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::vector<std::string> required_run_files() { return {"config.ini", "metrics.csv", "report.json"}; }

void check_run_manifest(const fs::path& run_dir) {
  for (const auto& name : required_run_files()) {
    if (!fs::is_regular_file(run_dir / name)) throw IoError("run directory " + run_dir.string() + " lacks " + name);
  }
}

std::string to_string(Method m) {
  switch (m) {
    case Method::cure: return "cure";
    case Method::neggrad: return "neggrad";
    case Method::badteacher: return "badteacher";
    case Method::oracle: return "oracle";
  }
  return "cure";
}

Method method_from_string(const std::string& s) {
  if (s == "cure") return Method::cure;
  if (s == "neggrad") return Method::neggrad;
  if (s == "badteacher") return Method::badteacher;
  if (s == "oracle") return Method::oracle;
  throw ConfigError("unknown method '" + s + "'");
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_report(const fs::path& run_dir, const ExperimentConfig& config, const json& report) {
  write_json(run_dir / "report.json", report);
  for (const auto& format : config.report_formats) {
    if (format != "csv") continue;
    std::string csv = "key,value\n";
    for (const auto& [key, value] : report.items()) {
      if (value.is_number()) csv += key + "," + num(value.get<double>()) + "\n";
    }
    write_text(run_dir / "report.csv", csv);
  }
}

std::string losses_csv(const std::vector<EpochLoss>& epochs) {
  std::string csv = "epoch,learning_rate,pseudo_label,cos_forget,contrast,cos_retain,feat,fd,forget_total,retain_total,total\n";
  for (const auto& e : epochs) {
    const auto& c = e.mean.components;
    csv += std::to_string(e.epoch) + "," + num(e.learning_rate) + "," + num(c.pseudo_label) + "," + num(c.cos_forget) +
           "," + num(c.contrast) + "," + num(c.cos_retain) + "," + num(c.feat) + "," + num(c.fd) + "," +
           num(e.mean.forget_total) + "," + num(e.mean.retain_total) + "," + num(e.mean.grand_total) + "\n";
  }
  return csv;
}

// Accuracy of a model against fixed teacher prototypes.
struct AccuracyProbe {
  Prototypes prototypes;
  const DatasetSplit* split;
  double scale;

  std::pair<double, double> operator()(const ModelSnapshot& model) const {
    const double f = prototype_accuracy(predict(model, prototypes, split->forget, scale), prototypes, split->forget);
    const double r = prototype_accuracy(predict(model, prototypes, split->retain, scale), prototypes, split->retain);
    return {f, r};
  }
};

TeacherResult obtain_teacher(const ExperimentConfig& config, const PreparedData& data, const fs::path& run_dir,
                             const std::optional<fs::path>& checkpoint) {
  if (checkpoint) {
    TeacherResult t;
    t.model = load_checkpoint(*checkpoint);
    t.converged = true;
    return t;
  }
  TeacherResult t = train_teacher(data.split.train(), config.teacher);
  save_checkpoint(run_dir / "teacher.json", t.model);
  return t;
}

json teacher_json(const TeacherResult& t) {
  return json{{"train_accuracy", t.train_accuracy},
              {"epochs_run", t.epochs_run},
              {"converged", t.converged},
              {"diagnostic", t.diagnostic}};
}

UnlearnResult run_unlearning(Method method, const ModelSnapshot& teacher, const DatasetSplit& split,
                             const UnlearnConfig& config, const UnlearnHooks& hooks) {
  switch (method) {
    case Method::cure: return cure_unlearn(teacher, split, config, hooks);
    case Method::neggrad: return baseline_neggrad(teacher, split, config, hooks);
    case Method::badteacher: return baseline_badteacher(teacher, split, config, hooks);
    case Method::oracle: break;
  }
  throw std::logic_error("run_unlearning: oracle is not an unlearning procedure");
}

EvalOptions options_for(const ExperimentConfig& config, Method method) {
  EvalOptions o = config.eval;
  o.student_prototypes = method == Method::oracle;
  return o;
}

}  // namespace

TeacherArtifacts cmd_train_teacher(const ExperimentConfig& config, const fs::path& run_dir) {
  save_config(run_dir / "config.ini", config);
  const PreparedData data = prepare_data(config);
  TeacherArtifacts out;
  out.teacher = train_teacher(data.split.train(), config.teacher);
  out.checkpoint = run_dir / "teacher.json";
  save_checkpoint(out.checkpoint, out.teacher.model);

  const auto v = data.pairs.empty() ? VerificationResult{} : verification_accuracy(out.teacher.model, data.pairs);
  write_text(run_dir / "metrics.csv", "epochs_run,train_accuracy,verification\n" + std::to_string(out.teacher.epochs_run) +
                                          "," + num(out.teacher.train_accuracy) + "," + num(v.accuracy) + "\n");
  json report = teacher_json(out.teacher);
  report["verification"] = v.accuracy;
  write_report(run_dir, config, report);
  return out;
}

UnlearnArtifacts cmd_unlearn(const ExperimentConfig& config, Method method, const fs::path& run_dir,
                             const std::optional<fs::path>& teacher_checkpoint) {
  save_config(run_dir / "config.ini", config);
  const PreparedData data = prepare_data(config);
  const TeacherResult teacher = obtain_teacher(config, data, run_dir, teacher_checkpoint);
  const fs::path ckpt_dir = run_dir / "checkpoints";
  fs::create_directories(ckpt_dir);

  UnlearnArtifacts out;
  std::string metrics = "epoch,learning_rate,forget_acc,retain_acc\n";
  json extra;
  if (method == Method::oracle) {
    const TeacherResult oracle = retrain_oracle(data.split, config.teacher);
    out.student = oracle.model;
    extra["oracle"] = teacher_json(oracle);
  } else {
    const AccuracyProbe probe{class_prototypes(teacher.model, data.split.train()), &data.split,
                              config.eval.prototype_scale};
    auto checkpoint = [&](const std::string& tag, const ModelSnapshot& m) {
      save_checkpoint(ckpt_dir / ("student_" + tag + ".json"), m);
    };
    {
      const auto [f, r] = probe(teacher.model);
      metrics += "0," + num(0.0) + "," + num(f) + "," + num(r) + "\n";
    }
    checkpoint("epoch0000", teacher.model);
    UnlearnHooks hooks;
    hooks.on_epoch_end = [&](int epoch, const ModelSnapshot& student) {
      const auto [f, r] = probe(student);
      metrics += std::to_string(epoch) + "," + num(config.unlearn.learning_rate_at(epoch)) + "," + num(f) + "," +
                 num(r) + "\n";
      if (epoch % config.unlearn.update_interval == 0) {
        char tag[32];
        std::snprintf(tag, sizeof tag, "epoch%04d", epoch);
        checkpoint(tag, student);
      }
    };
    const UnlearnResult result = run_unlearning(method, teacher.model, data.split, config.unlearn, hooks);
    out.student = result.student;
    write_text(run_dir / "losses.csv", losses_csv(result.epochs));
    if (method == Method::cure) {
      std::ofstream rc(run_dir / "retain_centroids.csv");
      write_centroids_csv(rc, result.retain_clusters);
      std::ofstream fc(run_dir / "forget_centroids.csv");
      write_centroids_csv(fc, result.forget_clusters);
      extra["recomputations"] = result.recomputations;
    }
  }
  save_checkpoint(run_dir / "student.json", out.student);
  out.report = evaluate_all(teacher.model, out.student, data.split, data.pairs, options_for(config, method));
  if (method == Method::oracle) {
    metrics += std::to_string(config.teacher.epochs) + ",," + num(out.report.acc_forget_after) + "," +
               num(out.report.acc_retain_after) + "\n";
  }
  write_text(run_dir / "metrics.csv", metrics);

  json report = out.report;
  report["method"] = to_string(method);
  report["teacher"] = teacher_json(teacher);
  for (const auto& [k, v] : extra.items()) report[k] = v;
  write_report(run_dir, config, report);
  return out;
}

EvaluationReport cmd_evaluate(const ExperimentConfig& config, const fs::path& teacher_checkpoint,
                              const fs::path& student_checkpoint, const fs::path& run_dir, bool student_prototypes) {
  save_config(run_dir / "config.ini", config);
  const PreparedData data = prepare_data(config);
  const ModelSnapshot teacher = load_checkpoint(teacher_checkpoint);
  const ModelSnapshot student = load_checkpoint(student_checkpoint);
  EvalOptions options = config.eval;
  options.student_prototypes = student_prototypes;
  const EvaluationReport report = evaluate_all(teacher, student, data.split, data.pairs, options);
  write_text(run_dir / "metrics.csv",
             "forget_acc_before,forget_acc_after,retain_acc_before,retain_acc_after,ues,verification_before,"
             "verification_after\n" +
                 num(report.acc_forget_before) + "," + num(report.acc_forget_after) + "," +
                 num(report.acc_retain_before) + "," + num(report.acc_retain_after) + "," + num(report.ues) + "," +
                 num(report.verification_before) + "," + num(report.verification_after) + "\n");
  write_report(run_dir, config, json(report));
  return report;
}

const ComparisonRow& ComparisonTable::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw std::out_of_range("comparison table has no row '" + method + "'");
}

std::string ComparisonTable::to_csv() const {
  std::string csv = "method,forget_acc,retain_acc,ues,verification\n";
  for (const auto& r : rows) {
    csv += r.method + "," + num(r.forget_acc) + "," + num(r.retain_acc) + "," + (r.ues ? num(*r.ues) : "") + "," +
           num(r.verification) + "\n";
  }
  return csv;
}

ComparisonTable cmd_compare(const ExperimentConfig& config, const fs::path& run_dir) {
  save_config(run_dir / "config.ini", config);
  const PreparedData data = prepare_data(config);
  const TeacherResult teacher = obtain_teacher(config, data, run_dir, std::nullopt);
  fs::create_directories(run_dir / "models");

  std::vector<Method> methods = {Method::cure};
  for (const auto& b : config.baselines) methods.push_back(method_from_string(b));

  ComparisonTable table;
  table.alpha = config.eval.alpha;
  json reports = json::object();
  std::optional<ComparisonRow> before;
  for (Method m : methods) {
    ModelSnapshot student;
    if (m == Method::oracle) {
      student = retrain_oracle(data.split, config.teacher).model;
    } else {
      student = run_unlearning(m, teacher.model, data.split, config.unlearn, {}).student;
    }
    save_checkpoint(run_dir / "models" / (to_string(m) + ".json"), student);
    const EvaluationReport r = evaluate_all(teacher.model, student, data.split, data.pairs, options_for(config, m));
    reports[to_string(m)] = r;
    if (!before) {
      before = ComparisonRow{"before", r.acc_forget_before, r.acc_retain_before, std::nullopt, r.verification_before};
      table.rows.push_back(*before);
    }
    ComparisonRow row{to_string(m), r.acc_forget_after, r.acc_retain_after, std::nullopt, r.verification_after};
    row.ues = ues({before->forget_acc, row.forget_acc, before->retain_acc, row.retain_acc, table.alpha});
    table.rows.push_back(row);
  }

  const std::string csv = table.to_csv();
  write_text(run_dir / "comparison.csv", csv);
  write_text(run_dir / "metrics.csv", csv);
  json report{{"alpha", table.alpha}, {"teacher", teacher_json(teacher)}, {"methods", reports}};
  write_report(run_dir, config, report);
  return table;
}

std::vector<std::string> loss_term_names() { return {"pseudo_label", "cos_forget", "contrast", "cos_retain", "feat", "fd"}; }

LossWeights disable_terms(LossWeights w, const std::set<std::string>& terms) {
  for (const auto& t : terms) {
    if (t == "pseudo_label" || t == "pl") w.pseudo_label = 0.0;
    else if (t == "cos_forget") w.cos_forget = 0.0;
    else if (t == "contrast") w.contrast = 0.0;
    else if (t == "cos_retain") w.cos_retain = 0.0;
    else if (t == "feat") w.feat = 0.0;
    else if (t == "fd") w.fd = 0.0;
    else throw ConfigError("unknown loss term '" + t + "'");
  }
  return w;
}

std::vector<AblationSpec> standard_ablation_grid() {
  std::vector<AblationSpec> grid = {
      {"A1", {"feat", "fd"}, {}, {}},
      {"A2", {"cos_retain", "fd"}, {}, {}},
      {"A3", {"cos_retain", "feat"}, {}, {}},
      {"A4", {"fd"}, {}, {}},
      {"A5", {"cos_retain"}, {}, {}},
      {"A6", {"feat"}, {}, {}},
      {"A7", {"cos_forget", "contrast"}, {}, {}},
      {"A8", {"pseudo_label", "cos_forget"}, {}, {}},
      {"A9", {"pseudo_label", "contrast"}, {}, {}},
      {"A10", {"contrast"}, {}, {}},
      {"A11", {"pseudo_label"}, {}, {}},
      {"A12", {"cos_forget"}, {}, {}},
  };
  for (double m : {0.0, 0.1, 0.3, 0.6}) grid.push_back({"margin=" + num(m), {}, m, {}});
  grid.push_back({"A13-gmm", {}, {}, ClusteringBackend::gmm});
  grid.push_back({"full", {}, {}, {}});
  return grid;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string csv = "label,disabled,margin,clustering,forget_acc,retain_acc,ues\n";
  for (const auto& r : rows) {
    std::string disabled;
    for (const auto& t : r.spec.disabled) disabled += (disabled.empty() ? "" : ";") + t;
    csv += r.spec.label + "," + disabled + "," + (r.spec.margin ? num(*r.spec.margin) : "") + "," +
           (r.spec.clustering ? to_string(*r.spec.clustering) : "") + "," + num(r.forget_acc) + "," +
           num(r.retain_acc) + "," + num(r.ues) + "\n";
  }
  return csv;
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const std::vector<AblationSpec>& specs,
                                    const fs::path& run_dir) {
  save_config(run_dir / "config.ini", config);
  const PreparedData data = prepare_data(config);
  const TeacherResult teacher = obtain_teacher(config, data, run_dir, std::nullopt);
  std::vector<AblationRow> rows;
  json reports = json::array();
  for (const auto& spec : specs) {
    UnlearnConfig uc = config.unlearn;
    uc.weights = disable_terms(uc.weights, spec.disabled);
    if (spec.margin) uc.margin = *spec.margin;
    if (spec.clustering) uc.clustering = *spec.clustering;
    const UnlearnResult result = cure_unlearn(teacher.model, data.split, uc);
    const EvaluationReport r = evaluate_all(teacher.model, result.student, data.split, data.pairs, config.eval);
    rows.push_back({spec, r.acc_forget_after, r.acc_retain_after, r.ues});
    json entry = r;
    entry["label"] = spec.label;
    reports.push_back(entry);
  }
  const std::string csv = ablation_csv(rows);
  write_text(run_dir / "ablation.csv", csv);
  write_text(run_dir / "metrics.csv", csv);
  write_report(run_dir, config, json{{"teacher", teacher_json(teacher)}, {"rows", reports}});
  return rows;
}

}  // namespace cure
