#include "cure/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "cure/errors.hpp"

namespace cure {

std::string to_string(PseudoLabelSpace space) { return space == PseudoLabelSpace::teacher ? "teacher" : "student"; }

PseudoLabelSpace pseudo_label_space_from_string(const std::string& s) {
  if (s == "teacher") return PseudoLabelSpace::teacher;
  if (s == "student") return PseudoLabelSpace::student;
  throw ConfigError("unknown pseudo-label space '" + s + "'");
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  // splitmix64 over (root, stream)
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void TeacherConfig::validate() const {
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be positive");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
  }
  if (epochs < 0) throw ConfigError("teacher epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("teacher batch size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("teacher learning rate must be positive");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) throw ConfigError("target accuracy must lie in [0, 1]");
  MarginSpec{0.3, 1.0, arc_margin, scale}.validate();
}

void UnlearnConfig::validate() const {
  if (clusters < 1) throw ConfigError("K must be at least 1");
  if (update_interval < 1) throw ConfigError("update interval must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(freeze_fraction >= 0.0 && freeze_fraction <= 1.0)) throw ConfigError("freeze fraction must lie in [0, 1]");
  if (!(baseline_forget_weight >= 0.0 && baseline_retain_weight >= 0.0)) {
    throw ConfigError("baseline weights must be non-negative");
  }
  weights.validate();
  MarginSpec{margin, temperature, 0.0, 1.0}.validate();
}

double UnlearnConfig::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (int milestone : {epochs / 10, epochs / 5}) {
    if (milestone > 0 && epoch > milestone) lr *= 0.1;
  }
  return lr;
}

namespace {

// Trainable slots of an extractor: weight and bias of every unfrozen layer.
struct ExtractorSlots {
  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> grads;
};

ExtractorSlots trainable_slots(FeatureExtractor& ex, const Gradients& grads) {
  ExtractorSlots s;
  for (std::size_t l = 0; l < ex.num_groups(); ++l) {
    if (ex.frozen(l)) continue;
    s.params.push_back(flat_view(ex.layer(l).weight));
    s.params.push_back(flat_view(ex.layer(l).bias));
    s.grads.push_back(flat_view(grads[l].weight));
    s.grads.push_back(flat_view(grads[l].bias));
  }
  return s;
}

void accumulate(Gradients& into, const Gradients& add) {
  for (std::size_t l = 0; l < into.size(); ++l) {
    into[l].weight += add[l].weight;
    into[l].bias += add[l].bias;
  }
}

bool any_trainable(const FeatureExtractor& ex) {
  for (std::size_t l = 0; l < ex.num_groups(); ++l) {
    if (!ex.frozen(l)) return true;
  }
  return false;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// Retain batches walk a per-epoch shuffle; forget batches cycle through their
// own shuffle and reshuffle on wrap-around.
class BatchSampler {
 public:
  BatchSampler(std::size_t n_forget, std::size_t n_retain, int batch_size, std::uint64_t seed)
      : forget_order_(n_forget), retain_order_(n_retain), batch_(static_cast<std::size_t>(batch_size)), rng_(seed) {
    std::iota(forget_order_.begin(), forget_order_.end(), 0);
    std::iota(retain_order_.begin(), retain_order_.end(), 0);
    std::shuffle(forget_order_.begin(), forget_order_.end(), rng_);
  }

  int steps_per_epoch() const {
    return static_cast<int>((retain_order_.size() + batch_ - 1) / batch_);
  }

  void start_epoch() {
    std::shuffle(retain_order_.begin(), retain_order_.end(), rng_);
    retain_cursor_ = 0;
  }

  std::vector<std::size_t> next_retain() {
    const auto end = std::min(retain_cursor_ + batch_, retain_order_.size());
    std::vector<std::size_t> out(retain_order_.begin() + static_cast<std::ptrdiff_t>(retain_cursor_),
                                 retain_order_.begin() + static_cast<std::ptrdiff_t>(end));
    retain_cursor_ = end;
    return out;
  }

  std::vector<std::size_t> next_forget() {
    std::vector<std::size_t> out;
    const auto want = std::min(batch_, forget_order_.size());
    while (out.size() < want) {
      if (forget_cursor_ == forget_order_.size()) {
        std::shuffle(forget_order_.begin(), forget_order_.end(), rng_);
        forget_cursor_ = 0;
      }
      out.push_back(forget_order_[forget_cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> forget_order_;
  std::vector<std::size_t> retain_order_;
  std::size_t batch_;
  std::size_t forget_cursor_ = 0;
  std::size_t retain_cursor_ = 0;
  std::mt19937_64 rng_;
};

void check_split(const DatasetSplit& split) {
  if (split.forget.empty()) throw EmptyInputError("unlearning needs a non-empty forget set");
  if (split.retain.empty()) throw EmptyInputError("unlearning needs a non-empty retain set");
}

ModelSnapshot initial_student(const ModelSnapshot& teacher, double freeze_fraction) {
  ModelSnapshot student = freeze_early_layers(teacher, freeze_fraction);
  student.role = ModelRole::student;
  return student;
}

void guard(double loss, double limit) {
  if (!std::isfinite(loss) || std::abs(loss) > limit) {
    std::ostringstream msg;
    msg << "training diverged: loss " << loss << " exceeds limit " << limit;
    throw DivergenceError(msg.str());
  }
}

void add_scaled(LossBreakdown& into, const LossBreakdown& b, double s) {
  into.components.pseudo_label += s * b.components.pseudo_label;
  into.components.cos_forget += s * b.components.cos_forget;
  into.components.contrast += s * b.components.contrast;
  into.components.cos_retain += s * b.components.cos_retain;
  into.components.feat += s * b.components.feat;
  into.components.fd += s * b.components.fd;
  into.forget_total += s * b.forget_total;
  into.retain_total += s * b.retain_total;
  into.grand_total += s * b.grand_total;
}

}  // namespace

TeacherResult train_teacher(std::span<const Sample> train, const TeacherConfig& config) {
  config.validate();
  if (train.empty()) throw EmptyInputError("train_teacher: empty training set");
  std::map<int, int> column_of;
  for (const auto& s : train) column_of.emplace(s.identity, 0);
  if (column_of.size() < 2) throw DataError("train_teacher: needs at least two identities");

  TeacherResult result;
  for (auto& [identity, column] : column_of) {
    column = static_cast<int>(result.class_identities.size());
    result.class_identities.push_back(identity);
  }
  const int n_classes = static_cast<int>(result.class_identities.size());
  const Matrix inputs = stack_inputs(train);
  std::vector<int> labels;
  for (const auto& s : train) labels.push_back(column_of.at(s.identity));

  std::vector<int> sizes{static_cast<int>(inputs.cols())};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(config.embedding_dim);
  ModelSnapshot model{FeatureExtractor(sizes, derive_seed(config.seed, 1)), ModelRole::teacher};

  // Raw class weights; normalized columns feed the margin loss.
  Matrix raw_weights = ClassifierHead::random(config.embedding_dim, n_classes, 1.0, derive_seed(config.seed, 2)).weight;

  Optimizer opt({config.optimizer, config.learning_rate, config.momentum, config.weight_decay});
  std::mt19937_64 rng(derive_seed(config.seed, 3));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double lr = config.learning_rate;
    if (epoch > config.epochs / 2) lr *= 0.1;
    if (epoch > (3 * config.epochs) / 4) lr *= 0.1;
    opt.set_learning_rate(lr);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto end = std::min(start + batch, order.size());
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> y;
      for (auto r : rows) y.push_back(labels[r]);

      const ForwardCache cache = model.extractor.forward(gather_rows(inputs, rows));
      const Vector col_norms = raw_weights.colwise().norm().transpose();
      const Matrix w = raw_weights * col_norms.cwiseInverse().asDiagonal();
      const AngularLossValue loss = angular_margin_loss(cache.embeddings, y, w, config.arc_margin, config.scale);
      guard(loss.value, 1e6);

      Gradients grads = model.extractor.backward(cache, loss.grad_embeddings);
      // Through column normalization: dW_raw = (G - w diag(w^T G)) / |W_raw|
      const Vector radial = w.cwiseProduct(loss.grad_class_weights).colwise().sum().transpose();
      Matrix grad_raw = (loss.grad_class_weights - w * radial.asDiagonal()) * col_norms.cwiseInverse().asDiagonal();

      ExtractorSlots slots = trainable_slots(model.extractor, grads);
      slots.params.push_back(flat_view(raw_weights));
      slots.grads.push_back(flat_view(grad_raw));
      opt.step(slots.params, slots.grads);
    }
    result.epochs_run = epoch;
  }

  const Vector col_norms = raw_weights.colwise().norm().transpose();
  result.class_weights = raw_weights * col_norms.cwiseInverse().asDiagonal();
  const Matrix cosines = model.extractor.embed(inputs) * result.class_weights;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < cosines.rows(); ++i) {
    Eigen::Index best = 0;
    cosines.row(i).maxCoeff(&best);
    if (static_cast<int>(best) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
  result.converged = result.train_accuracy >= config.target_accuracy;
  if (!result.converged) {
    std::ostringstream msg;
    msg << "teacher reached train accuracy " << result.train_accuracy << " after " << result.epochs_run
        << " epochs, below the target " << config.target_accuracy;
    result.diagnostic = msg.str();
  }
  result.model = std::move(model);
  return result;
}

TeacherResult retrain_oracle(const DatasetSplit& split, const TeacherConfig& config) {
  if (split.retain.empty()) throw EmptyInputError("retrain_oracle: empty retain set");
  TeacherResult r = train_teacher(split.retain, config);
  r.model.role = ModelRole::student;
  return r;
}

UnlearnResult cure_unlearn(const ModelSnapshot& teacher, const DatasetSplit& split, const UnlearnConfig& config,
                           const UnlearnHooks& hooks) {
  config.validate();
  check_split(split);
  UnlearnResult result;
  result.student = initial_student(teacher, config.freeze_fraction);

  const Matrix forget_inputs = stack_inputs(split.forget);
  const Matrix retain_inputs = stack_inputs(split.retain);
  const Matrix teacher_forget = teacher.extractor.embed(forget_inputs);
  const Matrix teacher_retain = teacher.extractor.embed(retain_inputs);

  const int K = config.clusters;
  const auto fit = [&](const Matrix& points, std::uint64_t seed) {
    return config.clustering == ClusteringBackend::kmeans ? kmeans_fit(points, K, seed) : gmm_fit(points, K, seed);
  };
  result.retain_clusters = fit(teacher_retain, derive_seed(config.seed, 10));
  result.retain_clusters.source = ClusterSource::retain;
  const Matrix fixed_retain_centroids = result.retain_clusters.centroids;
  result.forget_clusters = fit(teacher_forget, derive_seed(config.seed, 11));
  result.forget_clusters.source = ClusterSource::forget;
  result.mapping = farthest_cluster_mapping(result.forget_clusters);

  std::vector<int> targets = assign_pseudo_labels(teacher_forget, result.forget_clusters, result.mapping).target;
  const std::vector<int> nearest_retain = assign_all(teacher_forget, fixed_retain_centroids);

  if (config.epochs == 0 || config.weights.all_zero()) return result;

  int head_version = 0;
  ClassifierHead head = ClassifierHead::random(teacher.extractor.embedding_dim(), K, config.head_init_std,
                                               derive_seed(config.seed, 100 + head_version));
  const OptimizerSettings settings{config.optimizer, config.learning_rate, config.momentum, config.weight_decay};
  Optimizer extractor_opt(settings);
  Optimizer head_opt(settings);
  BatchSampler sampler(split.forget.size(), split.retain.size(), config.batch_size, derive_seed(config.seed, 12));
  const LossWeights& w = config.weights;
  const bool train_extractor = any_trainable(result.student.extractor);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.learning_rate_at(epoch);
    extractor_opt.set_learning_rate(lr);
    head_opt.set_learning_rate(lr);
    sampler.start_epoch();
    LossBreakdown epoch_sum;
    const int steps = sampler.steps_per_epoch();
    for (int step = 0; step < steps; ++step) {
      const auto f_rows = sampler.next_forget();
      const auto r_rows = sampler.next_retain();
      std::vector<int> batch_targets;
      std::vector<int> batch_nearest;
      for (auto r : f_rows) {
        batch_targets.push_back(targets[r]);
        batch_nearest.push_back(nearest_retain[r]);
      }
      const Matrix tf = gather_rows(teacher_forget, f_rows);
      const Matrix tr = gather_rows(teacher_retain, r_rows);
      const ForwardCache fc = result.student.extractor.forward(gather_rows(forget_inputs, f_rows));
      const ForwardCache rc = result.student.extractor.forward(gather_rows(retain_inputs, r_rows));

      const HeadLossValue pl = pseudo_label_loss(fc.embeddings, head, batch_targets, config.temperature);
      const LossValue cf = cosine_forget_loss(fc.embeddings, tf);
      const LossValue ct = contrastive_forget_loss(fc.embeddings, tf, fixed_retain_centroids, batch_nearest, config.margin);
      const LossValue cr = cosine_retain_loss(rc.embeddings, tr);
      const LossValue fm = feature_matching_loss(rc.embeddings, tr);
      const LossValue fd = feature_distribution_loss(rc.embeddings, tr, config.temperature);

      const LossBreakdown breakdown =
          grand_total({pl.value, cf.value, ct.value, cr.value, fm.value, fd.value}, w);
      guard(breakdown.grand_total, config.divergence_limit);

      const Matrix grad_f = w.pseudo_label * pl.grad_student + w.cos_forget * cf.grad_student +
                            w.contrast * ct.grad_student;
      const Matrix grad_r = w.cos_retain * cr.grad_student + w.feat * fm.grad_student + w.fd * fd.grad_student;

      if (train_extractor) {
        Gradients grads = result.student.extractor.backward(fc, grad_f);
        accumulate(grads, result.student.extractor.backward(rc, grad_r));
        const ExtractorSlots slots = trainable_slots(result.student.extractor, grads);
        extractor_opt.step(slots.params, slots.grads);
      }
      if (w.pseudo_label > 0.0) {
        const Matrix gw = w.pseudo_label * pl.grad_weight;
        const Vector gb = w.pseudo_label * pl.grad_bias;
        const std::vector<std::span<double>> hp{flat_view(head.weight), flat_view(head.bias)};
        const std::vector<std::span<const double>> hg{flat_view(gw), flat_view(gb)};
        head_opt.step(hp, hg);
      }

      add_scaled(epoch_sum, breakdown, 1.0 / steps);
      if (hooks.on_step) hooks.on_step(epoch, step, breakdown);
    }
    result.epochs.push_back({epoch, lr, epoch_sum});

    if (epoch % config.update_interval == 0) {
      if (result.retain_clusters.centroids != fixed_retain_centroids) {
        throw std::logic_error("retain centroids changed during unlearning");
      }
      ForgetClustering refit = recompute_forget_clusters(result.student, forget_inputs, K,
                                                         derive_seed(config.seed, 1000 + epoch), config.clustering);
      result.forget_clusters = std::move(refit.model);
      result.mapping = std::move(refit.mapping);
      const Matrix& space = config.pseudo_label_space == PseudoLabelSpace::student
                                ? result.student.extractor.embed(forget_inputs)
                                : teacher_forget;
      targets = assign_pseudo_labels(space, result.forget_clusters, result.mapping).target;
      ++result.recomputations;
      if (config.reinit_head_on_recompute) {
        ++head_version;
        head = ClassifierHead::random(teacher.extractor.embedding_dim(), K, config.head_init_std,
                                      derive_seed(config.seed, 100 + head_version));
        head_opt = Optimizer(settings);
        head_opt.set_learning_rate(lr);
      }
      if (hooks.on_recompute) hooks.on_recompute(epoch, result.forget_clusters, result.retain_clusters);
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, result.student);
  }
  return result;
}

namespace {

// Shared scaffolding for the baselines: per step, `step_fn` receives forward
// caches of the forget and retain batches and returns (loss, grad_f, grad_r)
// pairs to apply, possibly more than one update per step.
struct BaselineUpdate {
  enum class Side { forget, retain, both } side;
  double loss;
  Matrix grad_forget;
  Matrix grad_retain;
};

template <typename StepFn>
UnlearnResult run_baseline(const ModelSnapshot& teacher, const DatasetSplit& split, const UnlearnConfig& config,
                           const UnlearnHooks& hooks, StepFn step_fn) {
  config.validate();
  check_split(split);
  UnlearnResult result;
  result.student = initial_student(teacher, config.freeze_fraction);
  if (config.epochs == 0 || (config.baseline_forget_weight == 0.0 && config.baseline_retain_weight == 0.0) ||
      !any_trainable(result.student.extractor)) {
    return result;
  }
  const Matrix forget_inputs = stack_inputs(split.forget);
  const Matrix retain_inputs = stack_inputs(split.retain);
  const Matrix teacher_forget = teacher.extractor.embed(forget_inputs);
  const Matrix teacher_retain = teacher.extractor.embed(retain_inputs);

  Optimizer opt({config.optimizer, config.learning_rate, config.momentum, config.weight_decay});
  BatchSampler sampler(split.forget.size(), split.retain.size(), config.batch_size, derive_seed(config.seed, 12));
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.learning_rate_at(epoch);
    opt.set_learning_rate(lr);
    sampler.start_epoch();
    LossBreakdown epoch_sum;
    const int steps = sampler.steps_per_epoch();
    for (int step = 0; step < steps; ++step) {
      const auto f_rows = sampler.next_forget();
      const auto r_rows = sampler.next_retain();
      const Matrix xf = gather_rows(forget_inputs, f_rows);
      const Matrix xr = gather_rows(retain_inputs, r_rows);
      const Matrix tf = gather_rows(teacher_forget, f_rows);
      const Matrix tr = gather_rows(teacher_retain, r_rows);
      LossBreakdown step_total;
      for (int phase = 0;; ++phase) {
        const ForwardCache fc = result.student.extractor.forward(xf);
        const ForwardCache rc = result.student.extractor.forward(xr);
        auto update = step_fn(phase, fc, rc, tf, tr, f_rows);
        if (!update) break;
        guard(update->loss, config.divergence_limit);
        Gradients grads = result.student.extractor.zero_gradients();
        if (update->side != BaselineUpdate::Side::retain) accumulate(grads, result.student.extractor.backward(fc, update->grad_forget));
        if (update->side != BaselineUpdate::Side::forget) accumulate(grads, result.student.extractor.backward(rc, update->grad_retain));
        const ExtractorSlots slots = trainable_slots(result.student.extractor, grads);
        opt.step(slots.params, slots.grads);
        step_total.grand_total += update->loss;
        (update->side == BaselineUpdate::Side::retain ? step_total.retain_total : step_total.forget_total) += update->loss;
      }
      add_scaled(epoch_sum, step_total, 1.0 / steps);
      if (hooks.on_step) hooks.on_step(epoch, step, step_total);
    }
    result.epochs.push_back({epoch, lr, epoch_sum});
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, result.student);
  }
  return result;
}

}  // namespace

UnlearnResult baseline_neggrad(const ModelSnapshot& teacher, const DatasetSplit& split, const UnlearnConfig& config,
                               const UnlearnHooks& hooks) {
  const double wf = config.baseline_forget_weight;
  const double wr = config.baseline_retain_weight;
  return run_baseline(teacher, split, config, hooks,
                      [&](int phase, const ForwardCache& fc, const ForwardCache& rc, const Matrix& tf,
                          const Matrix& tr, std::span<const std::size_t>) -> std::optional<BaselineUpdate> {
                        if (phase == 0 && wf > 0.0) {
                          const LossValue fm = feature_matching_loss(fc.embeddings, tf);
                          return BaselineUpdate{BaselineUpdate::Side::forget, -wf * fm.value, -wf * fm.grad_student, {}};
                        }
                        const int retain_phase = wf > 0.0 ? 1 : 0;
                        if (phase == retain_phase && wr > 0.0) {
                          const LossValue fm = feature_matching_loss(rc.embeddings, tr);
                          return BaselineUpdate{BaselineUpdate::Side::retain, wr * fm.value, {}, wr * fm.grad_student};
                        }
                        return std::nullopt;
                      });
}

UnlearnResult baseline_badteacher(const ModelSnapshot& teacher, const DatasetSplit& split,
                                  const UnlearnConfig& config, const UnlearnHooks& hooks) {
  const FeatureExtractor incompetent(teacher.extractor.layer_sizes(), derive_seed(config.seed, 20));
  const Matrix bad_forget = split.forget.empty() ? Matrix() : incompetent.embed(stack_inputs(split.forget));
  const double wf = config.baseline_forget_weight;
  const double wr = config.baseline_retain_weight;
  const double t = config.temperature;
  return run_baseline(teacher, split, config, hooks,
                      [&](int phase, const ForwardCache& fc, const ForwardCache& rc, const Matrix&, const Matrix& tr,
                          std::span<const std::size_t> f_rows) -> std::optional<BaselineUpdate> {
                        if (phase > 0) return std::nullopt;
                        const Matrix bf = gather_rows(bad_forget, f_rows);
                        const LossValue kl_f = feature_distribution_loss(fc.embeddings, bf, t);
                        const LossValue fm_f = feature_matching_loss(fc.embeddings, bf);
                        const LossValue kl_r = feature_distribution_loss(rc.embeddings, tr, t);
                        const LossValue fm_r = feature_matching_loss(rc.embeddings, tr);
                        return BaselineUpdate{BaselineUpdate::Side::both,
                                              wf * (kl_f.value + fm_f.value) + wr * (kl_r.value + fm_r.value),
                                              wf * (kl_f.grad_student + fm_f.grad_student),
                                              wr * (kl_r.grad_student + fm_r.grad_student)};
                      });
}

}  // namespace cure
