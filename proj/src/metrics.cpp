#include "cure/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "cure/errors.hpp"

namespace cure {

namespace {

constexpr double kSumTolerance = 1e-9;

void require_nonempty(const PredictionDump& d, const char* what) {
  if (d.size() == 0 || d.probabilities.rows() == 0) throw EmptyInputError(std::string(what) + ": empty prediction dump");
}

void require_paired(const PredictionDump& a, const PredictionDump& b, const char* what) {
  require_nonempty(a, what);
  if (a.ids != b.ids) throw DimensionError(std::string(what) + ": dumps cover different samples");
  if (a.probabilities.cols() != b.probabilities.cols()) {
    throw DimensionError(std::string(what) + ": dumps have different class counts");
  }
}

Matrix softmax_rows(const Matrix& z) {
  const Vector max = z.rowwise().maxCoeff();
  Matrix e = (z.colwise() - max).array().exp().matrix();
  const Vector s = e.rowwise().sum();
  return s.cwiseInverse().asDiagonal() * e;
}

}  // namespace

PredictionDump PredictionDump::from_probabilities(Matrix probabilities, std::vector<std::int64_t> ids) {
  if (static_cast<Eigen::Index>(ids.size()) != probabilities.rows()) {
    throw DimensionError("prediction dump: one id per row required");
  }
  PredictionDump d;
  d.top3.reserve(ids.size());
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    std::vector<int> order(static_cast<std::size_t>(probabilities.cols()));
    std::iota(order.begin(), order.end(), 0);
    const auto n_top = std::min<std::size_t>(3, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_top), order.end(),
                      [&](int a, int b) {
                        const double pa = probabilities(i, a);
                        const double pb = probabilities(i, b);
                        return pa != pb ? pa > pb : a < b;
                      });
    std::array<int, 3> top{-1, -1, -1};
    for (std::size_t k = 0; k < n_top; ++k) top[k] = order[k];
    d.top3.push_back(top);
  }
  d.probabilities = std::move(probabilities);
  d.ids = std::move(ids);
  return d;
}

double ues(const UESInputs& in) {
  if (!(in.acc_forget_before > 0.0) || !(in.acc_retain_before > 0.0)) {
    throw UndefinedMetricError("UES: accuracy before unlearning must be positive");
  }
  if (!(in.alpha >= 0.0 && in.alpha <= 1.0)) throw ConfigError("UES: alpha must lie in [0, 1]");
  const double forget_drop = (in.acc_forget_before - in.acc_forget_after) / in.acc_forget_before;
  const double retain_drop = (in.acc_retain_before - in.acc_retain_after) / in.acc_retain_before;
  return in.alpha * forget_drop - (1.0 - in.alpha) * retain_drop;
}

double confidence(const PredictionDump& dump) {
  require_nonempty(dump, "confidence");
  return dump.probabilities.rowwise().maxCoeff().mean();
}

double entropy(const PredictionDump& dump) {
  require_nonempty(dump, "entropy");
  const auto& p = dump.probabilities;
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (std::abs(p.row(i).sum() - 1.0) > kSumTolerance) {
      throw DataError("entropy: probability row does not sum to one");
    }
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double v = p(i, j);
      if (v < 0.0 || v > 1.0) throw DataError("entropy: probability outside [0, 1]");
      if (v > 0.0) total -= v * std::log(v);
    }
  }
  return total / static_cast<double>(p.rows());
}

double activation_distance(const PredictionDump& before, const PredictionDump& after) {
  require_paired(before, after, "activation_distance");
  return (before.probabilities - after.probabilities).rowwise().norm().mean();
}

double layerwise_distance(const ModelSnapshot& before, const ModelSnapshot& after) {
  const auto& a = before.extractor;
  const auto& b = after.extractor;
  if (a.layer_sizes() != b.layer_sizes()) throw DimensionError("layerwise_distance: architecture mismatch");
  double total = 0.0;
  for (std::size_t g = 0; g < a.num_groups(); ++g) {
    const double w = (a.layer(g).weight - b.layer(g).weight).squaredNorm();
    const double c = (a.layer(g).bias - b.layer(g).bias).squaredNorm();
    total += std::sqrt(w + c);
  }
  return total / static_cast<double>(a.num_groups());
}

double completeness(const PredictionDump& before, const PredictionDump& after) {
  require_paired(before, after, "completeness");
  if (before.num_classes() < 3) throw UndefinedMetricError("completeness: needs at least three classes");
  double total = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& x = before.top3[i];
    const auto& y = after.top3[i];
    int shared = 0;
    for (int a : x) shared += static_cast<int>(std::count(y.begin(), y.end(), a));
    total += static_cast<double>(shared) / static_cast<double>(6 - shared);
  }
  return total / static_cast<double>(before.size());
}

double membership_recall(const PredictionDump& dump, double threshold) {
  require_nonempty(dump, "membership_recall");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("membership threshold must lie in (0, 1)");
  const Vector maxes = dump.probabilities.rowwise().maxCoeff();
  return static_cast<double>((maxes.array() > threshold).count()) / static_cast<double>(maxes.size());
}

VerificationResult verification_from_scores(std::span<const double> scores, const std::vector<bool>& same) {
  if (scores.size() != same.size()) throw DimensionError("verification: one label per score required");
  if (scores.empty()) throw EmptyInputError("verification: no pairs");
  const auto n = scores.size();
  const auto positives = static_cast<std::size_t>(std::count(same.begin(), same.end(), true));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Threshold at sorted position i: pairs at positions >= i are called "same".
  // Position n means every pair is called "different".
  std::size_t correct_below_neg = 0;  // negatives strictly below the threshold
  std::size_t pos_below = 0;
  std::size_t best_correct = 0;
  double best_threshold = std::numeric_limits<double>::infinity();
  bool have_best = false;
  std::size_t i = 0;
  while (i <= n) {
    const std::size_t correct = correct_below_neg + (positives - pos_below);
    const double thr = i < n ? scores[order[i]] : std::numeric_limits<double>::infinity();
    if (!have_best || correct > best_correct) {
      best_correct = correct;
      best_threshold = thr;
      have_best = true;
    }
    if (i == n) break;
    // advance past all ties at this score
    const double s = scores[order[i]];
    while (i < n && scores[order[i]] == s) {
      if (same[order[i]]) {
        ++pos_below;
      } else {
        ++correct_below_neg;
      }
      ++i;
    }
  }
  return {static_cast<double>(best_correct) / static_cast<double>(n), best_threshold, 2 * positives == n};
}

VerificationResult verification_accuracy(const ModelSnapshot& model, std::span<const VerificationPair> pairs) {
  if (pairs.empty()) throw EmptyInputError("verification: no pairs");
  Matrix a(static_cast<Eigen::Index>(pairs.size()), model.extractor.input_dim());
  Matrix b(a.rows(), a.cols());
  std::vector<bool> same_vec;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) = pairs[i].first.input.transpose();
    b.row(static_cast<Eigen::Index>(i)) = pairs[i].second.input.transpose();
    same_vec.push_back(pairs[i].same);
  }
  const Matrix ea = model.extractor.embed(a);
  const Matrix eb = model.extractor.embed(b);
  const Vector sims = ea.cwiseProduct(eb).rowwise().sum();
  std::vector<double> scores(sims.data(), sims.data() + sims.size());
  return verification_from_scores(scores, same_vec);
}

int Prototypes::row_of(int identity) const {
  const auto it = std::find(identities.begin(), identities.end(), identity);
  return it == identities.end() ? -1 : static_cast<int>(it - identities.begin());
}

Prototypes class_prototypes(const ModelSnapshot& model, std::span<const Sample> samples) {
  const Matrix e = extract_embeddings(model, samples);
  std::map<int, std::pair<Vector, int>> sums;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [it, inserted] = sums.try_emplace(samples[i].identity, Vector::Zero(e.cols()), 0);
    it->second.first += e.row(static_cast<Eigen::Index>(i)).transpose();
    ++it->second.second;
  }
  Prototypes p;
  p.directions.resize(static_cast<Eigen::Index>(sums.size()), e.cols());
  Eigen::Index row = 0;
  for (const auto& [identity, acc] : sums) {
    p.directions.row(row++) = l2_normalize(acc.first / acc.second).transpose();
    p.identities.push_back(identity);
  }
  return p;
}

PredictionDump predict(const ModelSnapshot& model, const Prototypes& prototypes, std::span<const Sample> samples,
                       double scale) {
  if (!(scale > 0.0)) throw ConfigError("prototype scale must be positive");
  const Matrix e = extract_embeddings(model, samples);
  std::vector<std::int64_t> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  return PredictionDump::from_probabilities(softmax_rows(scale * e * prototypes.directions.transpose()), std::move(ids));
}

double prototype_accuracy(const PredictionDump& dump, const Prototypes& prototypes, std::span<const Sample> samples) {
  require_nonempty(dump, "prototype_accuracy");
  if (dump.size() != samples.size()) throw DimensionError("prototype_accuracy: dump/sample count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (dump.top3[i][0] >= 0 && prototypes.identities[static_cast<std::size_t>(dump.top3[i][0])] == samples[i].identity) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

// Re-expresses a dump over `from` prototypes in the column order of `to`;
// classes missing from `from` get probability zero.
PredictionDump align_dump(const PredictionDump& dump, const Prototypes& from, const Prototypes& to) {
  Matrix probs = Matrix::Zero(dump.probabilities.rows(), static_cast<Eigen::Index>(to.identities.size()));
  for (std::size_t c = 0; c < from.identities.size(); ++c) {
    const int target = to.row_of(from.identities[c]);
    if (target < 0) throw DimensionError("align_dump: student class absent from the teacher class set");
    probs.col(target) = dump.probabilities.col(static_cast<Eigen::Index>(c));
  }
  return PredictionDump::from_probabilities(std::move(probs), dump.ids);
}

}  // namespace

EvaluationReport evaluate_all(const ModelSnapshot& teacher, const ModelSnapshot& student, const DatasetSplit& split,
                              std::span<const VerificationPair> pairs, const EvalOptions& options) {
  if (split.forget.empty() || split.retain.empty()) throw EmptyInputError("evaluate_all: forget and retain must be non-empty");
  const std::vector<Sample> train = split.train();
  const Prototypes teacher_protos = class_prototypes(teacher, train);
  const Prototypes student_protos =
      options.student_prototypes ? class_prototypes(student, split.retain) : teacher_protos;

  const PredictionDump tf = predict(teacher, teacher_protos, split.forget, options.prototype_scale);
  const PredictionDump tr = predict(teacher, teacher_protos, split.retain, options.prototype_scale);
  const PredictionDump sf_raw = predict(student, student_protos, split.forget, options.prototype_scale);
  const PredictionDump sr_raw = predict(student, student_protos, split.retain, options.prototype_scale);

  EvaluationReport r;
  r.alpha = options.alpha;
  r.acc_forget_before = prototype_accuracy(tf, teacher_protos, split.forget);
  r.acc_retain_before = prototype_accuracy(tr, teacher_protos, split.retain);
  r.acc_forget_after = prototype_accuracy(sf_raw, student_protos, split.forget);
  r.acc_retain_after = prototype_accuracy(sr_raw, student_protos, split.retain);
  r.ues = ues({r.acc_forget_before, r.acc_forget_after, r.acc_retain_before, r.acc_retain_after, options.alpha});

  const PredictionDump sf = options.student_prototypes ? align_dump(sf_raw, student_protos, teacher_protos) : sf_raw;
  const PredictionDump sr = options.student_prototypes ? align_dump(sr_raw, student_protos, teacher_protos) : sr_raw;
  r.conf_drop_forget = confidence(tf) - confidence(sf);
  r.ent_inc_forget = entropy(sf) - entropy(tf);
  r.conf_drop_retain = confidence(tr) - confidence(sr);
  r.ent_inc_retain = entropy(sr) - entropy(tr);
  r.activation_distance = activation_distance(tf, sf);
  r.layerwise_distance = layerwise_distance(teacher, student);
  if (teacher_protos.identities.size() >= 3) {
    r.completeness = completeness(tf, sf);
  } else {
    r.warnings.push_back("completeness undefined with fewer than three classes");
  }
  r.membership_recall_before = membership_recall(tf, options.membership_threshold);
  r.membership_recall_after = membership_recall(sf, options.membership_threshold);

  if (pairs.empty()) {
    r.warnings.push_back("no verification pairs supplied");
  } else {
    const auto before = verification_accuracy(teacher, pairs);
    const auto after = verification_accuracy(student, pairs);
    r.verification_before = before.accuracy;
    r.verification_after = after.accuracy;
    if (!before.balanced) r.warnings.push_back("verification pairs are not balanced");
  }
  return r;
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  j = nlohmann::json{
      {"acc_forget_before", r.acc_forget_before},
      {"acc_forget_after", r.acc_forget_after},
      {"acc_retain_before", r.acc_retain_before},
      {"acc_retain_after", r.acc_retain_after},
      {"alpha", r.alpha},
      {"ues", r.ues},
      {"conf_drop_forget", r.conf_drop_forget},
      {"ent_inc_forget", r.ent_inc_forget},
      {"conf_drop_retain", r.conf_drop_retain},
      {"ent_inc_retain", r.ent_inc_retain},
      {"activation_distance", r.activation_distance},
      {"layerwise_distance", r.layerwise_distance},
      {"completeness", r.completeness},
      {"membership_recall_before", r.membership_recall_before},
      {"membership_recall_after", r.membership_recall_after},
      {"verification_before", r.verification_before},
      {"verification_after", r.verification_after},
      {"warnings", r.warnings},
  };
}

void from_json(const nlohmann::json& j, EvaluationReport& r) {
  j.at("acc_forget_before").get_to(r.acc_forget_before);
  j.at("acc_forget_after").get_to(r.acc_forget_after);
  j.at("acc_retain_before").get_to(r.acc_retain_before);
  j.at("acc_retain_after").get_to(r.acc_retain_after);
  j.at("alpha").get_to(r.alpha);
  j.at("ues").get_to(r.ues);
  j.at("conf_drop_forget").get_to(r.conf_drop_forget);
  j.at("ent_inc_forget").get_to(r.ent_inc_forget);
  j.at("conf_drop_retain").get_to(r.conf_drop_retain);
  j.at("ent_inc_retain").get_to(r.ent_inc_retain);
  j.at("activation_distance").get_to(r.activation_distance);
  j.at("layerwise_distance").get_to(r.layerwise_distance);
  j.at("completeness").get_to(r.completeness);
  j.at("membership_recall_before").get_to(r.membership_recall_before);
  j.at("membership_recall_after").get_to(r.membership_recall_after);
  j.at("verification_before").get_to(r.verification_before);
  j.at("verification_after").get_to(r.verification_after);
  j.at("warnings").get_to(r.warnings);
}

}  // namespace cure
