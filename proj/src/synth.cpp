#include "cure/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cure/errors.hpp"

namespace cure {

namespace {

constexpr int kCenterRetryCap = 1000;

Vector gaussian_vector(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = n(rng);
  return v;
}

std::map<int, std::vector<std::size_t>> indices_by_identity(std::span<const Sample> samples) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) out[samples[i].identity].push_back(i);
  return out;
}

// Marks round(fraction * n_identity) samples of each listed identity as holdout.
std::vector<bool> choose_holdout(std::span<const Sample> samples, const std::set<int>& identities,
                                 double fraction, std::mt19937_64& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in [0, 1)");
  std::vector<bool> held(samples.size(), false);
  for (auto& [identity, idx] : indices_by_identity(samples)) {
    if (!identities.contains(identity)) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    for (std::size_t j = 0; j < n && j + 1 < idx.size(); ++j) held[idx[j]] = true;
  }
  return held;
}

std::set<int> all_identities(std::span<const Sample> samples) {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.identity);
  return ids;
}

}  // namespace

void GeneratorSpec::validate() const {
  if (n_identities < 2) throw ConfigError("generator needs at least two identities");
  if (samples_per_identity < 1) throw ConfigError("samples_per_identity must be positive");
  if (input_dim < 1) throw ConfigError("input_dim must be positive");
  if (!(cluster_spread > 0.0)) throw ConfigError("cluster_spread must be positive");
  if (!(inter_class_separation > 0.0)) throw ConfigError("inter_class_separation must be positive");
  if (!(noise_low >= 0.0 && noise_high >= noise_low)) throw ConfigError("noise range must satisfy 0 <= low <= high");
}

double quality_from_noise(double noise_magnitude, const GeneratorSpec& spec) {
  if (spec.noise_high <= 0.0) return 1.0;
  const double normalized = noise_magnitude / (spec.noise_high * std::sqrt(static_cast<double>(spec.input_dim)));
  return std::clamp(1.0 - normalized, 0.0, 1.0);
}

std::vector<Sample> generate_dataset(const GeneratorSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const double radius = spec.inter_class_separation;

  std::vector<Vector> centers;
  for (int c = 0; c < spec.n_identities; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kCenterRetryCap && !placed; ++attempt) {
      Vector candidate = radius * gaussian_vector(spec.input_dim, rng).normalized();
      placed = std::all_of(centers.begin(), centers.end(), [&](const Vector& other) {
        return (other - candidate).norm() >= spec.inter_class_separation;
      });
      if (placed) centers.push_back(std::move(candidate));
    }
    if (!placed) {
      throw DataError("generate_dataset: could not place identity " + std::to_string(c) +
                      " at the requested separation");
    }
  }

  std::uniform_real_distribution<double> noise_scale(spec.noise_low, spec.noise_high);
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(spec.n_identities * spec.samples_per_identity));
  std::int64_t next_id = 0;
  for (int c = 0; c < spec.n_identities; ++c) {
    for (int s = 0; s < spec.samples_per_identity; ++s) {
      const Vector spread = spec.cluster_spread * gaussian_vector(spec.input_dim, rng);
      const double eta = spec.noise_high > spec.noise_low ? noise_scale(rng) : spec.noise_low;
      const Vector noise = eta * gaussian_vector(spec.input_dim, rng);
      samples.push_back({centers[static_cast<std::size_t>(c)] + spread + noise, c,
                         quality_from_noise(noise.norm(), spec), next_id++});
    }
  }
  return samples;
}

DatasetSplit split_random_forget(std::span<const Sample> samples, double forget_fraction, std::uint64_t seed,
                                 double holdout_fraction) {
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0)) throw ConfigError("forget fraction must lie in (0, 1)");
  if (samples.empty()) throw EmptyInputError("split_random_forget: no samples");
  const std::set<int> ids = all_identities(samples);
  std::vector<int> order(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_forget = static_cast<std::size_t>(std::lround(forget_fraction * static_cast<double>(order.size())));
  if (n_forget == 0) throw ConfigError("forget fraction selects no identities");
  if (n_forget >= order.size()) throw ConfigError("forget fraction leaves the retain set empty");

  const std::set<int> forgotten(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_forget));
  std::set<int> retained;
  for (int id : ids) {
    if (!forgotten.contains(id)) retained.insert(id);
  }
  const std::vector<bool> held = choose_holdout(samples, retained, holdout_fraction, rng);

  DatasetSplit split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (forgotten.contains(samples[i].identity)) {
      split.forget.push_back(samples[i]);
    } else if (held[i]) {
      split.holdout.push_back(samples[i]);
    } else {
      split.retain.push_back(samples[i]);
    }
  }
  return split;
}

namespace {

struct HeldOut {
  std::vector<Sample> train;
  std::vector<Sample> holdout;
};

HeldOut hold_out_all(std::span<const Sample> samples, std::uint64_t seed, double holdout_fraction) {
  if (samples.empty()) throw EmptyInputError("split: no samples");
  std::mt19937_64 rng(seed);
  const std::vector<bool> held = choose_holdout(samples, all_identities(samples), holdout_fraction, rng);
  HeldOut out;
  for (std::size_t i = 0; i < samples.size(); ++i) (held[i] ? out.holdout : out.train).push_back(samples[i]);
  return out;
}

}  // namespace

double quality_percentile(std::span<const Sample> samples, double percentile) {
  if (samples.empty()) throw EmptyInputError("quality_percentile: no samples");
  std::vector<double> q;
  for (const auto& s : samples) q.push_back(s.quality);
  std::sort(q.begin(), q.end());
  const auto idx = static_cast<std::size_t>(
      std::clamp(std::floor(percentile / 100.0 * static_cast<double>(q.size() - 1)), 0.0,
                 static_cast<double>(q.size() - 1)));
  return q[idx];
}

DatasetSplit split_quality_forget(std::span<const Sample> samples, double percentile, std::uint64_t seed,
                                  double holdout_fraction) {
  if (!(percentile > 0.0 && percentile < 100.0)) {
    throw ConfigError("quality percentile must lie in (0, 100); it would leave a split side empty");
  }
  HeldOut parts = hold_out_all(samples, seed, holdout_fraction);
  const auto [lo, hi] = std::minmax_element(parts.train.begin(), parts.train.end(),
                                            [](const Sample& a, const Sample& b) { return a.quality < b.quality; });
  if (lo->quality == hi->quality) throw DataError("split_quality_forget: all samples have the same quality");

  std::vector<std::size_t> order(parts.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& sa = parts.train[a];
    const auto& sb = parts.train[b];
    return sa.quality != sb.quality ? sa.quality < sb.quality : sa.id < sb.id;
  });
  const auto n_forget = static_cast<std::size_t>(std::lround(percentile / 100.0 * static_cast<double>(order.size())));
  if (n_forget == 0 || n_forget >= order.size()) throw ConfigError("quality percentile leaves a split side empty");

  std::vector<bool> low(parts.train.size(), false);
  for (std::size_t i = 0; i < n_forget; ++i) low[order[i]] = true;
  DatasetSplit split;
  split.holdout = std::move(parts.holdout);
  for (std::size_t i = 0; i < parts.train.size(); ++i) (low[i] ? split.forget : split.retain).push_back(parts.train[i]);
  return split;
}

DatasetSplit split_random_samples(std::span<const Sample> samples, std::size_t forget_count, std::uint64_t seed,
                                  double holdout_fraction) {
  HeldOut parts = hold_out_all(samples, seed, holdout_fraction);
  if (forget_count == 0 || forget_count >= parts.train.size()) {
    throw ConfigError("random sample split: forget count leaves a split side empty");
  }
  std::vector<std::size_t> order(parts.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> chosen(parts.train.size(), false);
  for (std::size_t i = 0; i < forget_count; ++i) chosen[order[i]] = true;
  DatasetSplit split;
  split.holdout = std::move(parts.holdout);
  for (std::size_t i = 0; i < parts.train.size(); ++i) (chosen[i] ? split.forget : split.retain).push_back(parts.train[i]);
  return split;
}

std::vector<VerificationPair> make_verification_pairs(std::span<const Sample> samples, int n_pairs,
                                                      std::uint64_t seed) {
  if (n_pairs < 2 || n_pairs % 2 != 0) throw ConfigError("n_pairs must be a positive even number");
  auto groups = indices_by_identity(samples);
  std::vector<std::vector<std::size_t>> multi;
  std::size_t possible_positive = 0;
  for (auto& [id, idx] : groups) {
    if (idx.size() >= 2) {
      possible_positive += idx.size() * (idx.size() - 1) / 2;
      multi.push_back(idx);
    }
  }
  if (groups.size() < 2 || multi.empty()) {
    throw DataError("make_verification_pairs: need two identities and one with two samples");
  }
  const auto half = static_cast<std::size_t>(n_pairs / 2);
  std::size_t possible_negative = 0;
  {
    std::size_t seen = 0;
    for (const auto& [id, idx] : groups) {
      possible_negative += seen * idx.size();
      seen += idx.size();
    }
  }
  if (possible_positive < half || possible_negative < half) {
    throw DataError("make_verification_pairs: not enough distinct pairs for the requested count");
  }

  std::mt19937_64 rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<VerificationPair> pairs;
  auto add = [&](std::size_t a, std::size_t b, bool same) {
    if (a == b) return false;
    const auto key = std::minmax(a, b);
    if (!used.insert(key).second) return false;
    pairs.push_back({samples[key.first], samples[key.second], same});
    return true;
  };

  std::uniform_int_distribution<std::size_t> pick_sample(0, samples.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_group(0, multi.size() - 1);
  std::size_t positives = 0;
  std::size_t negatives = 0;
  const std::size_t attempt_cap = 1000 * half + 10000;
  for (std::size_t attempt = 0; attempt < attempt_cap && (positives < half || negatives < half); ++attempt) {
    if (positives <= negatives && positives < half) {
      const auto& idx = multi[pick_group(rng)];
      std::uniform_int_distribution<std::size_t> within(0, idx.size() - 1);
      if (add(idx[within(rng)], idx[within(rng)], true)) ++positives;
    } else if (negatives < half) {
      const auto a = pick_sample(rng);
      const auto b = pick_sample(rng);
      if (samples[a].identity != samples[b].identity && add(a, b, false)) ++negatives;
    } else if (positives < half) {
      const auto& idx = multi[pick_group(rng)];
      std::uniform_int_distribution<std::size_t> within(0, idx.size() - 1);
      if (add(idx[within(rng)], idx[within(rng)], true)) ++positives;
    }
  }
  if (positives < half || negatives < half) throw DataError("make_verification_pairs: sampling cap reached");
  return pairs;
}

void save_dataset(const std::filesystem::path& csv_path, std::span<const Sample> samples, const GeneratorSpec& spec) {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write dataset " + csv_path.string());
  const auto dim = samples.empty() ? 0 : samples.front().input.size();
  out << "id,identity,quality";
  for (Eigen::Index j = 0; j < dim; ++j) out << ",x" << j;
  out << '\n';
  out.precision(17);
  for (const auto& s : samples) {
    out << s.id << ',' << s.identity << ',' << s.quality;
    for (Eigen::Index j = 0; j < s.input.size(); ++j) out << ',' << s.input(j);
    out << '\n';
  }
  nlohmann::json sidecar = {
      {"n_identities", spec.n_identities},
      {"samples_per_identity", spec.samples_per_identity},
      {"input_dim", spec.input_dim},
      {"cluster_spread", spec.cluster_spread},
      {"inter_class_separation", spec.inter_class_separation},
      {"noise_scale_range", {spec.noise_low, spec.noise_high}},
      {"seed", spec.seed},
  };
  std::ofstream side(csv_path.string() + ".json");
  if (!side) throw IoError("cannot write dataset sidecar for " + csv_path.string());
  side << sidecar.dump(2) << '\n';
}

std::vector<Sample> load_dataset(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open dataset " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file " + csv_path.string());
  const auto dim = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',')) - 2;
  if (dim < 1) throw IoError("dataset header has no input columns");
  std::vector<Sample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    Sample s;
    s.input.resize(dim);
    try {
      std::getline(row, cell, ',');
      s.id = std::stoll(cell);
      std::getline(row, cell, ',');
      s.identity = std::stoi(cell);
      std::getline(row, cell, ',');
      s.quality = std::stod(cell);
      for (Eigen::Index j = 0; j < dim; ++j) {
        if (!std::getline(row, cell, ',')) throw IoError("short dataset row");
        s.input(j) = std::stod(cell);
      }
    } catch (const std::logic_error&) {
      throw IoError("malformed dataset row in " + csv_path.string());
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace cure
