#pragma once

// Synthetic identity generator standing in for a face dataset: Gaussian
// clusters around well-separated identity centers, with extra per-sample
// noise whose magnitude defines a quality score.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cure/embedding.hpp"

namespace cure {

struct GeneratorSpec {
  int n_identities = 50;
  int samples_per_identity = 40;
  int input_dim = 32;
  double cluster_spread = 1.0;           // sigma of the per-identity Gaussian
  double inter_class_separation = 6.0;   // minimum distance between identity centers
  double noise_low = 0.0;                // per-sample noise scale drawn uniformly from [low, high]
  double noise_high = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Quality = 1 - |noise| / (noise_high * sqrt(input_dim)), clipped to [0, 1].
double quality_from_noise(double noise_magnitude, const GeneratorSpec& spec);

std::vector<Sample> generate_dataset(const GeneratorSpec& spec);

// Forgets a rounded share of whole identities; holds out `holdout_fraction`
// of each retained identity's samples.
DatasetSplit split_random_forget(std::span<const Sample> samples, double forget_fraction, std::uint64_t seed,
                                 double holdout_fraction = 0.1);

// Holds out `holdout_fraction` of every identity's samples, then sends the
// training samples below the quality percentile to the forget set.
DatasetSplit split_quality_forget(std::span<const Sample> samples, double percentile, std::uint64_t seed,
                                  double holdout_fraction = 0.1);

// Same holdout as split_quality_forget, but `forget_count` training samples
// chosen uniformly at random are forgotten (sample-level).
DatasetSplit split_random_samples(std::span<const Sample> samples, std::size_t forget_count, std::uint64_t seed,
                                  double holdout_fraction = 0.1);

// Quality value at the given percentile (lower interpolation).
double quality_percentile(std::span<const Sample> samples, double percentile);

struct VerificationPair {
  Sample first;
  Sample second;
  bool same = false;
};

// n_pairs / 2 same-identity and n_pairs / 2 different-identity pairs, no
// duplicates.
std::vector<VerificationPair> make_verification_pairs(std::span<const Sample> samples, int n_pairs,
                                                      std::uint64_t seed);

void save_dataset(const std::filesystem::path& csv_path, std::span<const Sample> samples,
                  const GeneratorSpec& spec);
std::vector<Sample> load_dataset(const std::filesystem::path& csv_path);

}  // namespace cure
