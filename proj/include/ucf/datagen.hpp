#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ucf/numcore/matrix.hpp"

namespace ucf::data {

inline constexpr std::size_t kFeatureCount = 10;

enum class PuLabel : int { kUnlabeled = 0, kPositive = 1 };
enum class Split { kTrain, kVal };

std::string_view split_name(Split s);

struct Sample {
  std::string session_id;
  std::array<double, kFeatureCount> features{};
  PuLabel pu_label = PuLabel::kUnlabeled;
  int ground_truth = -1;  // +1 / -1; evaluation only
  Split split = Split::kTrain;

  bool labeled_positive() const { return pu_label == PuLabel::kPositive; }
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }

  // Index views, ascending.
  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> train_positive_indices() const;   // D1
  std::vector<std::size_t> train_unlabeled_indices() const;  // DU
  std::vector<std::size_t> val_indices() const;

  num::Matrix features(const std::vector<std::size_t>& indices) const;

  // Throws IntegrityError on duplicate session ids or a labeled positive
  // whose ground truth is not +1.
  void check_integrity() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GenConfig {
  std::size_t n_total = 15000;
  std::size_t n_labeled_positive = 1000;
  double positive_prior = 0.5;   // among unlabeled training samples
  double separation = 2.0;       // distance between the class means
  double noise_fraction = 0.05;  // samples drawn from the opposite class
  double val_fraction = 0.1067;
  double val_positive_prevalence = 0.9338;
  bool balanced_val = false;     // overrides the prevalence with 0.5
  std::uint64_t seed = 0;

  void validate() const;
};

// Exact split sizes implied by a config (counts use llround, halves away
// from zero).
struct SplitPlan {
  std::size_t n_val = 0;
  std::size_t n_val_positive = 0;
  std::size_t n_train = 0;
  std::size_t n_train_unlabeled = 0;
  std::size_t n_train_unlabeled_positive = 0;
  std::size_t n_flipped = 0;
};

SplitPlan plan(const GenConfig& cfg);

// Two isotropic unit-variance Gaussians at +/- separation/2 along a seeded
// unit direction. Exactly n_flipped samples take their features from the
// class opposite to their ground truth. Validation samples are unlabeled.
Dataset generate(const GenConfig& cfg);

// The seeded class direction used by generate().
std::array<double, kFeatureCount> class_direction(std::uint64_t seed);

struct PreprocessStats {
  std::size_t duplicates_removed = 0;
  std::array<double, kFeatureCount> min{};
  std::array<double, kFeatureCount> max{};
};

// Drops exact-duplicate feature rows (first kept), then min-max scales each
// column with training-split statistics. Validation values are clipped to
// [-0.5, 1.5]; constant columns map to 0.5.
Dataset preprocess(const Dataset& dataset, PreprocessStats* stats = nullptr);

// CSV: session_id,f0,...,f9,pu_label,ground_truth,split
std::string to_csv(const Dataset& dataset);
Dataset from_csv(std::string_view text);
void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

}  // namespace ucf::data
