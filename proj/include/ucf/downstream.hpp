#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ucf/numcore/matrix.hpp"

namespace ucf::downstream {

using num::Matrix;

enum class Kind {
  kLogisticRegression,
  kLinearSvm,
  kKnn,
  kGaussianNb,
  kDecisionTree,
  kRandomForest,
  kGradientBoosting,
};

// Table order.
const std::array<Kind, 7>& all_kinds();
// "logistic-regression", "linear-svm", "knn", "gaussian-nb", "decision-tree",
// "random-forest", "gradient-boosting".
std::string_view kind_name(Kind kind);
Kind parse_kind(std::string_view name);  // ConfigError on unknown names

using Hyper = std::map<std::string, double, std::less<>>;

// Defaults:
//   logistic-regression  lambda=1e-4 iterations=500 lr=0.1
//   linear-svm           lambda=1e-4 epochs=20
//   knn                  k=5
//   gaussian-nb          var_smoothing=1e-9
//   decision-tree        max_depth=8 min_leaf=5
//   random-forest        trees=100 max_depth=8 min_leaf=5 max_features=0 (0: ceil(sqrt(e)))
//   gradient-boosting    trees=100 max_depth=3 shrinkage=0.1 min_leaf=1
Hyper default_hyper(Kind kind);

// Defaults overlaid with `overrides`. Unknown keys and out-of-range values
// raise ConfigError.
Hyper resolve_hyper(Kind kind, const Hyper& overrides);

// Binary tree; internal nodes send x[feature] <= threshold to `left`.
struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::size_t left = 0;
  std::size_t right = 0;
  double value = 0.0;  // leaf output
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const;
  std::size_t depth() const;
};

struct FittedModel {
  Kind kind = Kind::kLogisticRegression;
  Hyper hyper;
  std::uint64_t seed = 0;
  std::size_t dim = 0;

  // Linear kinds: score = weights . x + bias.
  std::vector<double> weights;
  double bias = 0.0;
  double margin_scale = 1.0;  // SVM: mean |margin| on the training set

  // KNN.
  Matrix train_x;
  std::vector<int> train_y;

  // GNB, index 0 = class -1, 1 = class +1.
  std::array<std::vector<double>, 2> mean;
  std::array<std::vector<double>, 2> var;
  std::array<double, 2> log_prior{};

  // Tree kinds. GB scores are base_score + shrinkage * sum of tree outputs.
  std::vector<Tree> trees;
  double base_score = 0.0;
};

// y holds labels in {-1, +1}. Throws UnfittableError when a kind needs both
// classes and y has one, or when KNN has fewer than k samples.
FittedModel fit(Kind kind, const Hyper& hyper, const Matrix& x, std::span<const int> y,
                std::uint64_t seed);
FittedModel fit(Kind kind, const Matrix& x, std::span<const int> y, std::uint64_t seed);

// Score in [0, 1] for class +1. SVM scores are rank-preserving, not calibrated.
std::vector<double> predict_proba(const FittedModel& model, const Matrix& x);

// +1 iff score >= threshold.
std::vector<int> predict(const FittedModel& model, const Matrix& x, double threshold = 0.5);

}  // namespace ucf::downstream
