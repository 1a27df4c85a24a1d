#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ucf/downstream.hpp"
#include "ucf/numcore/matrix.hpp"

namespace ucf::eval {

using num::Matrix;

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Labels in {-1, +1}.
ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred);

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // tp + fp == 0, reported as 0
  bool recall_undefined = false;     // tp + fn == 0, reported as 0
};

Metrics classification_metrics(const ConfusionMatrix& cm);

// Probability that a random positive outscores a random negative, ties
// counting one half, from average ranks. UndefinedMetricError if a class is
// missing.
double roc_auc(std::span<const int> y_true, std::span<const double> scores);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// One point per distinct score, thresholds descending, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const int> y_true, std::span<const double> scores);
double trapezoid_area(std::span<const RocPoint> curve);

// Stratified k-fold assignment: each class is shuffled with its own seeded
// stream, then its members are dealt to folds round-robin, the count running
// on from one class to the next. Returns the test indices of every fold.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> y, std::size_t k,
                                                       std::uint64_t seed);

struct FoldResult {
  std::size_t fold = 0;
  ConfusionMatrix cm;
  Metrics metrics;
  double auc = 0.0;
};

struct MetricsReport {
  std::string classifier;
  std::uint64_t seed = 0;
  std::string dataset_digest;
  std::vector<FoldResult> folds;
  Metrics aggregate;          // unweighted means over folds
  double aggregate_auc = 0.0;
  ConfusionMatrix pooled;     // summed over folds
  std::vector<double> out_of_fold_scores;  // per input row

  // {classifier, seed, dataset, folds:[...], aggregate:{...}}; %.17g floats.
  std::string to_json() const;
};

MetricsReport kfold_cv(const Matrix& x, std::span<const int> y, std::size_t k,
                       downstream::Kind kind, const downstream::Hyper& hyper, std::uint64_t seed);

// JSON array of reports.
std::string reports_to_json(std::span<const MetricsReport> reports);

// --- t-SNE --------------------------------------------------------------------

inline constexpr std::size_t kTsneMaxPoints = 5000;

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  std::size_t momentum_switch = 250;
  std::uint64_t seed = 0;

  // ConfigError unless 10 <= n <= kTsneMaxPoints and perplexity < n / 3.
  void validate(std::size_t n) const;
};

struct TsneResult {
  Matrix coords;  // n x 2
  double kl_initial = 0.0;
  double kl_final = 0.0;
};

// Symmetrized joint affinities (rows sum to the conditional P over 2n; total 1).
// Bandwidths by bisection on beta until |H - ln perplexity| < 1e-5, at most
// 50 steps per point.
Matrix tsne_affinities(const Matrix& x, double perplexity);

// KL(P || Q) with Student-t Q on the 2-D points `y`; 0 log 0 = 0.
double tsne_kl(const Matrix& p, const Matrix& y);
Matrix tsne_kl_gradient(const Matrix& p, const Matrix& y);

TsneResult tsne(const Matrix& x, const TsneConfig& cfg);

// --- SVG -----------------------------------------------------------------------

// Two fixed colours: class +1 and class -1.
std::string scatter_svg(const Matrix& coords, std::span<const int> labels,
                        const std::string& title);

struct RocSeries {
  std::string name;
  std::vector<RocPoint> curve;
  double auc = 0.0;
};

std::string roc_svg(std::span<const RocSeries> series, const std::string& title);

}  // namespace ucf::eval
