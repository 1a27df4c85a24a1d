#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "../support/oracles.hpp"
#include "ucf/error.hpp"
#include "ucf/evaluation.hpp"
#include "ucf/numcore/rng.hpp"

using namespace ucf;
using eval::ConfusionMatrix;
using num::Matrix;

namespace {

Matrix gaussian_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
  num::Rng rng(seed);
  Matrix m(n, dim);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("confusion matrix") {
  const std::vector<int> y{1, 1, -1, -1, 1};
  CHECK(eval::confusion(y, y) == ConfusionMatrix{3, 0, 0, 2});
  std::vector<int> inv;
  for (int v : y) inv.push_back(-v);
  CHECK(eval::confusion(y, inv) == ConfusionMatrix{0, 2, 3, 0});
  CHECK_THROWS_AS(eval::confusion(y, std::vector<int>{1}), ShapeError);

  std::vector<int> truth(1495, 1), pred(1601, 1);
  truth.resize(1601, -1);
  CHECK(eval::confusion(truth, pred) == ConfusionMatrix{1495, 106, 0, 0});
}

TEST_CASE("metrics reproduce the published logistic regression row") {
  const auto m = eval::classification_metrics({1495, 106, 0, 0});
  CHECK(std::abs(m.accuracy - 0.93379) < 5e-6);
  CHECK(std::abs(m.precision - 0.93379) < 5e-6);
  CHECK(std::abs(m.recall - 1.0) < 5e-6);
  CHECK(std::abs(m.f1 - 0.96576) < 5e-6);
}

TEST_CASE("metrics arithmetic") {
  const auto m = eval::classification_metrics({1492, 105, 3, 1});
  CHECK(m.accuracy == doctest::Approx(1493.0 / 1601.0).epsilon(1e-15));
  CHECK(m.precision == doctest::Approx(1492.0 / 1597.0).epsilon(1e-15));
  CHECK(m.recall == doctest::Approx(1492.0 / 1495.0).epsilon(1e-15));
  CHECK(std::abs(m.accuracy - 0.93254) < 5e-6);

  const auto perfect = eval::classification_metrics({7, 0, 0, 5});
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  const auto none = eval::classification_metrics({0, 0, 4, 6});
  CHECK(none.precision == 0.0);
  CHECK(none.precision_undefined);
  CHECK_FALSE(none.recall_undefined);
  CHECK(none.f1 == 0.0);
  CHECK_THROWS_AS(eval::classification_metrics({}), ContractError);
}

TEST_CASE("roc auc examples") {
  CHECK(eval::roc_auc(std::vector<int>{1, -1, 1, -1}, std::vector<double>{0.9, 0.8, 0.7, 0.1}) ==
        0.75);
  CHECK(eval::roc_auc(std::vector<int>{1, 1, -1}, std::vector<double>{3, 2, 1}) == 1.0);
  CHECK(eval::roc_auc(std::vector<int>{1, -1, -1, 1}, std::vector<double>(4, 0.3)) == 0.5);
  CHECK_THROWS_AS(eval::roc_auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}),
                  UndefinedMetricError);
}

TEST_CASE("property: rank AUC equals pairwise AUC and trapezoidal area") {
  num::Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.4 ? 1 : -1;
      s[i] = static_cast<double>(rng.below(8)) / 8.0;  // many ties
    }
    y[0] = 1;
    y[1] = -1;
    const double auc = eval::roc_auc(y, s);
    CHECK(std::abs(auc - oracle::pairwise_auc(y, s)) < 1e-12);
    CHECK(std::abs(auc - eval::trapezoid_area(eval::roc_curve(y, s))) < 1e-12);

    std::vector<double> warped, flipped;
    for (double v : s) {
      warped.push_back(std::exp(3.0 * v) - 7.0);
      flipped.push_back(-v);
    }
    CHECK(std::abs(eval::roc_auc(y, warped) - auc) < 1e-12);
    std::vector<double> distinct(n);
    for (std::size_t i = 0; i < n; ++i) distinct[i] = s[i] + 1e-6 * static_cast<double>(i);
    std::vector<double> neg;
    for (double v : distinct) neg.push_back(-v);
    CHECK(std::abs(eval::roc_auc(y, distinct) + eval::roc_auc(y, neg) - 1.0) < 1e-12);
  }
}

TEST_CASE("roc curve endpoints and monotonicity") {
  const std::vector<int> y{1, -1, 1, -1, 1};
  const std::vector<double> s{0.9, 0.9, 0.4, 0.3, 0.1};
  const auto c = eval::roc_curve(y, s);
  REQUIRE(c.size() == 5);  // origin + 4 distinct scores
  CHECK(c.front().fpr == 0.0);
  CHECK(c.front().tpr == 0.0);
  CHECK(c.back().fpr == 1.0);
  CHECK(c.back().tpr == 1.0);
  for (std::size_t i = 1; i < c.size(); ++i) {
    CHECK(c[i].fpr >= c[i - 1].fpr);
    CHECK(c[i].tpr >= c[i - 1].tpr);
  }
}

TEST_CASE("stratified folds") {
  std::vector<int> y(100, 1);
  for (std::size_t i = 0; i < 7; ++i) y[i * 13] = -1;
  const auto folds = eval::stratified_folds(y, 5, 3);
  REQUIRE(folds.size() == 5);
  std::vector<int> seen(100, 0);
  for (const auto& f : folds) {
    std::size_t minority = 0;
    for (auto i : f) {
      ++seen[i];
      minority += y[i] == -1;
    }
    CHECK(minority >= 1);
    CHECK(minority <= 2);
    CHECK(f.size() >= 19);
    CHECK(f.size() <= 21);
    CHECK(std::is_sorted(f.begin(), f.end()));
  }
  for (int c : seen) CHECK(c == 1);
  CHECK(eval::stratified_folds(y, 5, 3) == folds);
  CHECK(eval::stratified_folds(y, 5, 4) != folds);

  CHECK_THROWS_AS(eval::stratified_folds(y, 8, 0), StratificationError);
  CHECK_THROWS_AS(eval::stratified_folds(y, 1, 0), ContractError);
}

TEST_CASE("k-fold CV reports are deterministic and consistent") {
  num::Rng rng(8);
  Matrix x(60, 3);
  std::vector<int> y(60);
  for (std::size_t i = 0; i < 60; ++i) {
    y[i] = i < 45 ? 1 : -1;
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = rng.normal() + (j == 0 ? y[i] : 0.0);
  }
  const auto a = eval::kfold_cv(x, y, 5, downstream::Kind::kLogisticRegression, {}, 21);
  const auto b = eval::kfold_cv(x, y, 5, downstream::Kind::kLogisticRegression, {}, 21);
  CHECK(a.to_json() == b.to_json());
  REQUIRE(a.folds.size() == 5);
  CHECK(a.out_of_fold_scores.size() == 60);

  double acc = 0.0;
  ConfusionMatrix pooled;
  for (const auto& f : a.folds) {
    acc += f.metrics.accuracy;
    pooled.tp += f.cm.tp;
    pooled.fp += f.cm.fp;
    pooled.fn += f.cm.fn;
    pooled.tn += f.cm.tn;
  }
  CHECK(std::abs(a.aggregate.accuracy - acc / 5) < 1e-15);
  CHECK(a.pooled == pooled);
  CHECK(pooled.total() == 60);

  const auto j = nlohmann::ordered_json::parse(a.to_json());
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"classifier", "seed", "dataset", "folds", "aggregate"});
  std::vector<std::string> fold_keys;
  for (const auto& [k, v] : j["folds"][0].items()) fold_keys.push_back(k);
  CHECK(fold_keys == std::vector<std::string>{"fold", "tp", "fp", "fn", "tn", "accuracy",
                                              "precision", "recall", "f1", "auc"});
  CHECK(j["classifier"] == "logistic-regression");
  CHECK(j["aggregate"]["accuracy"].get<double>() == a.aggregate.accuracy);

  const std::vector<eval::MetricsReport> both{a, b};
  CHECK(nlohmann::json::parse(eval::reports_to_json(both)).size() == 2);
}

TEST_CASE("leave-one-out scale CV with a memorizing 1-NN") {
  // Each class has 4 members, so k = 4 is the largest stratifiable fold count.
  const Matrix x = Matrix::from_rows({{0}, {1}, {2}, {3}, {10}, {11}, {12}, {13}});
  const std::vector<int> y{1, 1, 1, 1, -1, -1, -1, -1};
  const downstream::Hyper h{{"k", 1}};
  const auto r = eval::kfold_cv(x, y, 4, downstream::Kind::kKnn, h, 0);
  CHECK(r.aggregate.accuracy == 1.0);
  CHECK(r.to_json() == eval::kfold_cv(x, y, 4, downstream::Kind::kKnn, h, 0).to_json());
  CHECK_THROWS_AS(eval::kfold_cv(x, y, 8, downstream::Kind::kKnn, h, 0), StratificationError);
}

TEST_CASE("t-SNE affinities") {
  const auto x = gaussian_points(40, 5, 1);
  const auto p = eval::tsne_affinities(x, 10.0);
  double total = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(p(i, i) == 0.0);
    for (std::size_t j = 0; j < 40; ++j) {
      CHECK(p(i, j) == doctest::Approx(p(j, i)).epsilon(1e-15));
      total += p(i, j);
    }
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
}

TEST_CASE("t-SNE KL gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = gaussian_points(10, 4, seed);
    const auto p = eval::tsne_affinities(x, 3.0);
    Matrix y = gaussian_points(10, 2, seed + 50);
    const auto g = eval::tsne_kl_gradient(p, y);
    double worst = 0.0;
    const double eps = 1e-5;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double orig = y.data()[i];
      y.data()[i] = orig + eps;
      const double up = eval::tsne_kl(p, y);
      y.data()[i] = orig - eps;
      const double down = eval::tsne_kl(p, y);
      y.data()[i] = orig;
      const double fd = (up - down) / (2 * eps);
      const double ad = g.data()[i];
      worst = std::max(worst, std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd)));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("t-SNE run: KL falls, duplicates stay together, seed determinism") {
  const std::size_t n = 60;
  Matrix x = gaussian_points(n, 4, 3);
  for (std::size_t j = 0; j < 4; ++j) x(1, j) = x(0, j);

  // Duplicates share their affinity rows outside the mutual entry.
  const auto p = eval::tsne_affinities(x, 10.0);
  for (std::size_t k = 2; k < n; ++k) CHECK(std::abs(p(0, k) - p(1, k)) < 1e-15);

  eval::TsneConfig cfg;
  cfg.perplexity = 10.0;
  cfg.iterations = 400;
  cfg.seed = 5;
  const auto r = eval::tsne(x, cfg);
  CHECK(r.kl_final < r.kl_initial);

  // They do not coincide exactly: at distance 0 the Student-t affinity 1/Z
  // exceeds p01, so the exact gradient pushes the pair apart. They remain
  // each other's nearest neighbour.
  auto dist = [&](std::size_t a, std::size_t b) {
    return std::hypot(r.coords(a, 0) - r.coords(b, 0), r.coords(a, 1) - r.coords(b, 1));
  };
  for (std::size_t k = 2; k < n; ++k) {
    CHECK(dist(0, 1) < dist(0, k));
    CHECK(dist(0, 1) < dist(1, k));
  }
  CHECK(eval::tsne(x, cfg).coords == r.coords);
}

TEST_CASE("t-SNE size checks") {
  eval::TsneConfig cfg;
  CHECK_THROWS_AS(cfg.validate(9), ConfigError);
  CHECK_THROWS_AS(cfg.validate(90), ConfigError);  // perplexity 30 needs n > 90
  CHECK_NOTHROW(cfg.validate(91));
  try {
    cfg.validate(eval::kTsneMaxPoints + 1);
    FAIL("expected a size error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("eval.tsne_subsample") != std::string::npos);
  }
}

TEST_CASE("SVG emitters are deterministic and well formed") {
  const Matrix coords = Matrix::from_rows({{0, 0}, {1, 2}, {-1, 0.5}});
  const std::vector<int> labels{1, -1, 1};
  const auto svg = eval::scatter_svg(coords, labels, "a & b");
  CHECK(svg == eval::scatter_svg(coords, labels, "a & b"));
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("a &amp; b") != std::string::npos);
  CHECK(svg.find("#d62728") != std::string::npos);
  CHECK(svg.find("#1f77b4") != std::string::npos);

  const std::vector<int> y{1, -1, 1, -1};
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  const std::vector<eval::RocSeries> series{{"lr", eval::roc_curve(y, s), 0.75}};
  const auto roc = eval::roc_svg(series, "ROC");
  CHECK(roc.find("<polyline") != std::string::npos);
  CHECK(roc.find("AUC 0.7500") != std::string::npos);
}
