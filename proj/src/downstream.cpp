#include "ucf/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>

#include "ucf/error.hpp"
#include "ucf/numcore/rng.hpp"

namespace ucf::downstream {

namespace {

constexpr std::array<Kind, 7> kKinds{
    Kind::kLogisticRegression, Kind::kLinearSvm,    Kind::kKnn,
    Kind::kGaussianNb,         Kind::kDecisionTree, Kind::kRandomForest,
    Kind::kGradientBoosting,
};

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::size_t as_count(const Hyper& h, const char* key) {
  return static_cast<std::size_t>(h.find(key)->second);
}

double as_value(const Hyper& h, const char* key) { return h.find(key)->second; }

// --- CART ------------------------------------------------------------------

struct TreeParams {
  std::size_t max_depth = 8;
  std::size_t min_leaf = 5;
  std::size_t max_features = 0;  // 0: all features
};

using LeafValue = std::function<double(std::span<const std::size_t> rows)>;

// Squared-error impurity from sufficient statistics. For 0/1 targets this is
// n * Gini / 2, so one search serves classification and regression trees.
double impurity(double n, double s, double ss) { return ss - s * s / n; }

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, std::span<const double> target, TreeParams params, num::Rng* rng,
              LeafValue leaf)
      : x_(x), target_(target), params_(params), rng_(rng), leaf_(std::move(leaf)) {}

  Tree build(std::vector<std::size_t> rows) {
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  std::size_t make_leaf(std::span<const std::size_t> rows) {
    TreeNode node;
    node.value = leaf_(rows);
    tree_.nodes.push_back(node);
    return tree_.nodes.size() - 1;
  }

  std::vector<std::size_t> candidate_features() {
    const std::size_t e = x_.cols();
    if (params_.max_features == 0 || params_.max_features >= e || rng_ == nullptr) {
      std::vector<std::size_t> all(e);
      std::iota(all.begin(), all.end(), std::size_t{0});
      return all;
    }
    auto picked = rng_->sample_without_replacement(e, params_.max_features);
    std::sort(picked.begin(), picked.end());
    return picked;
  }

  std::size_t grow(std::vector<std::size_t>& rows, std::size_t depth) {
    const std::size_t n = rows.size();
    double s = 0.0, ss = 0.0;
    for (std::size_t r : rows) {
      s += target_[r];
      ss += target_[r] * target_[r];
    }
    const double parent = impurity(static_cast<double>(n), s, ss);
    if (depth >= params_.max_depth || n < 2 * params_.min_leaf || parent <= 1e-12) {
      return make_leaf(rows);
    }

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_child = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(rows);
    for (std::size_t f : candidate_features()) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x_(a, f) != x_(b, f)) return x_(a, f) < x_(b, f);
        return a < b;
      });
      double ls = 0.0, lss = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double t = target_[order[i]];
        ls += t;
        lss += t * t;
        const std::size_t nl = i + 1;
        if (x_(order[i], f) == x_(order[i + 1], f)) continue;
        if (nl < params_.min_leaf || n - nl < params_.min_leaf) continue;
        const double child = impurity(static_cast<double>(nl), ls, lss) +
                             impurity(static_cast<double>(n - nl), s - ls, ss - lss);
        if (child < best_child) {
          best_child = child;
          best_feature = static_cast<int>(f);
          best_threshold = x_(order[i], f);
        }
      }
    }
    if (best_feature < 0 || parent - best_child <= 1e-12) return make_leaf(rows);

    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      (x_(r, static_cast<std::size_t>(best_feature)) <= best_threshold ? left : right).push_back(r);
    }
    const std::size_t id = tree_.nodes.size();
    TreeNode node;
    node.feature = best_feature;
    node.threshold = best_threshold;
    tree_.nodes.push_back(node);
    rows.clear();
    rows.shrink_to_fit();
    const std::size_t l = grow(left, depth + 1);
    const std::size_t r = grow(right, depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  const Matrix& x_;
  std::span<const double> target_;
  TreeParams params_;
  num::Rng* rng_;
  LeafValue leaf_;
  Tree tree_;
};

double mean_target(std::span<const double> target, std::span<const std::size_t> rows) {
  double s = 0.0;
  for (std::size_t r : rows) s += target[r];
  return s / static_cast<double>(rows.size());
}

// --- Per-kind fitting --------------------------------------------------------

void fit_logistic(FittedModel& m, const Matrix& x, std::span<const double> t) {
  const double lambda = as_value(m.hyper, "lambda");
  const double lr = as_value(m.hyper, "lr");
  const std::size_t iterations = as_count(m.hyper, "iterations");
  const std::size_t n = x.rows(), e = x.cols();
  m.weights.assign(e, 0.0);
  m.bias = 0.0;
  std::vector<double> gw(e);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double err = sigmoid(dot(m.weights, x.row(i)) + m.bias) - t[i];
      for (std::size_t j = 0; j < e; ++j) gw[j] += err * x(i, j);
      gb += err;
    }
    for (std::size_t j = 0; j < e; ++j) {
      m.weights[j] -= lr * (gw[j] / static_cast<double>(n) + lambda * m.weights[j]);
    }
    m.bias -= lr * gb / static_cast<double>(n);
  }
}

// Pegasos on hinge + L2 with the bias as an extra constant feature.
void fit_svm(FittedModel& m, const Matrix& x, std::span<const int> y) {
  const double lambda = as_value(m.hyper, "lambda");
  const std::size_t epochs = as_count(m.hyper, "epochs");
  const std::size_t n = x.rows(), e = x.cols();
  std::vector<double> w(e + 1, 0.0);
  num::Rng rng(num::derive_seed(m.seed, "svm.order"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double radius = 1.0 / std::sqrt(lambda);
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const double margin = static_cast<double>(y[i]) * (dot({w.data(), e}, x.row(i)) + w[e]);
      const double shrink = 1.0 - eta * lambda;
      for (double& v : w) v *= shrink;
      if (margin < 1.0) {
        for (std::size_t j = 0; j < e; ++j) w[j] += eta * y[i] * x(i, j);
        w[e] += eta * y[i];
      }
      double norm = 0.0;
      for (double v : w) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > radius) {
        for (double& v : w) v *= radius / norm;
      }
    }
  }
  m.weights.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(e));
  m.bias = w[e];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::abs(dot(m.weights, x.row(i)) + m.bias);
  const double scale = total / static_cast<double>(n);
  m.margin_scale = scale > 1e-300 ? scale : 1.0;
}

void fit_gnb(FittedModel& m, const Matrix& x, std::span<const int> y) {
  const std::size_t n = x.rows(), e = x.cols();
  double max_var = 0.0;
  for (std::size_t j = 0; j < e; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += x(i, j);
    mu /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (x(i, j) - mu) * (x(i, j) - mu);
    max_var = std::max(max_var, v / static_cast<double>(n));
  }
  const double smoothing = std::max(as_value(m.hyper, "var_smoothing") * max_var,
                                    std::numeric_limits<double>::min());
  for (int c = 0; c < 2; ++c) {
    const int label = c == 0 ? -1 : 1;
    std::vector<double> mu(e, 0.0), var(e, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] != label) continue;
      ++count;
      for (std::size_t j = 0; j < e; ++j) mu[j] += x(i, j);
    }
    for (double& v : mu) v /= static_cast<double>(count);
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] != label) continue;
      for (std::size_t j = 0; j < e; ++j) var[j] += (x(i, j) - mu[j]) * (x(i, j) - mu[j]);
    }
    for (double& v : var) v = v / static_cast<double>(count) + smoothing;
    m.mean[c] = std::move(mu);
    m.var[c] = std::move(var);
    m.log_prior[c] = std::log(static_cast<double>(count) / static_cast<double>(n));
  }
}

void fit_forest(FittedModel& m, const Matrix& x, std::span<const double> t) {
  const std::size_t n = x.rows();
  const std::size_t trees = as_count(m.hyper, "trees");
  TreeParams params{as_count(m.hyper, "max_depth"), as_count(m.hyper, "min_leaf"),
                    as_count(m.hyper, "max_features")};
  if (params.max_features == 0) {
    params.max_features =
        static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(x.cols()))));
  }
  auto leaf = [t](std::span<const std::size_t> rows) { return mean_target(t, rows); };
  for (std::size_t k = 0; k < trees; ++k) {
    num::Rng rng(num::derive_seed(m.seed, "rf.tree." + std::to_string(k)));
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
    m.trees.push_back(TreeBuilder(x, t, params, &rng, leaf).build(std::move(rows)));
  }
}

void fit_boosting(FittedModel& m, const Matrix& x, std::span<const double> t) {
  const std::size_t n = x.rows();
  const std::size_t trees = as_count(m.hyper, "trees");
  const double shrinkage = as_value(m.hyper, "shrinkage");
  const TreeParams params{as_count(m.hyper, "max_depth"), as_count(m.hyper, "min_leaf"), 0};

  double prior = 0.0;
  for (double v : t) prior += v;
  prior /= static_cast<double>(n);
  m.base_score = std::log(prior / (1.0 - prior));

  std::vector<double> f(n, m.base_score), p(n), residual(n);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t k = 0; k < trees; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = sigmoid(f[i]);
      residual[i] = t[i] - p[i];
    }
    // One Newton step on the log-loss per leaf.
    auto leaf = [&](std::span<const std::size_t> rows) {
      double num = 0.0, den = 0.0;
      for (std::size_t r : rows) {
        num += residual[r];
        den += p[r] * (1.0 - p[r]);
      }
      return num / std::max(den, 1e-12);
    };
    Tree tree = TreeBuilder(x, residual, params, nullptr, leaf).build(all);
    for (std::size_t i = 0; i < n; ++i) f[i] += shrinkage * tree.predict(x.row(i));
    m.trees.push_back(std::move(tree));
  }
}

bool needs_both_classes(Kind kind) { return kind != Kind::kKnn; }

struct HyperSpec {
  const char* key;
  double fallback;
  bool integral;
  double min;  // inclusive
};

const std::vector<HyperSpec>& hyper_specs(Kind kind) {
  static const std::vector<HyperSpec> lr{
      {"lambda", 1e-4, false, 0.0}, {"iterations", 500, true, 1}, {"lr", 0.1, false, 0.0}};
  static const std::vector<HyperSpec> svm{{"lambda", 1e-4, false, 0.0}, {"epochs", 20, true, 1}};
  static const std::vector<HyperSpec> knn{{"k", 5, true, 1}};
  static const std::vector<HyperSpec> gnb{{"var_smoothing", 1e-9, false, 0.0}};
  static const std::vector<HyperSpec> dt{{"max_depth", 8, true, 1}, {"min_leaf", 5, true, 1}};
  static const std::vector<HyperSpec> rf{{"trees", 100, true, 1},
                                         {"max_depth", 8, true, 1},
                                         {"min_leaf", 5, true, 1},
                                         {"max_features", 0, true, 0}};
  static const std::vector<HyperSpec> gb{{"trees", 100, true, 0},
                                         {"max_depth", 3, true, 1},
                                         {"shrinkage", 0.1, false, 0.0},
                                         {"min_leaf", 1, true, 1}};
  switch (kind) {
    case Kind::kLogisticRegression: return lr;
    case Kind::kLinearSvm: return svm;
    case Kind::kKnn: return knn;
    case Kind::kGaussianNb: return gnb;
    case Kind::kDecisionTree: return dt;
    case Kind::kRandomForest: return rf;
    case Kind::kGradientBoosting: return gb;
  }
  throw ContractError("unknown classifier kind");
}

// lambda, lr and shrinkage must be strictly positive; counts may hit `min`.
bool strictly_positive(const HyperSpec& s) {
  return !s.integral && std::string_view(s.key) != "var_smoothing";
}

}  // namespace

const std::array<Kind, 7>& all_kinds() { return kKinds; }

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::kLogisticRegression: return "logistic-regression";
    case Kind::kLinearSvm: return "linear-svm";
    case Kind::kKnn: return "knn";
    case Kind::kGaussianNb: return "gaussian-nb";
    case Kind::kDecisionTree: return "decision-tree";
    case Kind::kRandomForest: return "random-forest";
    case Kind::kGradientBoosting: return "gradient-boosting";
  }
  return "unknown";
}

Kind parse_kind(std::string_view name) {
  for (Kind k : kKinds) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown classifier kind '" + std::string(name) + "'");
}

Hyper default_hyper(Kind kind) {
  Hyper h;
  for (const auto& s : hyper_specs(kind)) h[s.key] = s.fallback;
  return h;
}

Hyper resolve_hyper(Kind kind, const Hyper& overrides) {
  Hyper h = default_hyper(kind);
  const auto& specs = hyper_specs(kind);
  for (const auto& [key, value] : overrides) {
    auto spec = std::find_if(specs.begin(), specs.end(),
                             [&](const HyperSpec& s) { return key == s.key; });
    if (spec == specs.end()) {
      throw ConfigError("unknown hyperparameter '" + key + "' for " +
                        std::string(kind_name(kind)));
    }
    const std::string where = std::string(kind_name(kind)) + "." + key;
    if (!std::isfinite(value)) throw ConfigError(where + " must be finite");
    if (spec->integral && value != std::floor(value)) {
      throw ConfigError(where + " must be an integer");
    }
    if (strictly_positive(*spec) ? !(value > spec->min) : value < spec->min) {
      throw ConfigError(where + " is out of range");
    }
    h[key] = value;
  }
  return h;
}

double Tree::predict(std::span<const double> x) const {
  if (nodes.empty()) throw ContractError("empty tree");
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return nodes[i].value;
}

std::size_t Tree::depth() const {
  if (nodes.empty()) return 0;
  std::function<std::size_t(std::size_t)> walk = [&](std::size_t i) -> std::size_t {
    if (nodes[i].feature < 0) return 0;
    return 1 + std::max(walk(nodes[i].left), walk(nodes[i].right));
  };
  return walk(0);
}

FittedModel fit(Kind kind, const Hyper& hyper, const Matrix& x, std::span<const int> y,
                std::uint64_t seed) {
  if (x.rows() != y.size()) {
    throw ShapeError("feature matrix has " + std::to_string(x.rows()) + " rows, labels " +
                     std::to_string(y.size()));
  }
  if (x.rows() == 0) throw UnfittableError("no training samples");
  std::size_t positives = 0;
  for (int v : y) {
    if (v != 1 && v != -1) throw ContractError("labels must be -1 or +1");
    if (v == 1) ++positives;
  }
  if (needs_both_classes(kind) && (positives == 0 || positives == y.size())) {
    throw UnfittableError(std::string(kind_name(kind)) + " needs both classes in y");
  }

  FittedModel m;
  m.kind = kind;
  m.hyper = resolve_hyper(kind, hyper);
  m.seed = seed;
  m.dim = x.cols();

  std::vector<double> t(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i] > 0 ? 1.0 : 0.0;

  switch (kind) {
    case Kind::kLogisticRegression:
      fit_logistic(m, x, t);
      break;
    case Kind::kLinearSvm:
      fit_svm(m, x, y);
      break;
    case Kind::kKnn: {
      const std::size_t k = as_count(m.hyper, "k");
      if (x.rows() < k) {
        throw UnfittableError("knn needs at least k=" + std::to_string(k) + " samples");
      }
      m.train_x = x;
      m.train_y.assign(y.begin(), y.end());
      break;
    }
    case Kind::kGaussianNb:
      fit_gnb(m, x, y);
      break;
    case Kind::kDecisionTree: {
      std::vector<std::size_t> rows(x.rows());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      const TreeParams params{as_count(m.hyper, "max_depth"), as_count(m.hyper, "min_leaf"), 0};
      auto leaf = [&t](std::span<const std::size_t> r) { return mean_target(t, r); };
      m.trees.push_back(TreeBuilder(x, t, params, nullptr, leaf).build(std::move(rows)));
      break;
    }
    case Kind::kRandomForest:
      fit_forest(m, x, t);
      break;
    case Kind::kGradientBoosting:
      fit_boosting(m, x, t);
      break;
  }
  return m;
}

FittedModel fit(Kind kind, const Matrix& x, std::span<const int> y, std::uint64_t seed) {
  return fit(kind, {}, x, y, seed);
}

std::vector<double> predict_proba(const FittedModel& m, const Matrix& x) {
  if (x.cols() != m.dim) {
    throw ShapeError("model expects " + std::to_string(m.dim) + " features, got " +
                     std::to_string(x.cols()));
  }
  const std::size_t n = x.rows();
  std::vector<double> out(n);
  switch (m.kind) {
    case Kind::kLogisticRegression:
      for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid(dot(m.weights, x.row(i)) + m.bias);
      break;
    case Kind::kLinearSvm:
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = sigmoid((dot(m.weights, x.row(i)) + m.bias) / m.margin_scale);
      }
      break;
    case Kind::kKnn: {
      const std::size_t k = as_count(m.hyper, "k");
      std::vector<std::pair<double, std::size_t>> dist(m.train_x.rows());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < dist.size(); ++r) {
          double d = 0.0;
          for (std::size_t j = 0; j < m.dim; ++j) {
            const double diff = m.train_x(r, j) - x(i, j);
            d += diff * diff;
          }
          dist[r] = {d, r};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        std::size_t pos = 0;
        for (std::size_t r = 0; r < k; ++r) pos += m.train_y[dist[r].second] > 0 ? 1 : 0;
        out[i] = static_cast<double>(pos) / static_cast<double>(k);
      }
      break;
    }
    case Kind::kGaussianNb:
      for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 2> lj{};
        for (int c = 0; c < 2; ++c) {
          double s = m.log_prior[c];
          for (std::size_t j = 0; j < m.dim; ++j) {
            const double v = m.var[c][j];
            const double d = x(i, j) - m.mean[c][j];
            s -= 0.5 * (std::log(2.0 * std::numbers::pi * v) + d * d / v);
          }
          lj[c] = s;
        }
        out[i] = sigmoid(lj[1] - lj[0]);
      }
      break;
    case Kind::kDecisionTree:
    case Kind::kRandomForest:
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (const auto& t : m.trees) s += t.predict(x.row(i));
        out[i] = s / static_cast<double>(m.trees.size());
      }
      break;
    case Kind::kGradientBoosting: {
      const double shrinkage = as_value(m.hyper, "shrinkage");
      for (std::size_t i = 0; i < n; ++i) {
        double f = m.base_score;
        for (const auto& t : m.trees) f += shrinkage * t.predict(x.row(i));
        out[i] = sigmoid(f);
      }
      break;
    }
  }
  return out;
}

std::vector<int> predict(const FittedModel& model, const Matrix& x, double threshold) {
  const auto scores = predict_proba(model, x);
  std::vector<int> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? 1 : -1;
  return out;
}

}  // namespace ucf::downstream
