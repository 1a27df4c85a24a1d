#include "ucf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "ucf/error.hpp"
#include "ucf/io.hpp"
#include "ucf/numcore/rng.hpp"

namespace ucf::eval {

namespace {

void check_labels(std::span<const int> y) {
  for (int v : y) {
    if (v != 1 && v != -1) throw ContractError("labels must be -1 or +1");
  }
}

double safe_ratio(std::size_t num, std::size_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void append_confusion(std::string& out, const ConfusionMatrix& cm, const std::string& pad) {
  out += pad + "\"tp\": " + std::to_string(cm.tp) + ",\n";
  out += pad + "\"fp\": " + std::to_string(cm.fp) + ",\n";
  out += pad + "\"fn\": " + std::to_string(cm.fn) + ",\n";
  out += pad + "\"tn\": " + std::to_string(cm.tn) + ",\n";
}

void append_metrics(std::string& out, const Metrics& m, double auc, const std::string& pad) {
  out += pad + "\"accuracy\": " + io::format_double(m.accuracy) + ",\n";
  out += pad + "\"precision\": " + io::format_double(m.precision) + ",\n";
  out += pad + "\"recall\": " + io::format_double(m.recall) + ",\n";
  out += pad + "\"f1\": " + io::format_double(m.f1) + ",\n";
  out += pad + "\"auc\": " + io::format_double(auc) + "\n";
}

std::string json_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

Matrix squared_distances(const Matrix& x) {
  const std::size_t n = x.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) {
        const double diff = x(i, k) - x(j, k);
        s += diff * diff;
      }
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

// Student-t kernel values and their off-diagonal sum.
double student_t(const Matrix& y, Matrix& num) {
  const std::size_t n = y.rows();
  num = Matrix(n, n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y(i, 0) - y(j, 0);
      const double dy = y(i, 1) - y(j, 1);
      const double v = 1.0 / (1.0 + dx * dx + dy * dy);
      num(i, j) = v;
      num(j, i) = v;
      z += 2.0 * v;
    }
  }
  return z;
}

Matrix kl_gradient(const Matrix& p, const Matrix& y, double exaggeration) {
  Matrix num;
  const double z = student_t(y, num);
  const std::size_t n = y.rows();
  Matrix grad(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double m = 4.0 * (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
      grad(i, 0) += m * (y(i, 0) - y(j, 0));
      grad(i, 1) += m * (y(i, 1) - y(j, 1));
    }
  }
  return grad;
}

}  // namespace

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw ShapeError("y_true has " + std::to_string(y_true.size()) + " labels, y_pred " +
                     std::to_string(y_pred.size()));
  }
  check_labels(y_true);
  check_labels(y_pred);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] > 0) {
      (y_pred[i] > 0 ? cm.tp : cm.fn) += 1;
    } else {
      (y_pred[i] > 0 ? cm.fp : cm.tn) += 1;
    }
  }
  return cm;
}

Metrics classification_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ContractError("confusion matrix is empty");
  Metrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  m.precision = safe_ratio(cm.tp, cm.tp + cm.fp, m.precision_undefined);
  m.recall = safe_ratio(cm.tp, cm.tp + cm.fn, m.recall_undefined);
  const double s = m.precision + m.recall;
  m.f1 = s > 0.0 ? 2.0 * m.precision * m.recall / s : 0.0;
  return m;
}

double roc_auc(std::span<const int> y_true, std::span<const double> scores) {
  if (y_true.size() != scores.size()) throw ShapeError("label/score length mismatch");
  check_labels(y_true);
  const std::size_t n = y_true.size();
  std::size_t pos = 0;
  for (int v : y_true) pos += v > 0 ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("ROC-AUC needs both classes present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (y_true[order[k]] > 0) rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

std::vector<RocPoint> roc_curve(std::span<const int> y_true, std::span<const double> scores) {
  if (y_true.size() != scores.size()) throw ShapeError("label/score length mismatch");
  check_labels(y_true);
  const std::size_t n = y_true.size();
  std::size_t pos = 0;
  for (int v : y_true) pos += v > 0 ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("ROC curve needs both classes present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (y_true[order[j]] > 0 ? tp : fp) += 1;
      ++j;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                     static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> y, std::size_t k,
                                                       std::uint64_t seed) {
  if (k < 2) throw ContractError("k-fold needs k >= 2");
  check_labels(y);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (int label : {-1, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == label) members.push_back(i);
    }
    if (members.size() < k) {
      throw StratificationError("class " + std::to_string(label) + " has " +
                                std::to_string(members.size()) + " members, fewer than k=" +
                                std::to_string(k));
    }
    num::Rng rng(num::derive_seed(seed, label > 0 ? "cv.class.positive" : "cv.class.negative"));
    rng.shuffle(members);
    for (std::size_t idx : members) folds[next++ % k].push_back(idx);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

MetricsReport kfold_cv(const Matrix& x, std::span<const int> y, std::size_t k,
                       downstream::Kind kind, const downstream::Hyper& hyper, std::uint64_t seed) {
  if (x.rows() != y.size()) throw ShapeError("feature/label row mismatch");
  const auto folds = stratified_folds(y, k, seed);

  MetricsReport report;
  report.classifier = std::string(downstream::kind_name(kind));
  report.seed = seed;
  report.out_of_fold_scores.assign(y.size(), 0.0);

  std::vector<char> in_test(y.size());
  for (std::size_t f = 0; f < k; ++f) {
    std::fill(in_test.begin(), in_test.end(), 0);
    for (std::size_t i : folds[f]) in_test[i] = 1;
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!in_test[i]) train.push_back(i);
    }
    auto gather = [&](const std::vector<std::size_t>& rows, Matrix& xs, std::vector<int>& ys) {
      xs = Matrix(rows.size(), x.cols());
      ys.resize(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) xs(r, c) = x(rows[r], c);
        ys[r] = y[rows[r]];
      }
    };
    Matrix x_train, x_test;
    std::vector<int> y_train, y_test;
    gather(train, x_train, y_train);
    gather(folds[f], x_test, y_test);

    const auto model = downstream::fit(kind, hyper, x_train, y_train,
                                       num::derive_seed(seed, "cv.fold." + std::to_string(f)));
    const auto scores = downstream::predict_proba(model, x_test);
    std::vector<int> pred(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      pred[i] = scores[i] >= 0.5 ? 1 : -1;
      report.out_of_fold_scores[folds[f][i]] = scores[i];
    }

    FoldResult fr;
    fr.fold = f;
    fr.cm = confusion(y_test, pred);
    fr.metrics = classification_metrics(fr.cm);
    fr.auc = roc_auc(y_test, scores);
    report.folds.push_back(fr);

    report.pooled.tp += fr.cm.tp;
    report.pooled.fp += fr.cm.fp;
    report.pooled.fn += fr.cm.fn;
    report.pooled.tn += fr.cm.tn;
    report.aggregate.accuracy += fr.metrics.accuracy;
    report.aggregate.precision += fr.metrics.precision;
    report.aggregate.recall += fr.metrics.recall;
    report.aggregate.f1 += fr.metrics.f1;
    report.aggregate.precision_undefined |= fr.metrics.precision_undefined;
    report.aggregate.recall_undefined |= fr.metrics.recall_undefined;
    report.aggregate_auc += fr.auc;
  }
  const double kk = static_cast<double>(k);
  report.aggregate.accuracy /= kk;
  report.aggregate.precision /= kk;
  report.aggregate.recall /= kk;
  report.aggregate.f1 /= kk;
  report.aggregate_auc /= kk;
  return report;
}

std::string MetricsReport::to_json() const {
  std::string out = "{\n";
  out += "  \"classifier\": " + json_string(classifier) + ",\n";
  out += "  \"seed\": " + std::to_string(seed) + ",\n";
  out += "  \"dataset\": " + json_string(dataset_digest) + ",\n";
  out += "  \"folds\": [\n";
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const auto& f = folds[i];
    out += "    {\n      \"fold\": " + std::to_string(f.fold) + ",\n";
    append_confusion(out, f.cm, "      ");
    append_metrics(out, f.metrics, f.auc, "      ");
    out += i + 1 < folds.size() ? "    },\n" : "    }\n";
  }
  out += "  ],\n  \"aggregate\": {\n";
  append_confusion(out, pooled, "    ");
  append_metrics(out, aggregate, aggregate_auc, "    ");
  out += "  }\n}";
  return out;
}

std::string reports_to_json(std::span<const MetricsReport> reports) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out += reports[i].to_json();
    out += i + 1 < reports.size() ? ",\n" : "\n";
  }
  return out + "]\n";
}

// --- t-SNE --------------------------------------------------------------------

void TsneConfig::validate(std::size_t n) const {
  if (n < 10) throw ConfigError("t-SNE needs at least 10 points, got " + std::to_string(n));
  if (n > kTsneMaxPoints) {
    throw ConfigError("exact t-SNE is limited to " + std::to_string(kTsneMaxPoints) +
                      " points, got " + std::to_string(n) +
                      "; set eval.tsne_subsample to project a subsample");
  }
  if (!(perplexity > 0.0) || !(perplexity < static_cast<double>(n) / 3.0)) {
    throw ConfigError("t-SNE perplexity must lie in (0, n/3)");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("t-SNE learning rate must be > 0");
  if (!(exaggeration > 0.0)) throw ConfigError("t-SNE exaggeration must be > 0");
}

Matrix tsne_affinities(const Matrix& x, double perplexity) {
  const std::size_t n = x.rows();
  const Matrix d = squared_distances(x);
  const double target = std::log(perplexity);
  Matrix cond(n, n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, d(i, j));
    }
    double beta = 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 50; ++step) {
      // Shifting by the nearest distance leaves P and H unchanged but avoids underflow.
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-(d(i, j) - dmin) * beta);
        sum += row[j];
        weighted += (d(i, j) - dmin) * row[j];
      }
      const double h = std::log(sum) + beta * weighted / sum;
      for (std::size_t j = 0; j < n; ++j) cond(i, j) = row[j] / sum;
      const double diff = h - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
  }
  Matrix p(n, n);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) p(i, j) = (cond(i, j) + cond(j, i)) * scale;
  }
  return p;
}

double tsne_kl(const Matrix& p, const Matrix& y) {
  Matrix num;
  const double z = student_t(y, num);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j) {
      if (i == j || p(i, j) <= 0.0) continue;
      kl += p(i, j) * std::log(p(i, j) * z / num(i, j));
    }
  }
  return kl;
}

Matrix tsne_kl_gradient(const Matrix& p, const Matrix& y) { return kl_gradient(p, y, 1.0); }

TsneResult tsne(const Matrix& x, const TsneConfig& cfg) {
  const std::size_t n = x.rows();
  cfg.validate(n);
  const Matrix p = tsne_affinities(x, cfg.perplexity);

  num::Rng rng(num::derive_seed(cfg.seed, "tsne.init"));
  Matrix y(n, 2);
  for (double& v : y.data()) v = 1e-2 * rng.normal();  // variance 1e-4

  TsneResult result;
  result.kl_initial = tsne_kl(p, y);
  Matrix update(n, 2);
  Matrix gains(n, 2, 1.0);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double exaggeration = it < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
    const double momentum = it < cfg.momentum_switch ? cfg.momentum_initial : cfg.momentum_final;
    const Matrix grad = kl_gradient(p, y, exaggeration);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        double& g = gains(i, c);
        const bool same_sign = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
        g = same_sign ? g * 0.8 : g + 0.2;
        g = std::max(g, 0.01);
        update(i, c) = momentum * update(i, c) - cfg.learning_rate * g * grad(i, c);
        y(i, c) += update(i, c);
      }
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y(i, c) -= mean;
    }
  }
  if (!y.all_finite()) throw NumericalError("t-SNE diverged to non-finite coordinates");
  result.kl_final = tsne_kl(p, y);
  result.coords = std::move(y);
  return result;
}

// --- SVG -----------------------------------------------------------------------

namespace {

constexpr double kSize = 480.0;
constexpr double kMargin = 48.0;
constexpr const char* kPositiveColour = "#d62728";
constexpr const char* kNegativeColour = "#1f77b4";
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string svg_open(const std::string& title) {
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" "
                    "viewBox=\"0 0 480 480\">\n";
  out += "<rect x=\"0\" y=\"0\" width=\"480\" height=\"480\" fill=\"white\"/>\n";
  out += "<text x=\"240\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" + xml_escape(title) + "</text>\n";
  return out;
}

}  // namespace

std::string scatter_svg(const Matrix& coords, std::span<const int> labels,
                        const std::string& title) {
  if (coords.cols() != 2) throw ShapeError("scatter needs n x 2 coordinates");
  if (coords.rows() != labels.size()) throw ShapeError("coordinate/label count mismatch");
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (coords.rows() > 0) {
    xmin = xmax = coords(0, 0);
    ymin = ymax = coords(0, 1);
    for (std::size_t i = 0; i < coords.rows(); ++i) {
      xmin = std::min(xmin, coords(i, 0));
      xmax = std::max(xmax, coords(i, 0));
      ymin = std::min(ymin, coords(i, 1));
      ymax = std::max(ymax, coords(i, 1));
    }
  }
  const double span_x = xmax > xmin ? xmax - xmin : 1.0;
  const double span_y = ymax > ymin ? ymax - ymin : 1.0;
  const double inner = kSize - 2.0 * kMargin;

  std::string out = svg_open(title);
  // Negatives first so the usually sparser positives stay visible on top.
  for (int pass : {-1, 1}) {
    const char* colour = pass > 0 ? kPositiveColour : kNegativeColour;
    for (std::size_t i = 0; i < coords.rows(); ++i) {
      if (labels[i] != pass) continue;
      const double px = kMargin + (coords(i, 0) - xmin) / span_x * inner;
      const double py = kSize - kMargin - (coords(i, 1) - ymin) / span_y * inner;
      out += "<circle cx=\"" + fmt("%.2f", px) + "\" cy=\"" + fmt("%.2f", py) +
             "\" r=\"2.5\" fill=\"" + colour + "\" fill-opacity=\"0.7\"/>\n";
    }
  }
  out += std::string("<circle cx=\"60\" cy=\"456\" r=\"4\" fill=\"") + kPositiveColour + "\"/>\n";
  out += "<text x=\"70\" y=\"460\" font-family=\"sans-serif\" font-size=\"12\">positive</text>\n";
  out += std::string("<circle cx=\"150\" cy=\"456\" r=\"4\" fill=\"") + kNegativeColour + "\"/>\n";
  out += "<text x=\"160\" y=\"460\" font-family=\"sans-serif\" font-size=\"12\">negative</text>\n";
  return out + "</svg>\n";
}

std::string roc_svg(std::span<const RocSeries> series, const std::string& title) {
  const double inner = kSize - 2.0 * kMargin;
  auto px = [&](double fpr) { return kMargin + fpr * inner; };
  auto py = [&](double tpr) { return kSize - kMargin - tpr * inner; };

  std::string out = svg_open(title);
  out += "<rect x=\"48\" y=\"48\" width=\"384\" height=\"384\" fill=\"none\" stroke=\"black\"/>\n";
  out += "<line x1=\"48\" y1=\"432\" x2=\"432\" y2=\"48\" stroke=\"#999999\" "
         "stroke-dasharray=\"4 4\"/>\n";
  out += "<text x=\"240\" y=\"462\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">false positive rate</text>\n";
  out += "<text x=\"16\" y=\"240\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 16 240)\">true positive rate</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kPalette[s % std::size(kPalette)];
    std::string pts;
    for (const auto& p : series[s].curve) {
      if (!pts.empty()) pts += ' ';
      pts += fmt("%.2f", px(p.fpr)) + "," + fmt("%.2f", py(p.tpr));
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(colour) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = 270.0 + 16.0 * static_cast<double>(s);
    out += "<text x=\"250\" y=\"" + fmt("%.0f", ly) + "\" font-family=\"sans-serif\" "
           "font-size=\"11\" fill=\"" + colour + "\">" + xml_escape(series[s].name) +
           " (AUC " + fmt("%.4f", series[s].auc) + ")</text>\n";
  }
  return out + "</svg>\n";
}

}  // namespace ucf::eval
