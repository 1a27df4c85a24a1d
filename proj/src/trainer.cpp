#include "ucf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ucf/error.hpp"
#include "ucf/io.hpp"
#include "ucf/numcore/rng.hpp"

namespace ucf::trainer {

using num::Matrix;
using num::Tape;
using num::Var;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (batch < 2) throw ConfigError("train.batch must be >= 2");
  if (auxiliary < 2) throw ConfigError("train.aux must be >= 2");
  if (!(margin > 0.0)) throw ConfigError("train.margin must be > 0");
  if (!(quantile > 0.0 && quantile < 1.0)) throw ConfigError("train.quantile must lie in (0, 1)");
  if (!(head_weight >= 0.0)) throw ConfigError("train.head_weight must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  if (tau.tau0 == 0.0) throw ConfigError("train.tau0 must be non-zero");
  if (!(tau.tau_min > 0.0 && tau.tau_min <= tau.tau_max)) {
    throw ConfigError("train.tau_min / train.tau_max must satisfy 0 < min <= max");
  }
}

std::string TrainLog::to_csv() const {
  std::string out = "stage,epoch,mean_loss,raw_tau,v0_norm,head_acc,seconds\n";
  for (const auto& r : records) {
    out += std::to_string(r.stage) + "," + std::to_string(r.epoch) + "," +
           io::format_double(r.mean_loss) + "," + io::format_double(r.raw_tau) + "," +
           io::format_double(r.v0_norm) + "," + io::format_double(r.head_acc) + "," +
           io::format_double(r.seconds) + "\n";
  }
  return out;
}

void TrainLog::append(const TrainLog& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw ContractError("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    if (g.size() != p.size()) throw ShapeError("Adam: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<double> mean_of_rows(const Matrix& z, std::size_t begin, std::size_t end) {
  std::vector<double> out(z.cols(), 0.0);
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) out[j] += z(i, j);
  for (double& v : out) v /= static_cast<double>(end - begin);
  return out;
}

double norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

}  // namespace

StageResult train_stage1(const data::Dataset& dataset, encoder::EncoderState enc,
                         const TrainConfig& cfg, const BatchObserver& observer,
                         const EpochObserver& on_epoch) {
  cfg.validate();
  StageResult result{std::move(enc), {}};
  if (cfg.stage1_epochs == 0) return result;

  const auto pool = dataset.train_indices();
  const auto positives = dataset.train_positive_indices();
  if (positives.size() < cfg.auxiliary) {
    throw InsufficientPositivesError("stage 1 needs M=" + std::to_string(cfg.auxiliary) +
                                     " labeled positives, dataset has " +
                                     std::to_string(positives.size()));
  }
  const std::size_t r = cfg.batch;
  const std::size_t m = cfg.auxiliary;
  const std::size_t batches = (pool.size() + r - 1) / r;

  num::Rng rng(num::derive_seed(cfg.seed, "trainer.stage1"));
  Adam adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  auto params = result.encoder.parameters();

  for (std::size_t epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0, tau_sum = 0.0, v0_sum = 0.0;
    std::size_t acc_hits = 0, acc_total = 0;

    for (std::size_t b = 0; b < batches; ++b) {
      const auto draw = conpu::sample_batches(pool, positives, r, m, rng);
      conpu::ContrastiveBatch batch;
      batch.batch = draw.batch;
      batch.auxiliary = draw.auxiliary;
      std::vector<std::size_t> slots = draw.batch;
      slots.insert(slots.end(), draw.auxiliary.begin(), draw.auxiliary.end());

      Tape tape;
      const auto gp = encoder::bind(tape, result.encoder, true);
      const Var z = encoder::encode_graph(tape, gp, result.encoder.config, dataset.features(slots));
      const Var logits = encoder::head_logits_graph(tape, gp, z);
      batch.z = tape.value(z);
      batch.probs = num::softmax_rows(tape.value(logits));
      batch.indicator.resize(slots.size());
      for (std::size_t j = 0; j < slots.size(); ++j) {
        const bool labeled = dataset.samples[slots[j]].labeled_positive();
        const std::array<double, 2> p{batch.probs(j, 0), batch.probs(j, 1)};
        batch.indicator[j] = conpu::indicator(labeled, p) ? 1 : 0;
        if (labeled) {
          ++acc_total;
          if (p[1] >= 0.5) ++acc_hits;
        }
      }
      conpu::candidate_sets(batch);
      if (observer) observer(batch);

      const auto v_d = mean_of_rows(batch.z, 0, r);
      const auto v_1 = mean_of_rows(batch.z, r, r + m);
      const double tau = conpu::adaptive_tau(v_d, epoch, cfg.tau);
      const auto v0 = conpu::direction_v0(v_d, v_1, cfg.tau);
      tau_sum += conpu::raw_tau(v_d, epoch);
      v0_sum += norm(v0);

      const Var contrastive = conpu::conpu_loss(tape, z, batch, tau, cfg.variant);

      // Naive PU targets on the training slots: D1 -> class 1, DU -> class 0.
      Matrix target(r, 2);
      for (std::size_t j = 0; j < r; ++j) {
        const bool labeled = dataset.samples[slots[j]].labeled_positive();
        target(j, labeled ? 1 : 0) = -1.0 / static_cast<double>(r);
      }
      const Var head_lp = tape.log_softmax_rows(tape.slice_rows(logits, 0, r));
      const Var bce = tape.sum(tape.hadamard(head_lp, tape.constant(std::move(target))));
      const Var total = tape.add(contrastive, tape.scale(bce, cfg.head_weight));

      const double contrastive_value = tape.scalar(contrastive);
      if (!std::isfinite(tape.scalar(total))) {
        throw NumericalError("non-finite loss in stage 1, epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(b));
      }
      loss_sum += contrastive_value;

      tape.backward(total);
      std::vector<Matrix> grads;
      grads.reserve(encoder::kParamCount);
      for (Var v : gp.vars) grads.push_back(tape.grad(v));
      adam.step(params, grads);
    }

    EpochRecord rec;
    rec.stage = 1;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(batches);
    rec.raw_tau = tau_sum / static_cast<double>(batches);
    rec.v0_norm = v0_sum / static_cast<double>(batches);
    rec.head_acc = acc_total ? static_cast<double>(acc_hits) / static_cast<double>(acc_total) : 0.0;
    rec.seconds = seconds_since(start);
    result.log.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::vector<std::size_t> lowest_quantile(std::span<const std::size_t> indices,
                                         std::span<const double> p_positive, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ContractError("quantile q must lie in (0, 1)");
  if (indices.size() != p_positive.size()) throw ShapeError("index/probability length mismatch");
  if (indices.empty()) throw ContractError("no unlabeled samples to mine pseudo-negatives from");
  std::vector<std::size_t> order(indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (p_positive[a] != p_positive[b]) return p_positive[a] < p_positive[b];
    return indices[a] < indices[b];
  });
  // The epsilon keeps q * n from rounding up past an exact integer.
  const auto count = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(indices.size()) - 1e-9));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < std::max<std::size_t>(count, 1); ++k) out.push_back(indices[order[k]]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> build_pseudo_negatives(const data::Dataset& dataset,
                                                const encoder::EncoderState& enc, double q) {
  const auto unlabeled = dataset.train_unlabeled_indices();
  if (unlabeled.empty()) throw ContractError("dataset has no unlabeled training samples");
  const Matrix z = encoder::encode_batch(enc, dataset.features(unlabeled));
  const Matrix probs = encoder::head_probs_batch(enc, z);
  std::vector<double> p(unlabeled.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = probs(i, 1);
  return lowest_quantile(unlabeled, p, q);
}

double triplet_loss(std::span<const double> a, std::span<const double> p,
                    std::span<const double> n, double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw ShapeError("triplet dimension mismatch");
  double dap = 0.0, dan = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dap += (a[i] - p[i]) * (a[i] - p[i]);
    dan += (a[i] - n[i]) * (a[i] - n[i]);
  }
  return std::max(0.0, margin + dap - dan);
}

StageResult train_stage2(const data::Dataset& dataset, encoder::EncoderState enc,
                         const TrainConfig& cfg, const EpochObserver& on_epoch) {
  cfg.validate();
  StageResult result{std::move(enc), {}};
  if (cfg.stage2_epochs == 0) return result;

  const auto positives = dataset.train_positive_indices();
  if (positives.size() < 2) {
    throw InsufficientPositivesError("stage 2 needs at least two labeled positives");
  }
  const std::size_t r = cfg.batch;
  const std::size_t per_epoch = (positives.size() + r - 1) / r * r;

  num::Rng rng(num::derive_seed(cfg.seed, "trainer.stage2"));
  Adam adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  auto all_params = result.encoder.parameters();
  const std::span<Matrix* const> enc_params(all_params.data(), encoder::kEncoderParamCount);

  for (std::size_t epoch = 1; epoch <= cfg.stage2_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto negatives = build_pseudo_negatives(dataset, result.encoder, cfg.quantile);

    {
      const Matrix zp = encoder::encode_batch(result.encoder, dataset.features(positives));
      const Matrix pp = encoder::head_probs_batch(result.encoder, zp);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < pp.rows(); ++i)
        if (pp(i, 1) >= 0.5) ++hits;
      EpochRecord rec;
      rec.stage = 2;
      rec.epoch = epoch;
      rec.head_acc = static_cast<double>(hits) / static_cast<double>(pp.rows());
      result.log.records.push_back(rec);
    }

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t done = 0; done < per_epoch; done += r) {
      std::vector<std::size_t> rows(3 * r);
      for (std::size_t k = 0; k < r; ++k) {
        const std::size_t a = rng.below(positives.size());
        std::size_t p = rng.below(positives.size() - 1);
        if (p >= a) ++p;
        rows[k] = positives[a];
        rows[r + k] = positives[p];
        rows[2 * r + k] = negatives[rng.below(negatives.size())];
      }

      Tape tape;
      const auto gp = encoder::bind(tape, result.encoder, true);
      const Var z = encoder::encode_graph(tape, gp, result.encoder.config, dataset.features(rows));
      const Var za = tape.slice_rows(z, 0, r);
      const Var dp = tape.sub(za, tape.slice_rows(z, r, 2 * r));
      const Var dn = tape.sub(za, tape.slice_rows(z, 2 * r, 3 * r));
      const Var gap =
          tape.sub(tape.row_sums(tape.hadamard(dp, dp)), tape.row_sums(tape.hadamard(dn, dn)));
      const Var hinge = tape.relu(tape.add(gap, tape.constant(Matrix(r, 1, cfg.margin))));
      const Var loss = tape.scale(tape.sum(hinge), 1.0 / static_cast<double>(r));

      const double value = tape.scalar(loss);
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss in stage 2, epoch " + std::to_string(epoch));
      }
      loss_sum += value;
      ++steps;

      tape.backward(loss);
      std::vector<Matrix> grads;
      for (std::size_t k = 0; k < encoder::kEncoderParamCount; ++k) {
        grads.push_back(tape.grad(gp.vars[k]));
      }
      adam.step(enc_params, grads);
    }

    auto& rec = result.log.records.back();
    rec.mean_loss = loss_sum / static_cast<double>(steps);
    rec.seconds = seconds_since(start);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace ucf::trainer
