#include "ucf/conpu.hpp"

#include <algorithm>
#include <cmath>

#include "ucf/error.hpp"

namespace ucf::conpu {

void TauParams::validate() const {
  if (tau0 == 0.0) throw ContractError("tau0 must be non-zero");
  if (!(tau_min > 0.0 && tau_min <= tau_max)) {
    throw ContractError("tau clamp range must satisfy 0 < tau_min <= tau_max");
  }
}

BatchDraw sample_batches(std::span<const std::size_t> pool, std::span<const std::size_t> positives,
                         std::size_t r, std::size_t m, num::Rng& rng) {
  if (r < 2 || m < 2) throw ContractError("batch sizes R and M must both be >= 2");
  if (r > pool.size()) {
    throw ContractError("R=" + std::to_string(r) + " exceeds dataset size " +
                        std::to_string(pool.size()));
  }
  if (m > positives.size()) {
    throw InsufficientPositivesError("M=" + std::to_string(m) + " exceeds the " +
                                     std::to_string(positives.size()) + " labeled positives");
  }
  BatchDraw draw;
  for (std::size_t i : rng.sample_without_replacement(pool.size(), r)) draw.batch.push_back(pool[i]);
  for (std::size_t i : rng.sample_without_replacement(positives.size(), m))
    draw.auxiliary.push_back(positives[i]);
  return draw;
}

BatchDraw sample_batches(std::span<const std::size_t> pool, std::span<const std::size_t> positives,
                         std::size_t r, std::size_t m, std::uint64_t seed) {
  num::Rng rng(seed);
  return sample_batches(pool, positives, r, m, rng);
}

double component_stddev(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

double raw_tau(std::span<const double> v_d, std::size_t epoch) {
  if (epoch == 0) throw ContractError("epoch is 1-based; epoch 0 divides by ln(1) = 0");
  return component_stddev(v_d) / std::log(1.0 + static_cast<double>(epoch));
}

double adaptive_tau(std::span<const double> v_d, std::size_t epoch, const TauParams& params) {
  const double raw = raw_tau(v_d, epoch);
  if (component_stddev(v_d) < 1e-12) return params.tau_min;
  return std::clamp(raw, params.tau_min, params.tau_max);
}

std::vector<double> direction_v0(std::span<const double> v_d, std::span<const double> v_1,
                                 const TauParams& params) {
  if (params.tau0 == 0.0) throw ContractError("tau0 must be non-zero");
  if (v_d.size() != v_1.size()) {
    throw ShapeError("v_D has " + std::to_string(v_d.size()) + " dims, v_1 has " +
                     std::to_string(v_1.size()));
  }
  std::vector<double> out(v_d.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (v_d[i] - params.tau1 * v_1[i]) / params.tau0;
  return out;
}

bool indicator(bool labeled_positive, std::array<double, 2> probs) {
  return labeled_positive || probs[1] >= 0.5;
}

void candidate_sets(ContrastiveBatch& b) {
  const std::size_t n = b.slots();
  if (b.indicator.size() != n) {
    throw ContractError("indicators must be computed for all " + std::to_string(n) + " slots");
  }
  b.candidates.assign(b.anchors(), {});
  b.positives.assign(b.anchors(), {});
  b.negatives.assign(b.anchors(), {});
  for (std::size_t i = 0; i < b.anchors(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      b.candidates[i].push_back(j);
      (b.indicator[j] ? b.positives[i] : b.negatives[i]).push_back(j);
    }
  }
}

double pair_loss(const ContrastiveBatch& b, std::size_t anchor, std::size_t partner, double tau) {
  if (!(tau > 0.0)) throw ContractError("tau must be > 0");
  if (anchor >= b.candidates.size()) throw ContractError("anchor has no candidate set");
  const auto& cand = b.candidates[anchor];
  if (std::find(cand.begin(), cand.end(), partner) == cand.end()) {
    throw ContractError("partner slot " + std::to_string(partner) + " is not in A(" +
                        std::to_string(anchor) + ")");
  }
  auto sim = [&](std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < b.z.cols(); ++k) s += b.z(anchor, k) * b.z(j, k);
    return s / tau;
  };
  double mx = -INFINITY;
  for (std::size_t j : cand) mx = std::max(mx, sim(j));
  double total = 0.0;
  for (std::size_t j : cand) total += std::exp(sim(j) - mx);
  return -(sim(partner) - mx - std::log(total));
}

double uncertainty_weight(std::array<double, 2> probs) {
  if (probs[0] < 0.0 || probs[1] < 0.0 || std::abs(probs[0] + probs[1] - 1.0) > 1e-9) {
    throw ContractError("probabilities must lie on the 1-simplex");
  }
  return 1.0 - std::max(probs[0], probs[1]);
}

num::Var conpu_loss(num::Tape& tape, num::Var z, const ContrastiveBatch& b, double tau,
                    LossVariant variant) {
  const std::size_t r = b.anchors();
  const std::size_t n = b.slots();
  if (r == 0) throw ContractError("conpu_loss needs at least one anchor");
  if (!(tau > 0.0)) throw ContractError("tau must be > 0");
  if (tape.value(z).rows() != n) {
    throw ShapeError("embedding node has " + std::to_string(tape.value(z).rows()) +
                     " rows, batch has " + std::to_string(n) + " slots");
  }
  if (b.candidates.size() != r) throw ContractError("candidate_sets() has not been run");

  Matrix mask(r, n);
  Matrix coef(r, n);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j : b.candidates[i]) mask(i, j) = 1.0;
    const auto& chosen = b.indicator[i] ? b.positives[i] : b.negatives[i];
    if (chosen.empty()) continue;
    double c = 1.0 / static_cast<double>(r);
    if (variant == LossVariant::kEq4Weighted) {
      c *= uncertainty_weight({b.probs(i, 0), b.probs(i, 1)}) / static_cast<double>(chosen.size());
    }
    for (std::size_t j : chosen) coef(i, j) = c;
  }

  const num::Var anchors = tape.slice_rows(z, 0, r);
  const num::Var sim = tape.scale(tape.matmul(anchors, tape.transpose(z)), 1.0 / tau);
  const num::Var log_probs = tape.log_softmax_rows(sim, mask);
  const num::Var weighted = tape.hadamard(log_probs, tape.constant(std::move(coef)));
  return tape.scale(tape.sum(weighted), -1.0);
}

double conpu_loss_value(const ContrastiveBatch& batch, double tau, LossVariant variant) {
  num::Tape tape;
  const num::Var z = tape.constant(batch.z);
  return tape.scalar(conpu_loss(tape, z, batch, tau, variant));
}

}  // namespace ucf::conpu
