#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ucf/numcore/matrix.hpp"
#include "ucf/numcore/rng.hpp"
#include "ucf/numcore/tape.hpp"

namespace ucf::conpu {

using num::Matrix;

struct TauParams {
  double tau0 = 1.0;  // overall scale of the direction vector
  double tau1 = 0.5;  // weight of the positive-anchor mean
  double tau_min = 0.05;
  double tau_max = 5.0;

  void validate() const;
};

enum class LossVariant { kEq3Unweighted, kEq4Weighted };

// One training step's worth of contrastive material.
//
// Slots [0, R) hold the training batch S, slots [R, R+M) the auxiliary batch
// of labeled positives. Only the R training slots act as anchors; the sets
// A/B1/B0 hold slot indices and are indexed by anchor.
struct ContrastiveBatch {
  std::vector<std::size_t> batch;      // S, dataset indices
  std::vector<std::size_t> auxiliary;  // S_a, dataset indices
  Matrix z;                            // (R+M) x embed_dim, unit rows
  std::vector<std::uint8_t> indicator; // I(x) per slot
  Matrix probs;                        // (R+M) x 2 head probabilities
  std::vector<std::vector<std::size_t>> candidates;  // A(i)
  std::vector<std::vector<std::size_t>> positives;   // B1(i)
  std::vector<std::vector<std::size_t>> negatives;   // B0(i)

  std::size_t anchors() const { return batch.size(); }
  std::size_t slots() const { return batch.size() + auxiliary.size(); }
};

struct BatchDraw {
  std::vector<std::size_t> batch;
  std::vector<std::size_t> auxiliary;
};

// S uniformly without replacement from `pool` (D1 u DU), S_a uniformly
// without replacement from `positives` (D1). The two draws may share samples.
BatchDraw sample_batches(std::span<const std::size_t> pool, std::span<const std::size_t> positives,
                         std::size_t r, std::size_t m, num::Rng& rng);
BatchDraw sample_batches(std::span<const std::size_t> pool, std::span<const std::size_t> positives,
                         std::size_t r, std::size_t m, std::uint64_t seed);

// Population standard deviation of the components of v.
double component_stddev(std::span<const double> v);

// sigma(v_D) / ln(1 + epoch) without clamping; epoch is 1-based.
double raw_tau(std::span<const double> v_d, std::size_t epoch);

// raw_tau clamped to [tau_min, tau_max]; tau_min when sigma(v_D) < 1e-12.
double adaptive_tau(std::span<const double> v_d, std::size_t epoch, const TauParams& params);

// (v_D - tau1 * v_1) / tau0.
std::vector<double> direction_v0(std::span<const double> v_d, std::span<const double> v_1,
                                 const TauParams& params);

// Labeled positives are always positive; otherwise p+ >= 0.5.
bool indicator(bool labeled_positive, std::array<double, 2> probs);

// Fills candidates / positives / negatives from `indicator`.
void candidate_sets(ContrastiveBatch& batch);

// -ln softmax over A(i) of z_i . z_a / tau, evaluated at partner p.
double pair_loss(const ContrastiveBatch& batch, std::size_t anchor, std::size_t partner, double tau);

// 1 - max(p0, p1).
double uncertainty_weight(std::array<double, 2> probs);

// Differentiable loss in the batch embeddings `z` (a (R+M) x e node on `tape`).
// Indicators, weights and tau are constants.
num::Var conpu_loss(num::Tape& tape, num::Var z, const ContrastiveBatch& batch, double tau,
                    LossVariant variant);

// Same value on the batch's stored embeddings.
double conpu_loss_value(const ContrastiveBatch& batch, double tau, LossVariant variant);

}  // namespace ucf::conpu
