#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ucf/conpu.hpp"
#include "ucf/datagen.hpp"
#include "ucf/encoder.hpp"

namespace ucf::trainer {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 32;      // R
  std::size_t auxiliary = 16;  // M
  std::size_t stage1_epochs = 20;
  std::size_t stage2_epochs = 20;
  double margin = 1.0;
  double quantile = 0.2;       // pseudo-negative quantile q
  double head_weight = 1.0;    // lambda on the head cross-entropy
  std::uint64_t seed = 0;
  conpu::LossVariant variant = conpu::LossVariant::kEq4Weighted;
  conpu::TauParams tau;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct EpochRecord {
  int stage = 1;
  std::size_t epoch = 0;
  double mean_loss = 0.0;  // ConPU loss (stage 1) or triplet loss (stage 2)
  double raw_tau = 0.0;    // unclamped adaptive temperature; 0 in stage 2
  double v0_norm = 0.0;    // 0 in stage 2
  double head_acc = 0.0;   // share of labeled positives with p+ >= 0.5
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> records;

  // stage,epoch,mean_loss,raw_tau,v0_norm,head_acc,seconds
  std::string to_csv() const;
  void append(const TrainLog& other);
};

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps);

  // One bias-corrected update of every parameter with its gradient.
  void step(std::span<num::Matrix* const> params, std::span<const num::Matrix> grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<num::Matrix> m_, v_;
};

// Called once per Stage-1 batch after the candidate sets are built.
using BatchObserver = std::function<void(const conpu::ContrastiveBatch&)>;
// Called after every epoch with its log record.
using EpochObserver = std::function<void(const EpochRecord&)>;

struct StageResult {
  encoder::EncoderState encoder;
  TrainLog log;
};

// Contrastive PU training of encoder + head on the training split. Per batch:
// sample (S, S_a), encode, head probabilities, indicators, sets, tau, v0,
// then Adam on ConPU loss + head_weight * head cross-entropy (labeled
// positives target 1, unlabeled target 0).
StageResult train_stage1(const data::Dataset& dataset, encoder::EncoderState encoder,
                         const TrainConfig& cfg, const BatchObserver& observer = {},
                         const EpochObserver& on_epoch = {});

// Unlabeled training samples whose head p+ falls in the lowest q-quantile:
// the ceil(q * |DU|) smallest, ties by ascending dataset index.
std::vector<std::size_t> build_pseudo_negatives(const data::Dataset& dataset,
                                                const encoder::EncoderState& encoder, double q);

// Same selection from precomputed (index, p+) pairs.
std::vector<std::size_t> lowest_quantile(std::span<const std::size_t> indices,
                                         std::span<const double> p_positive, double q);

// max(0, margin + |a - p|^2 - |a - n|^2).
double triplet_loss(std::span<const double> a, std::span<const double> p,
                    std::span<const double> n, double margin);

// Triplet refinement of the encoder with the head frozen. Pseudo-negatives
// are re-mined at the start of every epoch.
StageResult train_stage2(const data::Dataset& dataset, encoder::EncoderState encoder,
                         const TrainConfig& cfg, const EpochObserver& on_epoch = {});

}  // namespace ucf::trainer
