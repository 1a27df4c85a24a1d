#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ucf/datagen.hpp"
#include "ucf/downstream.hpp"
#include "ucf/encoder.hpp"
#include "ucf/evaluation.hpp"
#include "ucf/trainer.hpp"

namespace ucf::cli {

// Everything a run needs. Keys (closed schema, unknown keys are fatal):
//   root.seed
//   gen.n_total gen.n_labeled gen.positive_prior gen.separation
//   gen.noise_fraction gen.val_fraction gen.val_prevalence gen.balanced_val
//   encoder.token_dim encoder.hidden encoder.heads encoder.embed_dim
//   train.lr train.batch train.aux train.stage1_epochs train.stage2_epochs
//   train.margin train.quantile train.head_weight train.variant (eq3|eq4)
//   train.tau0 train.tau1 train.tau_min train.tau_max
//   train.beta1 train.beta2 train.eps
//   eval.folds eval.classifiers (comma list or "all")
//   eval.tsne_perplexity eval.tsne_iterations eval.tsne_learning_rate
//   eval.tsne_exaggeration eval.tsne_exaggeration_iterations eval.tsne_subsample
//   clf.<classifier>.<hyperparameter>
struct RunConfig {
  std::uint64_t seed = 0;
  data::GenConfig gen;
  encoder::EncoderConfig encoder;
  trainer::TrainConfig train;
  std::size_t folds = 5;
  std::vector<downstream::Kind> classifiers;
  std::map<downstream::Kind, downstream::Hyper> hyper;  // overrides only
  eval::TsneConfig tsne;
  std::size_t tsne_subsample = 0;  // 0: project every validation sample

  RunConfig();

  // ConfigError on unknown keys or malformed values.
  void set(std::string_view key, std::string_view value);
  void validate() const;

  // Every key with its effective value, one "key = value" per line, in
  // schema order. Hashed into the manifest.
  std::string canonical() const;

  // Subsystem seeds split from the root seed by label.
  std::uint64_t seed_for(std::string_view label) const;
  data::GenConfig gen_config() const;
  trainer::TrainConfig train_config() const;
  eval::TsneConfig tsne_config() const;
};

// Applies "key = value" lines onto `cfg`. Blank lines and lines starting
// with '#' are skipped; a key may appear once per file.
void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin);
RunConfig load_config(const std::filesystem::path& path);

// "key=value" from the command line.
void apply_override(RunConfig& cfg, std::string_view assignment);

}  // namespace ucf::cli
