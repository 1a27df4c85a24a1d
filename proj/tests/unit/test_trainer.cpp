#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ucf/cli/config.hpp"
#include "ucf/error.hpp"
#include "ucf/trainer.hpp"

using namespace ucf;
using trainer::TrainConfig;

namespace {

data::Dataset small_dataset(std::size_t n = 240, std::size_t labeled = 40) {
  data::GenConfig g;
  g.n_total = n;
  g.n_labeled_positive = labeled;
  g.seed = 5;
  return data::preprocess(data::generate(g));
}

encoder::EncoderConfig tiny_encoder() {
  encoder::EncoderConfig c;
  c.token_dim = 4;
  c.hidden = 8;
  c.embed_dim = 6;
  return c;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.batch = 16;
  c.auxiliary = 4;
  c.stage1_epochs = 1;
  c.stage2_epochs = 1;
  c.seed = 11;
  return c;
}

double mean_positive_cosine(const data::Dataset& ds, const encoder::EncoderState& enc) {
  const auto pos = ds.train_positive_indices();
  const auto z = encoder::encode_batch(enc, ds.features(pos));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = i + 1; j < z.rows(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < z.cols(); ++k) d += z(i, k) * z(j, k);
      sum += d;
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.quantile = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.margin = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("triplet loss examples") {
  const std::vector<double> a{1, 0}, n{0, 1}, far{-1, 0};
  CHECK(trainer::triplet_loss(a, a, far, 1.0) == 0.0);
  CHECK(trainer::triplet_loss(a, a, a, 1.0) == 1.0);
  CHECK(trainer::triplet_loss(a, a, n, 1.0) == 0.0);
  CHECK(std::abs(trainer::triplet_loss(a, a, n, 3.0) - 1.0) < 1e-15);
  CHECK_THROWS_AS(trainer::triplet_loss(a, a, std::vector<double>{1, 0, 0}, 1.0), ShapeError);
}

TEST_CASE("lowest quantile selection") {
  std::vector<std::size_t> idx(10);
  std::iota(idx.begin(), idx.end(), 100);
  std::vector<double> p{0.95, 0.15, 0.55, 0.05, 0.35, 0.75, 0.25, 0.85, 0.45, 0.65};
  CHECK(trainer::lowest_quantile(idx, p, 0.2) == std::vector<std::size_t>{101, 103});

  const std::vector<double> flat(10, 0.3);
  CHECK(trainer::lowest_quantile(idx, flat, 0.25) == std::vector<std::size_t>{100, 101, 102});
  CHECK(trainer::lowest_quantile(idx, flat, 0.999).size() == 10);
  CHECK_THROWS_AS(trainer::lowest_quantile(idx, flat, 0.0), ContractError);
  CHECK_THROWS_AS(trainer::lowest_quantile({}, {}, 0.5), ContractError);
}

TEST_CASE("pseudo-negatives come from the unlabeled pool") {
  const auto ds = small_dataset();
  const auto enc = encoder::init(tiny_encoder(), 1);
  const auto n = trainer::build_pseudo_negatives(ds, enc, 0.2);
  const auto unlabeled = ds.train_unlabeled_indices();
  CHECK(n.size() == static_cast<std::size_t>(std::ceil(0.2 * unlabeled.size())));
  for (auto i : n) {
    CHECK(ds.samples[i].split == data::Split::kTrain);
    CHECK_FALSE(ds.samples[i].labeled_positive());
  }
}

TEST_CASE("Adam first step moves by lr times the gradient sign") {
  trainer::Adam adam(0.01, 0.9, 0.999, 1e-8);
  num::Matrix w = num::Matrix::from_rows({{1.0, -2.0, 0.5}});
  num::Matrix* params[] = {&w};
  const num::Matrix g = num::Matrix::from_rows({{0.3, -4.0, 0.0}});
  adam.step(params, std::span<const num::Matrix>(&g, 1));
  CHECK(std::abs(w(0, 0) - (1.0 - 0.01 * 0.3 / (0.3 + 1e-8))) < 1e-15);
  CHECK(std::abs(w(0, 1) - (-2.0 + 0.01 * 4.0 / (4.0 + 1e-8))) < 1e-15);
  CHECK(w(0, 2) == 0.5);
  CHECK(adam.steps() == 1);
}

TEST_CASE("zero epochs return the encoder unchanged") {
  const auto ds = small_dataset();
  const auto enc = encoder::init(tiny_encoder(), 2);
  auto cfg = quick_config();
  cfg.stage1_epochs = 0;
  cfg.stage2_epochs = 0;
  const auto s1 = trainer::train_stage1(ds, enc, cfg);
  CHECK(s1.encoder == enc);
  CHECK(s1.log.records.empty());
  const auto s2 = trainer::train_stage2(ds, enc, cfg);
  CHECK(s2.encoder == enc);
  CHECK(s2.log.records.empty());
}

TEST_CASE("training is deterministic and observes valid batches") {
  const auto ds = small_dataset();
  const auto enc = encoder::init(tiny_encoder(), 3);
  const auto cfg = quick_config();

  std::size_t batches = 0;
  std::vector<trainer::EpochRecord> seen;
  auto observe = [&](const conpu::ContrastiveBatch& b) {
    ++batches;
    CHECK(b.anchors() == cfg.batch);
    CHECK(b.auxiliary.size() == cfg.auxiliary);
    for (auto i : b.auxiliary) CHECK(ds.samples[i].labeled_positive());
    for (std::size_t s = 0; s < b.slots(); ++s) {
      const std::size_t idx = s < b.anchors() ? b.batch[s] : b.auxiliary[s - b.anchors()];
      if (ds.samples[idx].labeled_positive()) CHECK(b.indicator[s] == 1);
    }
    for (std::size_t i = 0; i < b.anchors(); ++i) {
      CHECK(b.positives[i].size() + b.negatives[i].size() == b.candidates[i].size());
      CHECK(b.candidates[i].size() == b.slots() - 1);
    }
    for (std::size_t r = 0; r < b.z.rows(); ++r) {
      double norm = 0.0;
      for (double v : b.z.row(r)) norm += v * v;
      CHECK(std::abs(norm - 1.0) < 1e-9);
    }
  };
  const auto a = trainer::train_stage1(ds, enc, cfg, observe,
                                       [&](const trainer::EpochRecord& r) { seen.push_back(r); });
  const std::size_t train_n = ds.train_indices().size();
  CHECK(batches == (train_n + cfg.batch - 1) / cfg.batch);
  REQUIRE(seen.size() == 1);
  CHECK(seen[0].mean_loss == a.log.records[0].mean_loss);
  CHECK(std::isfinite(a.log.records[0].mean_loss));
  CHECK(a.log.records[0].stage == 1);
  CHECK(a.log.records[0].epoch == 1);

  const auto b = trainer::train_stage1(ds, enc, cfg);
  CHECK(a.encoder == b.encoder);
  CHECK_FALSE(a.encoder == enc);

  const auto c2 = trainer::train_stage2(ds, a.encoder, cfg);
  const auto d2 = trainer::train_stage2(ds, a.encoder, cfg);
  CHECK(c2.encoder == d2.encoder);
  CHECK(c2.log.records[0].stage == 2);
  CHECK(c2.log.records[0].raw_tau == 0.0);
  // Stage 2 trains the encoder proper only.
  CHECK(c2.encoder.head_w == a.encoder.head_w);
  CHECK(c2.encoder.head_b == a.encoder.head_b);
  CHECK_FALSE(c2.encoder.out_w == a.encoder.out_w);

  const std::vector<double> f(10, 0.4);
  CHECK(encoder::encode(c2.encoder, f).values == encoder::encode(c2.encoder, f).values);
}

TEST_CASE("training log CSV") {
  trainer::TrainLog log;
  log.records.push_back({1, 1, 0.5, 0.25, 0.125, 1.0, 2.0});
  trainer::TrainLog more;
  more.records.push_back({2, 1, 0.75, 0.0, 0.0, 0.0, 0.5});
  log.append(more);
  CHECK(log.to_csv() ==
        "stage,epoch,mean_loss,raw_tau,v0_norm,head_acc,seconds\n"
        "1,1,0.5,0.25,0.125,1,2\n"
        "2,1,0.75,0,0,0,0.5\n");
}

TEST_CASE("insufficient labeled positives") {
  const auto ds = small_dataset(200, 3);
  const auto enc = encoder::init(tiny_encoder(), 4);
  CHECK_THROWS_AS(trainer::train_stage1(ds, enc, quick_config()), InsufficientPositivesError);

  const auto one = small_dataset(200, 1);
  CHECK_THROWS_AS(trainer::train_stage2(one, enc, quick_config()), InsufficientPositivesError);
}

namespace {

struct DeskRun {
  data::Dataset ds;
  trainer::StageResult s1, s2;
};

const DeskRun& desk_run() {
  static const DeskRun run = [] {
    const auto cfg = cli::load_config(UCF_DESK_CONFIG);
    DeskRun r;
    r.ds = data::preprocess(data::generate(cfg.gen_config()));
    r.s1 = trainer::train_stage1(r.ds, encoder::init(cfg.encoder, cfg.seed_for("encoder.init")),
                                 cfg.train_config());
    r.s2 = trainer::train_stage2(r.ds, r.s1.encoder, cfg.train_config());
    return r;
  }();
  return run;
}

// Mean cosine between D1 embeddings and the lowest-p+ unlabeled quantile.
double positive_negative_cosine(const data::Dataset& ds, const encoder::EncoderState& enc) {
  const auto neg = trainer::build_pseudo_negatives(ds, enc, 0.2);
  const auto zp = encoder::encode_batch(enc, ds.features(ds.train_positive_indices()));
  const auto zn = encoder::encode_batch(enc, ds.features(neg));
  double sum = 0.0;
  for (std::size_t i = 0; i < zp.rows(); ++i)
    for (std::size_t j = 0; j < zn.rows(); ++j)
      for (std::size_t k = 0; k < zp.cols(); ++k) sum += zp(i, k) * zn(j, k);
  return sum / static_cast<double>(zp.rows() * zn.rows());
}

}  // namespace

TEST_CASE("stage 2 widens the positive / pseudo-negative cosine gap on the desk dataset") {
  const auto& r = desk_run();
  const double before = mean_positive_cosine(r.ds, r.s1.encoder) -
                        positive_negative_cosine(r.ds, r.s1.encoder);
  const double after = mean_positive_cosine(r.ds, r.s2.encoder) -
                       positive_negative_cosine(r.ds, r.s2.encoder);
  INFO("gap before " << before << " after " << after);
  CHECK(after > before);
}

// Stage 1 leaves every embedding in a narrow cone (cosine ~0.98); the
// triplet hinge stops pulling positives together once the margin holds, so
// spreading the space away from pseudo-negatives lowers the raw
// intra-positive cosine. Kept as an expected failure so a change shows up.
TEST_CASE("stage 2 raises raw intra-positive cosine on the desk dataset" * doctest::should_fail()) {
  const auto& r = desk_run();
  const double before = mean_positive_cosine(r.ds, r.s1.encoder);
  const double after = mean_positive_cosine(r.ds, r.s2.encoder);
  INFO("before " << before << " after " << after);
  CHECK(after >= before);
}
