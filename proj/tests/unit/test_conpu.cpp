#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "../support/oracles.hpp"
#include "ucf/conpu.hpp"
#include "ucf/error.hpp"
#include "ucf/numcore/gradcheck.hpp"

using namespace ucf;
using conpu::ContrastiveBatch;
using conpu::LossVariant;
using num::Matrix;

namespace {

oracle::BatchSpec random_spec(num::Rng& rng, std::size_t r, std::size_t m, std::size_t dim) {
  oracle::BatchSpec s;
  s.r = r;
  for (std::size_t i = 0; i < r + m; ++i) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    for (double& x : v) x /= std::sqrt(norm);
    s.z.push_back(v);
    s.p_positive.push_back(rng.uniform());
    s.indicator.push_back(i >= r ? 1 : (rng.uniform() < 0.5 ? 1 : 0));
  }
  return s;
}

ContrastiveBatch to_batch(const oracle::BatchSpec& s) {
  ContrastiveBatch b;
  const std::size_t n = s.z.size();
  for (std::size_t i = 0; i < s.r; ++i) b.batch.push_back(i);
  for (std::size_t i = s.r; i < n; ++i) b.auxiliary.push_back(i);
  b.z = Matrix(n, s.z[0].size());
  b.probs = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < s.z[i].size(); ++j) b.z(i, j) = s.z[i][j];
    b.probs(i, 0) = 1.0 - s.p_positive[i];
    b.probs(i, 1) = s.p_positive[i];
    b.indicator.push_back(static_cast<std::uint8_t>(s.indicator[i]));
  }
  conpu::candidate_sets(b);
  return b;
}

double tape_loss(const ContrastiveBatch& b, double tau, LossVariant v) {
  num::Tape t;
  const auto z = t.constant(b.z);
  return t.scalar(conpu::conpu_loss(t, z, b, tau, v));
}

}  // namespace

TEST_CASE("sample_batches draws and determinism") {
  const std::vector<std::size_t> pool{0, 1, 2, 3, 4, 5, 6, 7};
  const std::vector<std::size_t> pos{1, 4, 6};
  const auto a = conpu::sample_batches(pool, pos, 8, 2, 77);
  auto sorted = a.batch;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == pool);
  CHECK(a.auxiliary.size() == 2);
  for (auto i : a.auxiliary) CHECK(std::find(pos.begin(), pos.end(), i) != pos.end());
  CHECK(std::set<std::size_t>(a.auxiliary.begin(), a.auxiliary.end()).size() == 2);

  const auto b = conpu::sample_batches(pool, pos, 8, 2, 77);
  CHECK(a.batch == b.batch);
  CHECK(a.auxiliary == b.auxiliary);

  CHECK_THROWS_AS(conpu::sample_batches(pool, pos, 4, 4, 1), InsufficientPositivesError);
}

TEST_CASE("sample_batches pairs are uniform") {
  const std::vector<std::size_t> pool{0, 1, 2, 3};
  const std::vector<std::size_t> pos{0, 1};
  num::Rng rng(2024);
  std::map<std::pair<std::size_t, std::size_t>, int> freq;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto d = conpu::sample_batches(pool, pos, 2, 2, rng);
    ++freq[{std::min(d.batch[0], d.batch[1]), std::max(d.batch[0], d.batch[1])}];
  }
  CHECK(freq.size() == 6);
  const double p = 1.0 / 6.0, mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  for (const auto& [pair, count] : freq) CHECK(std::abs(count - mean) < 3 * sd);
}

TEST_CASE("adaptive tau") {
  const std::vector<double> zero(4, 0.3);
  const conpu::TauParams params;
  CHECK(conpu::adaptive_tau(zero, 1, params) == 0.05);

  // Components +-0.5 have population stddev 0.5.
  const std::vector<double> half{0.5, -0.5, 0.5, -0.5};
  CHECK(conpu::component_stddev(half) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(conpu::adaptive_tau(half, 1, params) - 0.5 / std::log(2.0)) < 1e-12);
  CHECK(std::abs(conpu::adaptive_tau(half, 1, params) - 0.72135) < 1e-5);

  double prev = conpu::adaptive_tau(half, 1, params);
  for (std::size_t e = 2; e <= 100; ++e) {
    const double t = conpu::adaptive_tau(half, e, params);
    if (prev > params.tau_min) {
      CHECK(t < prev);
    } else {
      CHECK(t == params.tau_min);
    }
    CHECK(t >= params.tau_min);
    prev = t;
  }
  CHECK_THROWS_AS(conpu::adaptive_tau(half, 0, params), ContractError);
  CHECK(conpu::raw_tau(half, 3) == doctest::Approx(0.5 / std::log(4.0)));

  const std::vector<double> huge{40.0, -40.0};
  CHECK(conpu::adaptive_tau(huge, 1, params) == params.tau_max);
}

TEST_CASE("direction v0") {
  conpu::TauParams p;
  p.tau0 = 1.0;
  p.tau1 = 0.0;
  const std::vector<double> vd{1.5, -2.0};
  CHECK(conpu::direction_v0(vd, std::vector<double>{9.0, 9.0}, p) == vd);

  p.tau0 = 2.0;
  p.tau1 = 0.5;
  CHECK(conpu::direction_v0(std::vector<double>{1, 2}, std::vector<double>{2, 2}, p) ==
        std::vector<double>{0.0, 0.5});
  CHECK(conpu::direction_v0(std::vector<double>{1, 1}, std::vector<double>{2, 2}, p) ==
        std::vector<double>{0.0, 0.0});

  p.tau0 = 0.0;
  CHECK_THROWS_AS(conpu::direction_v0(vd, vd, p), ContractError);
}

TEST_CASE("indicator rule") {
  CHECK(conpu::indicator(true, {0.99, 0.01}));
  CHECK(conpu::indicator(false, {0.3, 0.7}));
  CHECK(conpu::indicator(false, {0.5, 0.5}));
  CHECK_FALSE(conpu::indicator(false, {0.51, 0.49}));
}

TEST_CASE("candidate sets") {
  ContrastiveBatch b;
  b.batch = {10, 11, 12, 13};
  b.indicator = {1, 0, 1, 0};
  conpu::candidate_sets(b);
  CHECK(b.positives[0] == std::vector<std::size_t>{2});
  CHECK(b.negatives[0] == std::vector<std::size_t>{1, 3});
  for (std::size_t i = 0; i < 4; ++i) CHECK(b.candidates[i].size() == 3);

  ContrastiveBatch all;
  all.batch = {0, 1, 2};
  all.auxiliary = {3, 4};
  all.indicator = {1, 1, 1, 1, 1};
  conpu::candidate_sets(all);
  CHECK(all.candidates.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(all.negatives[i].empty());
    CHECK(all.positives[i] == all.candidates[i]);
  }
}

TEST_CASE("property: sets partition the candidates") {
  num::Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + rng.below(8), m = rng.below(5);
    const auto b = to_batch(random_spec(rng, r, m, 3));
    for (std::size_t i = 0; i < r; ++i) {
      std::vector<std::size_t> expect(r + m);
      std::iota(expect.begin(), expect.end(), 0);
      expect.erase(expect.begin() + static_cast<long>(i));
      CHECK(b.candidates[i] == expect);
      std::vector<std::size_t> joined = b.positives[i];
      joined.insert(joined.end(), b.negatives[i].begin(), b.negatives[i].end());
      std::sort(joined.begin(), joined.end());
      CHECK(joined == expect);
      for (auto p : b.positives[i]) CHECK(b.indicator[p] == 1);
      for (auto n : b.negatives[i]) CHECK(b.indicator[n] == 0);
    }
  }
}

TEST_CASE("pair loss") {
  ContrastiveBatch b;
  b.batch = {0, 1, 2, 3};
  b.indicator = {1, 1, 1, 1};
  b.z = Matrix(4, 2);
  for (std::size_t i = 0; i < 4; ++i) b.z(i, 0) = 1.0;
  conpu::candidate_sets(b);
  CHECK(std::abs(conpu::pair_loss(b, 0, 1, 0.7) - std::log(3.0)) < 1e-12);
  CHECK_THROWS_AS(conpu::pair_loss(b, 0, 0, 0.7), ContractError);

  // Partner aligned, the rest opposite: loss vanishes as tau shrinks.
  b.z = Matrix::from_rows({{1, 0}, {1, 0}, {-1, 0}, {-1, 0}});
  CHECK(conpu::pair_loss(b, 0, 1, 0.01) < 1e-80);
  CHECK(conpu::pair_loss(b, 0, 1, 0.01) >= 0.0);

  num::Rng rng(4);
  const auto spec = random_spec(rng, 4, 0, 3);
  const auto rb = to_batch(spec);
  for (std::size_t p : {1, 2, 3}) {
    CHECK(std::abs(conpu::pair_loss(rb, 0, p, 0.5) - oracle::pair_loss(spec, 0, p, 0.5)) < 1e-12);
  }
}

TEST_CASE("uncertainty weight") {
  CHECK(conpu::uncertainty_weight({0.5, 0.5}) == 0.5);
  CHECK(conpu::uncertainty_weight({1.0, 0.0}) == 0.0);
  CHECK(std::abs(conpu::uncertainty_weight({0.8, 0.2}) - 0.2) < 1e-15);
}

TEST_CASE("conpu loss edge cases") {
  ContrastiveBatch b;
  b.batch = {0, 1};
  b.auxiliary = {2};
  b.indicator = {1, 0, 1};
  b.z = Matrix::from_rows({{1, 0}, {0, 1}, {0.6, 0.8}});
  b.probs = Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
  conpu::candidate_sets(b);
  // Anchor 1 (indicator 0) has no other zero-indicator slot; anchor 0 has slot 2.
  const double only = conpu::pair_loss(b, 0, 2, 0.5);
  CHECK(std::abs(conpu::conpu_loss_value(b, 0.5, LossVariant::kEq3Unweighted) - only / 2) < 1e-12);

  ContrastiveBatch lonely = b;
  lonely.indicator = {1, 0, 0};
  lonely.batch = {0};
  lonely.auxiliary = {1, 2};
  conpu::candidate_sets(lonely);
  CHECK(conpu::conpu_loss_value(lonely, 0.5, LossVariant::kEq3Unweighted) == 0.0);

  ContrastiveBatch sure = b;
  sure.probs = Matrix::from_rows({{0, 1}, {1, 0}, {0, 1}});
  CHECK(conpu::conpu_loss_value(sure, 0.5, LossVariant::kEq4Weighted) == 0.0);
  CHECK(conpu::conpu_loss_value(sure, 0.5, LossVariant::kEq3Unweighted) > 0.0);

  ContrastiveBatch none;
  CHECK_THROWS_AS(conpu::conpu_loss_value(none, 0.5, LossVariant::kEq4Weighted), ContractError);
}

TEST_CASE("property: conpu loss equals the double-loop oracle") {
  num::Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = 2 + rng.below(7), m = 1 + rng.below(4);
    const auto spec = random_spec(rng, r, m, 4);
    const auto b = to_batch(spec);
    const double tau = 0.05 + rng.uniform() * 2.0;
    for (auto v : {LossVariant::kEq3Unweighted, LossVariant::kEq4Weighted}) {
      const double expect = oracle::conpu_loss(spec, tau, v == LossVariant::kEq4Weighted);
      CHECK(std::abs(conpu::conpu_loss_value(b, tau, v) - expect) < 1e-10);
      CHECK(std::abs(tape_loss(b, tau, v) - expect) < 1e-10);
    }
  }
}

TEST_CASE("property: weighted loss is at most half the mean-normalized loss") {
  num::Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto spec = random_spec(rng, 2 + rng.below(6), 1 + rng.below(4), 3);
    const double tau = 0.1 + rng.uniform();
    const double weighted = conpu::conpu_loss_value(to_batch(spec), tau, LossVariant::kEq4Weighted);
    for (double& p : spec.p_positive) p = 0.5;  // w = 0.5 everywhere
    const double half_mean = oracle::conpu_loss(spec, tau, true);
    CHECK(weighted <= half_mean + 1e-12);
  }
}

TEST_CASE("property: loss is invariant under slot permutation") {
  num::Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 3 + rng.below(5), m = 1 + rng.below(3);
    const auto spec = random_spec(rng, r, m, 3);
    std::vector<std::size_t> perm_s(r), perm_a(m);
    std::iota(perm_s.begin(), perm_s.end(), 0);
    std::iota(perm_a.begin(), perm_a.end(), r);
    rng.shuffle(perm_s);
    rng.shuffle(perm_a);
    oracle::BatchSpec permuted;
    permuted.r = r;
    for (auto idx : perm_s) {
      permuted.z.push_back(spec.z[idx]);
      permuted.indicator.push_back(spec.indicator[idx]);
      permuted.p_positive.push_back(spec.p_positive[idx]);
    }
    for (auto idx : perm_a) {
      permuted.z.push_back(spec.z[idx]);
      permuted.indicator.push_back(spec.indicator[idx]);
      permuted.p_positive.push_back(spec.p_positive[idx]);
    }
    for (auto v : {LossVariant::kEq3Unweighted, LossVariant::kEq4Weighted}) {
      CHECK(std::abs(conpu::conpu_loss_value(to_batch(spec), 0.4, v) -
                     conpu::conpu_loss_value(to_batch(permuted), 0.4, v)) < 1e-12);
    }
  }
}

TEST_CASE("conpu loss gradient w.r.t. embeddings matches finite differences") {
  num::Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const auto spec = random_spec(rng, 4, 2, 3);
    const auto b = to_batch(spec);
    std::vector<Matrix> params{b.z};
    for (auto v : {LossVariant::kEq3Unweighted, LossVariant::kEq4Weighted}) {
      auto loss = [&](num::Tape& t, std::span<const num::Var> p) {
        return conpu::conpu_loss(t, t.l2_normalize_rows(p[0]), b, 0.3, v);
      };
      CHECK(num::finite_diff_check(loss, params).max_rel_error < 1e-4);
    }
  }
}
