#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "ucf/error.hpp"
#include "ucf/numcore/gradcheck.hpp"
#include "ucf/numcore/matrix.hpp"
#include "ucf/numcore/rng.hpp"
#include "ucf/numcore/tape.hpp"

using namespace ucf;
using num::Matrix;
using num::Tape;
using num::Var;

namespace {

// Straight transcription of the public-domain reference generators.
struct RefXoshiro {
  std::uint64_t s[4];
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  explicit RefXoshiro(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s) {
      std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
  }
  std::uint64_t next() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

Matrix random_matrix(num::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal(0.0, scale);
  return m;
}

// Mixed absolute/relative comparison for graphs where some gradient entries
// are exactly zero by symmetry (e.g. a column scale followed by row
// normalization); a purely relative error there only measures round-off.
double scaled_gradient_error(const num::LossBuilder& loss, std::vector<Matrix>& params) {
  std::vector<Matrix> analytic;
  {
    Tape t;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(t.leaf(p));
    t.backward(loss(t, vars));
    for (Var v : vars) analytic.push_back(t.grad(v));
  }
  double scale = 0.0;
  for (const auto& g : analytic)
    for (double v : g.data()) scale = std::max(scale, std::abs(v));
  auto value = [&] {
    Tape t;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(t.leaf(p));
    return t.value(loss(t, vars))(0, 0);
  };
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto data = params[p].data();
    for (std::size_t e = 0; e < data.size(); ++e) {
      const double saved = data[e];
      data[e] = saved + eps;
      const double up = value();
      data[e] = saved - eps;
      const double down = value();
      data[e] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[p].data()[e];
      worst = std::max(worst, std::abs(ad - fd) / (std::abs(ad) + std::abs(fd) + 1e-4 * scale + 1e-12));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("splitmix64 and fnv1a64 match published constants") {
  std::uint64_t state = 0;
  CHECK(num::splitmix64(state) == 0xe220a8397b1dcdafULL);
  CHECK(num::splitmix64(state) == 0x6e789e6aa1b965f4ULL);
  CHECK(num::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(num::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(num::fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("derive_seed is one splitmix64 step of root xor label hash") {
  for (std::uint64_t root : {0ULL, 1ULL, 0xdeadbeefULL}) {
    std::uint64_t s = root ^ num::fnv1a64("train");
    CHECK(num::derive_seed(root, "train") == num::splitmix64(s));
  }
  CHECK(num::derive_seed(0, "gen") != num::derive_seed(0, "train"));
}

TEST_CASE("Rng stream equals reference xoshiro256**") {
  for (std::uint64_t seed : {0ULL, 42ULL, 0xffffffffffffffffULL}) {
    num::Rng rng(seed);
    RefXoshiro ref(seed);
    for (int i = 0; i < 1000; ++i) REQUIRE(rng.next_u64() == ref.next());
  }
}

TEST_CASE("Rng uniform, below and sampling") {
  num::Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }

  std::vector<int> counts(6, 0);
  const int draws = 60000;
  for (int i = 0; i < draws; ++i) ++counts[rng.below(6)];
  for (int c : counts) CHECK(std::abs(c - draws / 6) < 4 * std::sqrt(draws / 6.0));

  const auto pick = rng.sample_without_replacement(50, 20);
  CHECK(pick.size() == 20);
  CHECK(std::set<std::size_t>(pick.begin(), pick.end()).size() == 20);
  for (auto i : pick) CHECK(i < 50);

  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  rng.shuffle(v);
  CHECK(std::multiset<int>(v.begin(), v.end()) == std::multiset<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("normal draws have unit moments") {
  num::Rng rng(3);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("matmul examples") {
  const auto a = Matrix::from_rows({{1, 2}, {3, 4}});
  const auto b = Matrix::from_rows({{5, 6}, {7, 8}});
  CHECK(num::matmul(a, b) == Matrix::from_rows({{19, 22}, {43, 50}}));
  CHECK(num::matmul(Matrix::identity(2), b) == b);
  CHECK(num::matmul(Matrix(2, 2), b) == Matrix(2, 2));
  CHECK_THROWS_AS(num::matmul(a, Matrix(3, 2)), ShapeError);
}

TEST_CASE("matmul is associative on small matrices") {
  num::Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_matrix(rng, 3, 4), b = random_matrix(rng, 4, 2), c = random_matrix(rng, 2, 5);
    const auto l = num::matmul(num::matmul(a, b), c);
    const auto r = num::matmul(a, num::matmul(b, c));
    for (std::size_t i = 0; i < l.size(); ++i) {
      CHECK(std::abs(l.data()[i] - r.data()[i]) <= 1e-9 * (1.0 + std::abs(l.data()[i])));
    }
  }
}

TEST_CASE("softmax_rows") {
  auto s = num::softmax_rows(Matrix::from_rows({{0, 0}, {1000, 0}, {0, std::log(3.0)}}));
  CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s(1, 0) == doctest::Approx(1.0));
  CHECK(s(1, 1) >= 0.0);
  CHECK(s(1, 1) < 1e-300);
  CHECK(std::abs(s(2, 0) - 0.25) < 1e-15);
  CHECK(std::abs(s(2, 1) - 0.75) < 1e-15);

  num::Rng rng(5);
  const auto m = random_matrix(rng, 20, 7, 10.0);
  auto shifted = m;
  for (std::size_t c = 0; c < 7; ++c) shifted(3, c) += 123.0;
  const auto p = num::softmax_rows(m);
  const auto q = num::softmax_rows(shifted);
  for (std::size_t r = 0; r < 20; ++r) {
    double sum = 0;
    for (double v : p.row(r)) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  for (std::size_t c = 0; c < 7; ++c) CHECK(std::abs(p(3, c) - q(3, c)) < 1e-12);
}

TEST_CASE("l2_normalize_rows") {
  const auto n = num::l2_normalize_rows(Matrix::from_rows({{3, 4}, {0, 0}, {1, 0}}));
  CHECK(std::abs(n(0, 0) - 0.6) < 1e-15);
  CHECK(std::abs(n(0, 1) - 0.8) < 1e-15);
  CHECK(n(1, 0) == 0.0);
  CHECK(n(1, 1) == 0.0);
  CHECK(n(2, 0) == 1.0);

  num::Rng rng(9);
  const auto once = num::l2_normalize_rows(random_matrix(rng, 10, 6));
  CHECK(num::max_abs_diff(once, num::l2_normalize_rows(once)) < 1e-15);
}

TEST_CASE("backward on small closed forms") {
  Tape t;
  auto x = t.leaf(Matrix::from_rows({{3}}));
  auto y = t.sum(x);
  t.backward(y);
  CHECK(t.grad(x)(0, 0) == 1.0);

  Tape t2;
  auto v = t2.leaf(Matrix::from_rows({{1, 2}}));
  t2.backward(t2.sum(t2.hadamard(v, v)));
  CHECK(t2.grad(v) == Matrix::from_rows({{2, 4}}));
}

TEST_CASE("fan-out accumulates gradients") {
  Tape t;
  auto x = t.leaf(Matrix::from_rows({{2, -1}}));
  auto y = t.add(t.scale(x, 3.0), t.hadamard(x, x));
  t.backward(t.sum(y));
  CHECK(t.grad(x) == Matrix::from_rows({{7, 1}}));
}

TEST_CASE("backward contract errors") {
  Tape t;
  auto x = t.leaf(Matrix::from_rows({{1, 2}}));
  CHECK_THROWS_AS(t.backward(x), ContractError);
  auto s = t.sum(x);
  t.backward(s);
  CHECK_THROWS_AS(t.backward(s), ContractError);
  t.zero_grad();
  CHECK_NOTHROW(t.backward(s));
  CHECK(t.grad(x) == Matrix::from_rows({{1, 1}}));
}

TEST_CASE("finite_diff_check on linear and quadratic losses") {
  num::Rng rng(1);
  std::vector<Matrix> params{random_matrix(rng, 3, 4)};
  const auto w = random_matrix(rng, 3, 4);
  auto linear = [&](Tape& t, std::span<const Var> p) {
    return t.sum(t.hadamard(p[0], t.constant(w)));
  };
  CHECK(num::finite_diff_check(linear, params).max_rel_error < 1e-8);
  auto quadratic = [&](Tape& t, std::span<const Var> p) { return t.sum(t.hadamard(p[0], p[0])); };
  CHECK(num::finite_diff_check(quadratic, params).max_rel_error < 1e-8);
}

TEST_CASE("3-layer tanh network gradients match finite differences") {
  num::Rng rng(21);
  std::vector<Matrix> params{random_matrix(rng, 5, 6, 0.5), random_matrix(rng, 1, 6, 0.1),
                             random_matrix(rng, 6, 6, 0.5), random_matrix(rng, 6, 3, 0.5)};
  const auto x = random_matrix(rng, 4, 5);
  auto loss = [&](Tape& t, std::span<const Var> p) {
    auto h = t.tanh(t.add_row(t.matmul(t.constant(x), p[0]), p[1]));
    h = t.tanh(t.matmul(h, p[2]));
    auto out = t.matmul(h, p[3]);
    return t.sum(t.hadamard(out, out));
  };
  const auto r = num::finite_diff_check(loss, params);
  CHECK(r.entries_checked == 5 * 6 + 6 + 36 + 18);
  CHECK(r.max_rel_error < 1e-4);
}

// Random graphs drawn from every differentiable op.
TEST_CASE("property: random small graphs pass the gradient check") {
  num::Rng rng(1234);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t n = 2 + rng.below(3), c = 2 + rng.below(3);
    std::vector<Matrix> params{random_matrix(rng, n, c, 0.7), random_matrix(rng, c, c, 0.7),
                               random_matrix(rng, 1, c, 0.7), random_matrix(rng, n, 1, 0.7)};
    Matrix mask(n, c, 1.0);
    mask(0, 0) = 0.0;
    const std::uint64_t pattern = rng.next_u64();
    const auto w1 = random_matrix(rng, n, c), w2 = random_matrix(rng, n, c);
    auto loss = [&](Tape& t, std::span<const Var> p) {
      Var h = t.matmul(p[0], p[1]);
      std::uint64_t bits = pattern;
      for (int step = 0; step < 4; ++step, bits >>= 4) {
        switch (bits % 12) {
          case 0: h = t.tanh(h); break;
          case 1: h = t.sigmoid(h); break;
          case 2: h = t.add_row(h, p[2]); break;
          case 3: h = t.mul_col(h, p[3]); break;
          case 4: h = t.softmax_rows(h); break;
          case 5: h = t.log_softmax_rows(h, mask); break;
          case 6: h = t.l2_normalize_rows(h); break;
          case 7: h = t.sub(h, t.scale(p[0], 0.5)); break;
          case 8: h = t.exp(t.scale(t.tanh(h), 0.5)); break;
          case 9: h = t.log(t.add_row(t.hadamard(h, h), t.constant(Matrix(1, c, 1.0)))); break;
          case 10: {
            Var parts[2] = {t.slice_cols(h, 0, 1), t.slice_cols(h, 1, c)};
            h = t.concat_cols(parts);
            break;
          }
          default: h = t.transpose(t.transpose(t.hadamard(h, p[0]))); break;
        }
      }
      // Random weights keep the loss generic: sum(h) after softmax, or |h|^2
      // after normalizing, would have exactly zero gradient and turn
      // round-off into a large relative error.
      auto linear = t.sum(t.hadamard(h, t.constant(w1)));
      auto quad = t.sum(t.hadamard(t.hadamard(h, h), t.constant(w2)));
      return t.add(linear, quad);
    };
    INFO("trial " << trial);
    CHECK(scaled_gradient_error(loss, params) < 1e-4);
  }
}

TEST_CASE("relu gradient away from the kink") {
  Tape t;
  auto x = t.leaf(Matrix::from_rows({{-1.5, 0.5, 2.0}}));
  t.backward(t.sum(t.relu(x)));
  CHECK(t.grad(x) == Matrix::from_rows({{0, 1, 1}}));
}

TEST_CASE("masked log_softmax excludes masked entries") {
  Tape t;
  auto x = t.leaf(Matrix::from_rows({{1.0, 2.0, 50.0}}));
  auto y = t.log_softmax_rows(x, Matrix::from_rows({{1, 1, 0}}));
  const double norm = std::log(std::exp(1.0) + std::exp(2.0));
  CHECK(std::abs(t.value(y)(0, 0) - (1.0 - norm)) < 1e-14);
  CHECK(t.value(y)(0, 2) == 0.0);
  t.backward(t.sum(y));
  CHECK(t.grad(x)(0, 2) == 0.0);
}
