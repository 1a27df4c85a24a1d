#include "ucf/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "ucf/error.hpp"
#include "ucf/io.hpp"
#include "ucf/numcore/rng.hpp"

namespace ucf::encoder {

using num::Tape;
using num::Var;

void EncoderConfig::validate() const {
  if (input_dim < 1 || token_dim < 1 || hidden < 1 || heads < 1 || embed_dim < 1) {
    throw ConfigError("encoder dims must all be >= 1 (input " + std::to_string(input_dim) +
                      ", token " + std::to_string(token_dim) + ", hidden " +
                      std::to_string(hidden) + ", heads " + std::to_string(heads) +
                      ", embed " + std::to_string(embed_dim) + ")");
  }
  if (head_classes != 2) throw ConfigError("head_classes must be 2");
  if (hidden % heads != 0) {
    throw ConfigError("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
}

std::array<Matrix*, kParamCount> EncoderState::parameters() {
  return {&token_w, &token_b, &position, &lstm_w, &lstm_b, &attn_q,
          &attn_k,  &attn_v,  &out_w,    &out_b,  &head_w, &head_b};
}

std::array<const Matrix*, kParamCount> EncoderState::parameters() const {
  return {&token_w, &token_b, &position, &lstm_w, &lstm_b, &attn_q,
          &attn_k,  &attn_v,  &out_w,    &out_b,  &head_w, &head_b};
}

const std::array<const char*, kParamCount>& EncoderState::parameter_names() {
  static const std::array<const char*, kParamCount> names = {
      "token_w", "token_b", "position", "lstm_w", "lstm_b", "attn_q",
      "attn_k",  "attn_v",  "out_w",    "out_b",  "head_w", "head_b"};
  return names;
}

namespace {

struct Shape {
  std::size_t rows, cols;
};

std::array<Shape, kParamCount> expected_shapes(const EncoderConfig& c) {
  const std::size_t p = c.token_dim, h = c.hidden, e = c.embed_dim, t = c.input_dim;
  return {{{1, p}, {1, p}, {t, p}, {p + h, 4 * h}, {1, 4 * h}, {h, h},
           {h, h}, {h, h}, {h, e}, {1, e}, {e, 2}, {1, 2}}};
}

Matrix glorot(std::size_t rows, std::size_t cols, num::Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-a, a);
  return m;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void EncoderState::check_shapes() const {
  config.validate();
  const auto shapes = expected_shapes(config);
  const auto params = parameters();
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (params[i]->rows() != shapes[i].rows || params[i]->cols() != shapes[i].cols) {
      throw ShapeError(std::string("parameter ") + parameter_names()[i] + " has shape " +
                       params[i]->shape_str() + ", expected " + std::to_string(shapes[i].rows) +
                       "x" + std::to_string(shapes[i].cols));
    }
  }
}

EncoderState init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  num::Rng rng(seed);
  EncoderState s;
  s.config = config;
  const std::size_t p = config.token_dim, h = config.hidden, e = config.embed_dim;
  s.token_w = glorot(1, p, rng);
  s.token_b = Matrix(1, p);
  s.position = glorot(config.input_dim, p, rng);
  s.lstm_w = glorot(p + h, 4 * h, rng);
  s.lstm_b = Matrix(1, 4 * h);
  for (std::size_t j = h; j < 2 * h; ++j) s.lstm_b(0, j) = 1.0;
  s.attn_q = glorot(h, h, rng);
  s.attn_k = glorot(h, h, rng);
  s.attn_v = glorot(h, h, rng);
  s.out_w = glorot(h, e, rng);
  s.out_b = Matrix(1, e);
  s.head_w = glorot(e, 2, rng);
  s.head_b = Matrix(1, 2);
  return s;
}

// --- Per-sample path --------------------------------------------------------

std::vector<double> tokenize(const EncoderConfig& config, std::span<const double> features) {
  if (features.size() != config.input_dim) {
    throw ShapeError("expected " + std::to_string(config.input_dim) + " features, got " +
                     std::to_string(features.size()));
  }
  std::vector<double> tokens(features.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) tokens[t] = 2.0 * features[t] - 1.0;
  return tokens;
}

Matrix tokenize(const EncoderConfig& config, const Matrix& features) {
  if (features.cols() != config.input_dim) {
    throw ShapeError("feature matrix is " + features.shape_str() + ", expected " +
                     std::to_string(config.input_dim) + " columns");
  }
  Matrix out = features;
  for (double& v : out.data()) v = 2.0 * v - 1.0;
  return out;
}

Matrix project_tokens(const EncoderState& state, std::span<const double> tokens) {
  const auto& c = state.config;
  if (tokens.size() != c.input_dim) {
    throw ShapeError("expected " + std::to_string(c.input_dim) + " tokens, got " +
                     std::to_string(tokens.size()));
  }
  Matrix out(c.input_dim, c.token_dim);
  for (std::size_t t = 0; t < c.input_dim; ++t)
    for (std::size_t j = 0; j < c.token_dim; ++j)
      out(t, j) = tokens[t] * state.token_w(0, j) + state.token_b(0, j) + state.position(t, j);
  return out;
}

Matrix lstm_forward(const EncoderState& state, const Matrix& tokens) {
  const std::size_t h = state.config.hidden;
  const std::size_t p = state.config.token_dim;
  if (tokens.rows() < 1) throw ContractError("lstm_forward needs at least one step");
  if (tokens.cols() != p) {
    throw ShapeError("tokens are " + tokens.shape_str() + ", expected width " + std::to_string(p));
  }
  Matrix out(tokens.rows(), h);
  Matrix x(1, p + h);
  std::vector<double> cell(h, 0.0);
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    for (std::size_t j = 0; j < p; ++j) x(0, j) = tokens(t, j);
    for (std::size_t j = 0; j < h; ++j) x(0, p + j) = t == 0 ? 0.0 : out(t - 1, j);
    Matrix gates = num::matmul(x, state.lstm_w);
    for (std::size_t j = 0; j < h; ++j) {
      const double in = sigmoid(gates(0, j) + state.lstm_b(0, j));
      const double forget = sigmoid(gates(0, h + j) + state.lstm_b(0, h + j));
      const double cand = std::tanh(gates(0, 2 * h + j) + state.lstm_b(0, 2 * h + j));
      const double outg = sigmoid(gates(0, 3 * h + j) + state.lstm_b(0, 3 * h + j));
      cell[j] = forget * cell[j] + in * cand;
      out(t, j) = outg * std::tanh(cell[j]);
    }
  }
  return out;
}

AttentionResult self_attention(const EncoderState& state, const Matrix& hidden) {
  const std::size_t h = state.config.hidden;
  const std::size_t heads = state.config.heads;
  const std::size_t hk = h / heads;
  const std::size_t steps = hidden.rows();
  if (steps < 1) throw ContractError("self_attention needs at least one step");
  if (hidden.cols() != h) throw ShapeError("hidden states are " + hidden.shape_str());

  const Matrix q = num::matmul(hidden, state.attn_q);
  const Matrix k = num::matmul(hidden, state.attn_k);
  const Matrix v = num::matmul(hidden, state.attn_v);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hk));

  AttentionResult result{Matrix(steps, h), {}};
  for (std::size_t head = 0; head < heads; ++head) {
    const std::size_t c0 = head * hk;
    Matrix scores(steps, steps);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t u = 0; u < steps; ++u) {
        double s = 0.0;
        for (std::size_t j = 0; j < hk; ++j) s += q(t, c0 + j) * k(u, c0 + j);
        scores(t, u) = s * inv_sqrt;
      }
    Matrix weights = num::softmax_rows(scores);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t u = 0; u < steps; ++u)
        for (std::size_t j = 0; j < hk; ++j)
          result.context(t, c0 + j) += weights(t, u) * v(u, c0 + j);
    result.weights.push_back(std::move(weights));
  }
  return result;
}

Embedding pool_and_project(const EncoderState& state, const Matrix& context) {
  Matrix pooled(1, context.cols());
  for (std::size_t t = 0; t < context.rows(); ++t)
    for (std::size_t j = 0; j < context.cols(); ++j) pooled(0, j) += context(t, j);
  const double inv_steps = 1.0 / static_cast<double>(context.rows());
  for (double& v : pooled.data()) v *= inv_steps;
  Matrix e = num::matmul(pooled, state.out_w);
  for (std::size_t j = 0; j < e.cols(); ++j) e(0, j) += state.out_b(0, j);
  const Matrix z = num::l2_normalize_rows(e);
  return Embedding{std::vector<double>(z.data().begin(), z.data().end())};
}

Embedding encode(const EncoderState& state, std::span<const double> features) {
  const Matrix tokens = project_tokens(state, tokenize(state.config, features));
  const Matrix hidden = lstm_forward(state, tokens);
  const AttentionResult attn = self_attention(state, hidden);
  return pool_and_project(state, attn.context);
}

std::array<double, 2> head_probs(const EncoderState& state, const Embedding& z) {
  if (z.values.size() != state.config.embed_dim) {
    throw ShapeError("embedding has " + std::to_string(z.values.size()) + " dims, expected " +
                     std::to_string(state.config.embed_dim));
  }
  const Matrix logits = num::matmul(Matrix::row_vector(z.values), state.head_w);
  Matrix l(1, 2);
  l(0, 0) = logits(0, 0) + state.head_b(0, 0);
  l(0, 1) = logits(0, 1) + state.head_b(0, 1);
  const Matrix p = num::softmax_rows(l);
  return {p(0, 0), p(0, 1)};
}

// --- Batched graph ----------------------------------------------------------

GraphParams bind(Tape& tape, const EncoderState& state, bool trainable) {
  GraphParams g;
  const auto params = state.parameters();
  for (std::size_t i = 0; i < kParamCount; ++i)
    g.vars[i] = trainable ? tape.leaf(*params[i]) : tape.constant(*params[i]);
  return g;
}

Var encode_graph(Tape& tape, const GraphParams& params, const EncoderConfig& config,
                 const Matrix& features) {
  if (features.cols() != config.input_dim) {
    throw ShapeError("feature matrix is " + features.shape_str() + ", expected " +
                     std::to_string(config.input_dim) + " columns");
  }
  const auto& v = params.vars;
  const Var token_w = v[0], token_b = v[1], position = v[2], lstm_w = v[3], lstm_b = v[4];
  const Var attn_q = v[5], attn_k = v[6], attn_v = v[7], out_w = v[8], out_b = v[9];

  const std::size_t n = features.rows();
  const std::size_t h = config.hidden;
  const std::size_t steps = config.input_dim;
  const Var x = tape.constant(tokenize(config, features));

  Var hid = tape.constant(Matrix(n, h));
  Var cell = tape.constant(Matrix(n, h));
  std::vector<Var> hs;
  hs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var tok = tape.matmul(tape.slice_cols(x, t, t + 1), token_w);
    tok = tape.add_row(tape.add_row(tok, token_b), tape.slice_rows(position, t, t + 1));
    const std::array<Var, 2> parts{tok, hid};
    const Var gates = tape.add_row(tape.matmul(tape.concat_cols(parts), lstm_w), lstm_b);
    const Var in = tape.sigmoid(tape.slice_cols(gates, 0, h));
    const Var forget = tape.sigmoid(tape.slice_cols(gates, h, 2 * h));
    const Var cand = tape.tanh(tape.slice_cols(gates, 2 * h, 3 * h));
    const Var outg = tape.sigmoid(tape.slice_cols(gates, 3 * h, 4 * h));
    cell = tape.add(tape.hadamard(forget, cell), tape.hadamard(in, cand));
    hid = tape.hadamard(outg, tape.tanh(cell));
    hs.push_back(hid);
  }

  const std::size_t heads = config.heads;
  const std::size_t hk = h / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hk));
  std::vector<Var> qs, ks, vs;
  for (Var ht : hs) {
    qs.push_back(tape.matmul(ht, attn_q));
    ks.push_back(tape.matmul(ht, attn_k));
    vs.push_back(tape.matmul(ht, attn_v));
  }

  Var pooled{};
  bool have_pooled = false;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<Var> head_ctx;
    for (std::size_t head = 0; head < heads; ++head) {
      const std::size_t c0 = head * hk, c1 = c0 + hk;
      auto cols = [&](Var m) { return heads == 1 ? m : tape.slice_cols(m, c0, c1); };
      const Var qt = cols(qs[t]);
      std::vector<Var> scores;
      for (std::size_t u = 0; u < steps; ++u)
        scores.push_back(tape.row_sums(tape.hadamard(qt, cols(ks[u]))));
      const Var weights = tape.softmax_rows(tape.scale(tape.concat_cols(scores), inv_sqrt));
      Var ctx = tape.mul_col(cols(vs[0]), tape.slice_cols(weights, 0, 1));
      for (std::size_t u = 1; u < steps; ++u)
        ctx = tape.add(ctx, tape.mul_col(cols(vs[u]), tape.slice_cols(weights, u, u + 1)));
      head_ctx.push_back(ctx);
    }
    const Var ctx_t = heads == 1 ? head_ctx[0] : tape.concat_cols(head_ctx);
    pooled = have_pooled ? tape.add(pooled, ctx_t) : ctx_t;
    have_pooled = true;
  }
  pooled = tape.scale(pooled, 1.0 / static_cast<double>(steps));
  const Var e = tape.add_row(tape.matmul(pooled, out_w), out_b);
  return tape.l2_normalize_rows(e);
}

Var head_logits_graph(Tape& tape, const GraphParams& params, Var embeddings) {
  return tape.add_row(tape.matmul(embeddings, params.vars[10]), params.vars[11]);
}

Matrix encode_batch(const EncoderState& state, const Matrix& features) {
  // Chunked so the tape for a large matrix stays small.
  constexpr std::size_t kChunk = 128;
  if (features.cols() != state.config.input_dim) {
    throw ShapeError("feature matrix is " + features.shape_str() + ", expected " +
                     std::to_string(state.config.input_dim) + " columns");
  }
  Matrix out(features.rows(), state.config.embed_dim);
  for (std::size_t begin = 0; begin < features.rows(); begin += kChunk) {
    const std::size_t end = std::min(features.rows(), begin + kChunk);
    Matrix chunk(end - begin, features.cols());
    for (std::size_t i = begin; i < end; ++i)
      std::copy(features.row(i).begin(), features.row(i).end(), chunk.row(i - begin).begin());
    Tape tape;
    const GraphParams params = bind(tape, state, false);
    const Matrix& z = tape.value(encode_graph(tape, params, state.config, chunk));
    for (std::size_t i = begin; i < end; ++i)
      std::copy(z.row(i - begin).begin(), z.row(i - begin).end(), out.row(i).begin());
  }
  return out;
}

Matrix head_probs_batch(const EncoderState& state, const Matrix& embeddings) {
  if (embeddings.cols() != state.config.embed_dim) {
    throw ShapeError("embeddings are " + embeddings.shape_str() + ", expected width " +
                     std::to_string(state.config.embed_dim));
  }
  Matrix logits = num::matmul(embeddings, state.head_w);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < 2; ++j) logits(i, j) += state.head_b(0, j);
  return num::softmax_rows(logits);
}

// --- Checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'U', 'C', 'F', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  void expect_magic() {
    need(4);
    for (int i = 0; i < 4; ++i)
      if (bytes_[pos_ + i] != static_cast<std::uint8_t>(kMagic[i]))
        throw IntegrityError("checkpoint magic mismatch (expected UCF1)");
    pos_ += 4;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IntegrityError("checkpoint truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const EncoderState& state) {
  state.check_shapes();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  const auto& c = state.config;
  for (std::uint32_t d : {c.input_dim, c.token_dim, c.hidden, c.heads, c.embed_dim, c.head_classes})
    put_u32(out, d);
  for (const Matrix* m : state.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(m->rows()));
    put_u32(out, static_cast<std::uint32_t>(m->cols()));
    for (double v : m->data()) put_f64(out, v);
  }
  return out;
}

EncoderState deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic();
  EncoderState s;
  s.config.input_dim = r.u32();
  s.config.token_dim = r.u32();
  s.config.hidden = r.u32();
  s.config.heads = r.u32();
  s.config.embed_dim = r.u32();
  s.config.head_classes = r.u32();
  s.config.validate();
  const auto shapes = expected_shapes(s.config);
  auto params = s.parameters();
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != shapes[i].rows || cols != shapes[i].cols) {
      throw IntegrityError(std::string("checkpoint parameter ") +
                           EncoderState::parameter_names()[i] + " has wrong shape");
    }
    std::vector<double> data(static_cast<std::size_t>(rows) * cols);
    for (double& v : data) v = r.f64();
    *params[i] = Matrix(rows, cols, std::move(data));
  }
  if (!r.at_end()) throw IntegrityError("trailing bytes after checkpoint");
  return s;
}

void save(const EncoderState& state, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize(state));
}

EncoderState load(const std::filesystem::path& path) { return deserialize(io::read_bytes(path)); }

}  // namespace ucf::encoder
