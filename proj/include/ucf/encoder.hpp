#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ucf/numcore/matrix.hpp"
#include "ucf/numcore/tape.hpp"

namespace ucf::encoder {

using num::Matrix;

// Each input feature becomes one timestep: a scalar token projected to
// `token_dim`, plus a learned per-step positional vector.
struct EncoderConfig {
  std::uint32_t input_dim = 10;
  std::uint32_t token_dim = 8;
  std::uint32_t hidden = 64;
  std::uint32_t heads = 1;
  std::uint32_t embed_dim = 32;
  std::uint32_t head_classes = 2;

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline constexpr std::size_t kParamCount = 12;
// Leading parameters that belong to the encoder proper; the rest is the head.
inline constexpr std::size_t kEncoderParamCount = 10;

// All learned weights. LSTM gate blocks are laid out [input, forget, cell, output]
// along the columns of `lstm_w` / `lstm_b`.
struct EncoderState {
  EncoderConfig config;
  Matrix token_w;   // 1 x token_dim
  Matrix token_b;   // 1 x token_dim
  Matrix position;  // input_dim x token_dim
  Matrix lstm_w;    // (token_dim + hidden) x 4*hidden
  Matrix lstm_b;    // 1 x 4*hidden
  Matrix attn_q;    // hidden x hidden
  Matrix attn_k;
  Matrix attn_v;
  Matrix out_w;     // hidden x embed_dim
  Matrix out_b;     // 1 x embed_dim
  Matrix head_w;    // embed_dim x 2
  Matrix head_b;    // 1 x 2

  std::array<Matrix*, kParamCount> parameters();
  std::array<const Matrix*, kParamCount> parameters() const;
  static const std::array<const char*, kParamCount>& parameter_names();

  // Throws ShapeError if any parameter disagrees with `config`.
  void check_shapes() const;

  friend bool operator==(const EncoderState&, const EncoderState&) = default;
};

// Unit-norm session embedding.
struct Embedding {
  std::vector<double> values;
};

// Glorot-uniform weights, zero biases except the forget gate (1.0).
EncoderState init(const EncoderConfig& config, std::uint64_t seed);

// --- Per-sample sub-operations --------------------------------------------

// One scalar token per feature: the unit interval mapped onto [-1, 1], so
// tokens of min-max scaled inputs are centred at zero.
std::vector<double> tokenize(const EncoderConfig& config, std::span<const double> features);
Matrix tokenize(const EncoderConfig& config, const Matrix& features);

// input_dim x token_dim; row t = token_t * token_w + token_b + position[t].
Matrix project_tokens(const EncoderState& state, std::span<const double> tokens);

// T x hidden, one row per step.
Matrix lstm_forward(const EncoderState& state, const Matrix& tokens);

struct AttentionResult {
  Matrix context;                // T x hidden
  std::vector<Matrix> weights;   // one T x T matrix per head
};

// Scaled dot-product self-attention over the hidden-state sequence.
AttentionResult self_attention(const EncoderState& state, const Matrix& hidden);

// Mean over steps, linear map to embed_dim, L2 normalization.
Embedding pool_and_project(const EncoderState& state, const Matrix& context);

Embedding encode(const EncoderState& state, std::span<const double> features);

// Two-class softmax head; index 1 is the positive class.
std::array<double, 2> head_probs(const EncoderState& state, const Embedding& z);

// --- Batched differentiable graph -----------------------------------------

struct GraphParams {
  std::array<num::Var, kParamCount> vars;
};

// Registers the state's parameters on `tape`, as leaves when `trainable`.
GraphParams bind(num::Tape& tape, const EncoderState& state, bool trainable);

// n x embed_dim unit-norm embeddings for the rows of `features`.
num::Var encode_graph(num::Tape& tape, const GraphParams& params, const EncoderConfig& config,
                      const Matrix& features);

// n x 2 head logits.
num::Var head_logits_graph(num::Tape& tape, const GraphParams& params, num::Var embeddings);

// Inference on many rows at once; same arithmetic as encode_graph.
Matrix encode_batch(const EncoderState& state, const Matrix& features);
Matrix head_probs_batch(const EncoderState& state, const Matrix& embeddings);

// --- Checkpoints -----------------------------------------------------------
// "UCF1", six little-endian u32 config dims, then per parameter: u32 rows,
// u32 cols, rows*cols little-endian IEEE-754 doubles.

std::vector<std::uint8_t> serialize(const EncoderState& state);
EncoderState deserialize(std::span<const std::uint8_t> bytes);
void save(const EncoderState& state, const std::filesystem::path& path);
EncoderState load(const std::filesystem::path& path);

}  // namespace ucf::encoder
