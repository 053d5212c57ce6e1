#pragma once

// Transformer encoder over walk token sequences with an explicit backward pass.
//
// Layout: post-norm blocks of
//   x -> x + MultiHead(x) -> Norm -> y + FFN(y) -> Norm
// Every tensor is an Eigen::MatrixXd; vectors (biases, norm parameters) are
// stored as 1 x n matrices so that optimizers and checkpoints treat all
// parameters uniformly.

#include "dynembed/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dynembed {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Node tokens 0..R-1 followed by CLS, MASK and PAD.
struct Vocabulary {
  int node_count = 0;

  int size() const { return node_count + 3; }
  int cls() const { return node_count; }
  int mask() const { return node_count + 1; }
  int pad() const { return node_count + 2; }
  bool is_node(int token) const { return token >= 0 && token < node_count; }
  bool contains(int token) const { return token >= 0 && token < size(); }

  bool operator==(const Vocabulary&) const = default;
};

struct EncoderConfig {
  int dim = 252;
  int heads = 4;
  int layers = 6;
  int ff_dim = 0;  ///< 0 selects 4 * dim
  int max_seq = 21;
  double dropout = 0.0;
  double norm_eps = 1e-5;

  int head_dim() const { return dim / heads; }
  int ffn_width() const { return ff_dim > 0 ? ff_dim : 4 * dim; }
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  // Head h owns columns [h * d_k, (h + 1) * d_k) of query/key/value.
  Matrix query, key, value;  // d x d
  Matrix output;             // d x d
  Matrix ff_in, ff_in_bias;    // d x d_ff, 1 x d_ff
  Matrix ff_out, ff_out_bias;  // d_ff x d, 1 x d
  Matrix norm1_scale, norm1_shift;  // 1 x d
  Matrix norm2_scale, norm2_shift;  // 1 x d
};

struct EncoderState {
  EncoderConfig config;
  Vocabulary vocab;
  Matrix token_embedding;  // |V| x d
  std::vector<LayerParams> layers;

  static EncoderState initialize(const EncoderConfig& config, const Vocabulary& vocab, Rng& rng);

  /// Same shapes, all entries zero; used as a gradient accumulator.
  EncoderState zeros_like() const;

  /// Throws ValidationError on a shape inconsistency or non-finite entry.
  void validate() const;

  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f(std::string_view("token_embedding"), self.token_embedding);
    std::string name;
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& p = self.layers[l];
      const std::string prefix = "layer" + std::to_string(l) + ".";
      auto emit = [&](const char* field, auto& m) {
        name = prefix + field;
        f(std::string_view(name), m);
      };
      emit("query", p.query);
      emit("key", p.key);
      emit("value", p.value);
      emit("output", p.output);
      emit("ff_in", p.ff_in);
      emit("ff_in_bias", p.ff_in_bias);
      emit("ff_out", p.ff_out);
      emit("ff_out_bias", p.ff_out_bias);
      emit("norm1_scale", p.norm1_scale);
      emit("norm1_shift", p.norm1_shift);
      emit("norm2_scale", p.norm2_scale);
      emit("norm2_shift", p.norm2_shift);
    }
  }
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(int rows, int cols, Rng& rng);

/// Sinusoidal encoding of one position.
RowVector positional_encoding(int pos, int dim);
/// Rows 0..length-1 of the sinusoidal table.
Matrix positional_encodings(int length, int dim);

struct AttentionOutput {
  Matrix values;   // n x d_v
  Matrix weights;  // n x n, rows sum to 1
};

/// softmax(Q K^T / sqrt(d_k)) V. Keys flagged in `key_is_pad` receive zero weight.
AttentionOutput attention(const Matrix& q, const Matrix& k, const Matrix& v,
                          std::span<const std::uint8_t> key_is_pad = {});

struct MultiHeadOutput {
  Matrix values;                 // n x d
  std::vector<Matrix> weights;   // one n x n matrix per head
};

MultiHeadOutput multi_head(const Matrix& x, const LayerParams& layer, int heads,
                           std::span<const std::uint8_t> key_is_pad = {});

/// Position-wise max(0, x W1 + b1) W2 + b2.
Matrix feed_forward(const Matrix& x, const LayerParams& layer);

/// Intermediate activations of one layer, kept for the backward pass.
struct LayerCache {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> weights;
  Matrix concat;
  Matrix attn_drop;  // empty when dropout is off
  Matrix norm1_hat;
  Eigen::VectorXd norm1_inv_std;
  Matrix norm1_out;
  Matrix ff_pre;
  Matrix ff_act;
  Matrix ff_drop;
  Matrix norm2_hat;
  Eigen::VectorXd norm2_inv_std;
};

struct ForwardCache {
  std::vector<int> tokens;
  std::vector<std::uint8_t> key_is_pad;
  Matrix embed_drop;
  std::vector<LayerCache> layers;
  Matrix output;
};

struct Encoding {
  Matrix positions;  // n x d
  RowVector cls;     // row 0
};

/// Inference forward pass. Throws ValidationError for tokens outside the
/// vocabulary or sequences longer than max_seq.
Encoding encode(std::span<const int> tokens, const EncoderState& state);

/// Training forward pass. Dropout is applied only when `dropout_rng` is given
/// and config.dropout > 0. Returns the n x d output, also kept in the cache.
const Matrix& encode_forward(std::span<const int> tokens, const EncoderState& state,
                             ForwardCache& cache, Rng* dropout_rng = nullptr);

/// Accumulates d(loss)/d(parameters) into `grads` given d(loss)/d(output).
void encode_backward(const ForwardCache& cache, const EncoderState& state, Matrix d_output,
                     EncoderState& grads);

}  // namespace dynembed
