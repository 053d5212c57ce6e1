#include "dynembed/encoder.hpp"
#include "dynembed/error.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dynembed;

namespace {

EncoderState tiny_state(int dim, int heads, int layers, int nodes, std::uint64_t seed, int max_seq = 8) {
  EncoderConfig cfg;
  cfg.dim = dim;
  cfg.heads = heads;
  cfg.layers = layers;
  cfg.max_seq = max_seq;
  Rng rng = make_rng(seed);
  auto state = EncoderState::initialize(cfg, Vocabulary{nodes}, rng);
  // Move LayerNorm parameters and biases off their neutral start values so
  // the gradient check exercises every term.
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& l : state.layers)
    for (Matrix* m : {&l.ff_in_bias, &l.ff_out_bias, &l.norm1_shift, &l.norm2_shift, &l.norm1_scale,
                      &l.norm2_scale})
      for (Eigen::Index i = 0; i < m->size(); ++i) (*m)(i) += n(rng);
  state.token_embedding *= 20.0;
  return state;
}

Matrix naive_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                       const std::vector<std::uint8_t>& pad) {
  const auto n = q.rows(), m = k.rows();
  Matrix w(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    double z = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0;
      for (Eigen::Index c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      w(i, j) = pad.empty() || !pad[j] ? std::exp(s / std::sqrt(double(q.cols()))) : 0.0;
      z += w(i, j);
    }
    w.row(i) /= z;
  }
  return w * v;
}

}  // namespace

TEST(EncoderConfig, RejectsIndivisibleHeads) {
  EncoderConfig cfg;
  cfg.dim = 10;
  cfg.heads = 4;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.dim = 252;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.head_dim(), 63);
  EXPECT_EQ(cfg.ffn_width(), 1008);
}

TEST(Vocabulary, SpecialTokensFollowNodes) {
  const Vocabulary v{116};
  EXPECT_EQ(v.size(), 119);
  EXPECT_EQ(v.cls(), 116);
  EXPECT_EQ(v.mask(), 117);
  EXPECT_EQ(v.pad(), 118);
  EXPECT_TRUE(v.is_node(115));
  EXPECT_FALSE(v.is_node(116));
}

TEST(PositionalEncoding, KnownValues) {
  const RowVector p0 = positional_encoding(0, 4);
  EXPECT_DOUBLE_EQ(p0(0), 0.0);
  EXPECT_DOUBLE_EQ(p0(1), 1.0);
  EXPECT_DOUBLE_EQ(p0(2), 0.0);
  EXPECT_DOUBLE_EQ(p0(3), 1.0);
  const RowVector p1 = positional_encoding(1, 4);
  EXPECT_NEAR(p1(0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(p1(1), std::cos(1.0), 1e-15);
  EXPECT_NEAR(p1(2), std::sin(0.01), 1e-15);
  EXPECT_NEAR(p1(3), std::cos(0.01), 1e-15);
  const Matrix table = positional_encodings(21, 16);
  for (int pos = 0; pos < 21; ++pos) {
    EXPECT_EQ(table.row(pos), positional_encoding(pos, 16));
    for (int i = 0; i < 8; ++i)  // each sin/cos pair lies on the unit circle
      EXPECT_NEAR(table(pos, 2 * i) * table(pos, 2 * i) + table(pos, 2 * i + 1) * table(pos, 2 * i + 1),
                  1.0, 1e-12);
  }
}

TEST(Attention, MatchesNaiveAndRowsSumToOne) {
  Rng rng = make_rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const int len = 2 + trial % 7, dk = 1 + trial % 5;
    Matrix q(len, dk), k(len, dk), v(len, dk + 1);
    for (Matrix* m : {&q, &k, &v})
      for (Eigen::Index i = 0; i < m->size(); ++i) (*m)(i) = n(rng);
    std::vector<std::uint8_t> pad(len, 0);
    if (trial % 2) pad.back() = 1;
    const auto out = attention(q, k, v, pad);
    EXPECT_TRUE(out.values.isApprox(naive_attention(q, k, v, pad), 1e-12));
    for (int i = 0; i < len; ++i) {
      EXPECT_NEAR(out.weights.row(i).sum(), 1.0, 1e-12);
      if (pad.back()) EXPECT_EQ(out.weights(i, len - 1), 0.0);
    }
  }
}

TEST(MultiHead, EqualsPerHeadAttentionConcatenated) {
  auto state = tiny_state(8, 2, 1, 6, 4);
  Rng rng = make_rng(5);
  std::normal_distribution<double> n(0, 1);
  Matrix x(5, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = n(rng);
  const auto& layer = state.layers[0];
  const auto out = multi_head(x, layer, 2);
  Matrix concat(5, 8);
  for (int h = 0; h < 2; ++h)
    concat.middleCols(h * 4, 4) = naive_attention((x * layer.query).middleCols(h * 4, 4),
                                                  (x * layer.key).middleCols(h * 4, 4),
                                                  (x * layer.value).middleCols(h * 4, 4), {});
  EXPECT_TRUE(out.values.isApprox(concat * layer.output, 1e-12));
  ASSERT_EQ(out.weights.size(), 2u);
}

TEST(Initialize, FollowsDeclaredScheme) {
  EncoderConfig cfg;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.layers = 2;
  Rng rng = make_rng(6);
  const auto s = EncoderState::initialize(cfg, Vocabulary{200}, rng);
  EXPECT_EQ(s.token_embedding.rows(), 203);
  const double mean = s.token_embedding.mean();
  const double sd = std::sqrt((s.token_embedding.array() - mean).square().mean());
  EXPECT_NEAR(sd, 0.02, 0.002);
  const double bound = std::sqrt(6.0 / 64.0);
  for (const auto& l : s.layers) {
    EXPECT_LE(l.query.cwiseAbs().maxCoeff(), bound);
    EXPECT_TRUE(l.ff_in_bias.isZero());
    EXPECT_TRUE(l.norm1_scale.isOnes());
    EXPECT_TRUE(l.norm2_shift.isZero());
    EXPECT_EQ(l.ff_in.cols(), 128);
  }
  EXPECT_NO_THROW(s.validate());
}

TEST(Encode, OutputRowsAreLayerNormalised) {
  EncoderConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  Rng rng = make_rng(7);
  const auto s = EncoderState::initialize(cfg, Vocabulary{10}, rng);
  const std::vector<int> tokens{10, 1, 2, 3, 11, 4};
  const auto enc = encode(tokens, s);
  ASSERT_EQ(enc.positions.rows(), 6);
  for (int i = 0; i < 6; ++i) {
    const auto row = enc.positions.row(i);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
  EXPECT_EQ(enc.cls, enc.positions.row(0));
}

TEST(Encode, PadSuffixDoesNotChangeRealPositions) {
  const auto s = tiny_state(8, 2, 2, 6, 8, 10);
  const std::vector<int> short_seq{6, 0, 1, 2};
  std::vector<int> padded = short_seq;
  padded.resize(10, s.vocab.pad());
  const auto a = encode(short_seq, s);
  const auto b = encode(padded, s);
  EXPECT_TRUE(a.positions.isApprox(b.positions.topRows(4), 1e-12));
}

TEST(Encode, TrainingPathMatchesInferenceWithoutDropout) {
  const auto s = tiny_state(8, 2, 2, 6, 9);
  const std::vector<int> tokens{6, 3, 7, 1, 2};
  ForwardCache cache;
  const Matrix out = encode_forward(tokens, s, cache);
  EXPECT_EQ(out, encode(tokens, s).positions);
}

TEST(Encode, DropoutOnlyWithRng) {
  auto s = tiny_state(8, 2, 1, 6, 10);
  s.config.dropout = 0.5;
  const std::vector<int> tokens{6, 3, 7, 1, 2};
  ForwardCache c1, c2;
  Rng rng = make_rng(1);
  EXPECT_EQ(encode_forward(tokens, s, c1), encode(tokens, s).positions);
  EXPECT_NE(encode_forward(tokens, s, c2, &rng), encode(tokens, s).positions);
}

TEST(Encode, RejectsBadTokens) {
  const auto s = tiny_state(8, 2, 1, 6, 11, 4);
  EXPECT_THROW(encode(std::vector<int>{6, 9}, s), ValidationError);
  EXPECT_THROW(encode(std::vector<int>{6, -1}, s), ValidationError);
  EXPECT_THROW(encode(std::vector<int>{6, 1, 2, 3, 4}, s), ValidationError);
}

TEST(EncodeBackward, MatchesCentralDifferences) {
  auto state = tiny_state(8, 2, 2, 6, 12);
  const std::vector<int> tokens{6, 0, 7, 3, 1, 8, 8};  // CLS, nodes, MASK, PADs
  Rng rng = make_rng(13);
  std::normal_distribution<double> n(0, 1);
  Matrix probe(7, 8);
  for (Eigen::Index i = 0; i < probe.size(); ++i) probe(i) = n(rng);
  auto loss = [&](const EncoderState& s) {
    const auto out = encode(tokens, s).positions;
    return (out.topRows(5).array() * probe.topRows(5).array()).sum();
  };

  ForwardCache cache;
  encode_forward(tokens, state, cache);
  Matrix d_out = probe;
  d_out.bottomRows(2).setZero();
  EncoderState grads = state.zeros_like();
  encode_backward(cache, state, d_out, grads);

  std::vector<Matrix*> params, grad_tensors;
  state.for_each_tensor([&](std::string_view, Matrix& m) { params.push_back(&m); });
  grads.for_each_tensor([&](std::string_view, Matrix& m) { grad_tensors.push_back(&m); });
  const double h = 1e-4;
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (Eigen::Index i = 0; i < params[p]->size(); ++i) {
      double& w = (*params[p])(i);
      const double saved = w;
      w = saved + h;
      const double up = loss(state);
      w = saved - h;
      const double down = loss(state);
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = (*grad_tensors[p])(i);
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
  EXPECT_LT(worst, 1e-3);
}
