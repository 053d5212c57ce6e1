#include "dynembed/encoder.hpp"

#include "dynembed/error.hpp"

#include <cmath>
#include <limits>

namespace dynembed {

void EncoderConfig::validate() const {
  if (dim < 1 || heads < 1 || layers < 1) throw ValidationError("encoder sizes must be positive");
  if (dim % heads != 0)
    throw ValidationError("embedding dimension " + std::to_string(dim) +
                          " is not divisible by head count " + std::to_string(heads));
  if (ffn_width() < 1) throw ValidationError("feed-forward width must be positive");
  if (max_seq < 2) throw ValidationError("max_seq must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (!(norm_eps > 0.0)) throw ValidationError("norm epsilon must be positive");
}

Matrix xavier_uniform(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  return m;
}

EncoderState EncoderState::initialize(const EncoderConfig& config, const Vocabulary& vocab,
                                      Rng& rng) {
  config.validate();
  if (vocab.node_count < 1) throw ValidationError("vocabulary has no node tokens");
  EncoderState s;
  s.config = config;
  s.vocab = vocab;
  const int d = config.dim;
  const int ff = config.ffn_width();

  std::normal_distribution<double> normal(0.0, 0.02);
  s.token_embedding.resize(vocab.size(), d);
  for (Eigen::Index j = 0; j < s.token_embedding.cols(); ++j)
    for (Eigen::Index i = 0; i < s.token_embedding.rows(); ++i)
      s.token_embedding(i, j) = normal(rng);

  s.layers.resize(config.layers);
  for (auto& p : s.layers) {
    p.query = xavier_uniform(d, d, rng);
    p.key = xavier_uniform(d, d, rng);
    p.value = xavier_uniform(d, d, rng);
    p.output = xavier_uniform(d, d, rng);
    p.ff_in = xavier_uniform(d, ff, rng);
    p.ff_in_bias = Matrix::Zero(1, ff);
    p.ff_out = xavier_uniform(ff, d, rng);
    p.ff_out_bias = Matrix::Zero(1, d);
    p.norm1_scale = Matrix::Ones(1, d);
    p.norm1_shift = Matrix::Zero(1, d);
    p.norm2_scale = Matrix::Ones(1, d);
    p.norm2_shift = Matrix::Zero(1, d);
  }
  return s;
}

EncoderState EncoderState::zeros_like() const {
  EncoderState z = *this;
  z.for_each_tensor([](std::string_view, Matrix& m) { m.setZero(); });
  return z;
}

void EncoderState::validate() const {
  config.validate();
  const int d = config.dim;
  const int ff = config.ffn_width();
  auto expect = [](const Matrix& m, Eigen::Index r, Eigen::Index c, std::string_view name) {
    if (m.rows() != r || m.cols() != c)
      throw ValidationError("tensor " + std::string(name) + " has shape " +
                            std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                            ", expected " + std::to_string(r) + "x" + std::to_string(c));
  };
  expect(token_embedding, vocab.size(), d, "token_embedding");
  if (static_cast<int>(layers.size()) != config.layers)
    throw ValidationError("layer count does not match config");
  for (const auto& p : layers) {
    expect(p.query, d, d, "query");
    expect(p.key, d, d, "key");
    expect(p.value, d, d, "value");
    expect(p.output, d, d, "output");
    expect(p.ff_in, d, ff, "ff_in");
    expect(p.ff_in_bias, 1, ff, "ff_in_bias");
    expect(p.ff_out, ff, d, "ff_out");
    expect(p.ff_out_bias, 1, d, "ff_out_bias");
    expect(p.norm1_scale, 1, d, "norm1_scale");
    expect(p.norm1_shift, 1, d, "norm1_shift");
    expect(p.norm2_scale, 1, d, "norm2_scale");
    expect(p.norm2_shift, 1, d, "norm2_shift");
  }
  for_each_tensor([](std::string_view name, const Matrix& m) {
    if (!m.allFinite()) throw ValidationError("tensor " + std::string(name) + " is not finite");
  });
}

RowVector positional_encoding(int pos, int dim) {
  RowVector pe(dim);
  for (int j = 0; j < dim; ++j) {
    const int pair = j - (j % 2);  // 2i
    const double angle =
        static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(pair) / dim);
    pe(j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return pe;
}

Matrix positional_encodings(int length, int dim) {
  Matrix table(length, dim);
  for (int pos = 0; pos < length; ++pos) table.row(pos) = positional_encoding(pos, dim);
  return table;
}

AttentionOutput attention(const Matrix& q, const Matrix& k, const Matrix& v,
                          std::span<const std::uint8_t> key_is_pad) {
  const Eigen::Index n = q.rows();
  const Eigen::Index m = k.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  AttentionOutput out;
  out.weights.noalias() = (q * k.transpose()) * scale;
  const bool masked = !key_is_pad.empty();
  for (Eigen::Index i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j)
      if (!masked || !key_is_pad[j]) top = std::max(top, out.weights(i, j));
    double total = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double e = (masked && key_is_pad[j]) ? 0.0 : std::exp(out.weights(i, j) - top);
      out.weights(i, j) = e;
      total += e;
    }
    out.weights.row(i) /= total;
  }
  out.values.noalias() = out.weights * v;
  return out;
}

MultiHeadOutput multi_head(const Matrix& x, const LayerParams& layer, int heads,
                           std::span<const std::uint8_t> key_is_pad) {
  const Eigen::Index d = x.cols();
  if (d != layer.query.rows() || d % heads != 0)
    throw ValidationError("multi_head: input width does not match layer parameters");
  const Eigen::Index dk = d / heads;
  const Matrix q = x * layer.query;
  const Matrix k = x * layer.key;
  const Matrix v = x * layer.value;
  Matrix concat(x.rows(), d);
  MultiHeadOutput out;
  for (int h = 0; h < heads; ++h) {
    auto a = attention(q.middleCols(h * dk, dk), k.middleCols(h * dk, dk),
                       v.middleCols(h * dk, dk), key_is_pad);
    concat.middleCols(h * dk, dk) = a.values;
    out.weights.push_back(std::move(a.weights));
  }
  out.values = concat * layer.output;
  return out;
}

Matrix feed_forward(const Matrix& x, const LayerParams& layer) {
  Matrix hidden = (x * layer.ff_in).rowwise() + layer.ff_in_bias.row(0);
  hidden = hidden.cwiseMax(0.0);
  return (hidden * layer.ff_out).rowwise() + layer.ff_out_bias.row(0);
}

namespace {

void check_tokens(std::span<const int> tokens, const EncoderState& state) {
  if (tokens.empty()) throw ValidationError("empty token sequence");
  if (static_cast<int>(tokens.size()) > state.config.max_seq)
    throw ValidationError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                          std::to_string(state.config.max_seq));
  for (int t : tokens)
    if (!state.vocab.contains(t)) throw ValidationError("unknown token id " + std::to_string(t));
}

// Row-wise normalisation: y = (x - mean) * inv_std * scale + shift.
Matrix layer_norm(const Matrix& x, const Matrix& scale, const Matrix& shift, double eps,
                  Matrix& x_hat, Eigen::VectorXd& inv_std) {
  const Eigen::Index d = x.cols();
  x_hat.resize(x.rows(), d);
  inv_std.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(d);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    x_hat.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Matrix y = x_hat.array().rowwise() * scale.row(0).array();
  y.rowwise() += shift.row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& x_hat, const Eigen::VectorXd& inv_std,
                           const Matrix& scale, Matrix& d_scale, Matrix& d_shift) {
  d_scale.row(0) += (dy.array() * x_hat.array()).colwise().sum().matrix();
  d_shift.row(0) += dy.colwise().sum();
  const Matrix g = dy.array().rowwise() * scale.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_g = g.row(i).sum() / d;
    const double mean_gx = g.row(i).dot(x_hat.row(i)) / d;
    dx.row(i) = inv_std(i) * (g.row(i).array() - mean_g - x_hat.row(i).array() * mean_gx).matrix();
  }
  return dx;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - p);
  Matrix m(rows, cols);
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(rng) ? scale : 0.0;
  return m;
}

}  // namespace

const Matrix& encode_forward(std::span<const int> tokens, const EncoderState& state,
                             ForwardCache& cache, Rng* dropout_rng) {
  check_tokens(tokens, state);
  const EncoderConfig& cfg = state.config;
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
  const int d = cfg.dim;
  const int dk = cfg.head_dim();
  const bool drop = dropout_rng != nullptr && cfg.dropout > 0.0;

  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.key_is_pad.assign(tokens.size(), 0);
  bool any_pad = false;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == state.vocab.pad()) {
      cache.key_is_pad[i] = 1;
      any_pad = true;
    }
  const std::span<const std::uint8_t> pad_mask =
      any_pad ? std::span<const std::uint8_t>(cache.key_is_pad) : std::span<const std::uint8_t>();

  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = state.token_embedding.row(tokens[i]) + positional_encoding(static_cast<int>(i), d);
  cache.embed_drop.resize(0, 0);
  if (drop) {
    cache.embed_drop = dropout_mask(n, d, cfg.dropout, *dropout_rng);
    x.array() *= cache.embed_drop.array();
  }

  cache.layers.resize(state.layers.size());
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const LayerParams& p = state.layers[l];
    LayerCache& c = cache.layers[l];
    c.input = x;
    c.q.noalias() = x * p.query;
    c.k.noalias() = x * p.key;
    c.v.noalias() = x * p.value;
    c.concat.resize(n, d);
    c.weights.clear();
    for (int h = 0; h < cfg.heads; ++h) {
      auto a = attention(c.q.middleCols(h * dk, dk), c.k.middleCols(h * dk, dk),
                         c.v.middleCols(h * dk, dk), pad_mask);
      c.concat.middleCols(h * dk, dk) = a.values;
      c.weights.push_back(std::move(a.weights));
    }
    Matrix sub = c.concat * p.output;
    c.attn_drop.resize(0, 0);
    if (drop) {
      c.attn_drop = dropout_mask(n, d, cfg.dropout, *dropout_rng);
      sub.array() *= c.attn_drop.array();
    }
    c.norm1_out = layer_norm(x + sub, p.norm1_scale, p.norm1_shift, cfg.norm_eps, c.norm1_hat,
                             c.norm1_inv_std);

    c.ff_pre = (c.norm1_out * p.ff_in).rowwise() + p.ff_in_bias.row(0);
    c.ff_act = c.ff_pre.cwiseMax(0.0);
    Matrix ff = (c.ff_act * p.ff_out).rowwise() + p.ff_out_bias.row(0);
    c.ff_drop.resize(0, 0);
    if (drop) {
      c.ff_drop = dropout_mask(n, d, cfg.dropout, *dropout_rng);
      ff.array() *= c.ff_drop.array();
    }
    x = layer_norm(c.norm1_out + ff, p.norm2_scale, p.norm2_shift, cfg.norm_eps, c.norm2_hat,
                   c.norm2_inv_std);
  }
  cache.output = std::move(x);
  return cache.output;
}

Encoding encode(std::span<const int> tokens, const EncoderState& state) {
  ForwardCache cache;
  encode_forward(tokens, state, cache, nullptr);
  Encoding e;
  e.cls = cache.output.row(0);
  e.positions = std::move(cache.output);
  return e;
}

void encode_backward(const ForwardCache& cache, const EncoderState& state, Matrix d_output,
                     EncoderState& grads) {
  const EncoderConfig& cfg = state.config;
  const int dk = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Matrix dx = std::move(d_output);

  for (std::size_t li = state.layers.size(); li-- > 0;) {
    const LayerParams& p = state.layers[li];
    const LayerCache& c = cache.layers[li];
    LayerParams& g = grads.layers[li];

    // Second sublayer: norm2(y1 + FFN(y1)).
    Matrix d_res2 =
        layer_norm_backward(dx, c.norm2_hat, c.norm2_inv_std, p.norm2_scale, g.norm2_scale,
                            g.norm2_shift);
    Matrix d_ff = c.ff_drop.size() ? Matrix(d_res2.array() * c.ff_drop.array()) : d_res2;
    g.ff_out.noalias() += c.ff_act.transpose() * d_ff;
    g.ff_out_bias.row(0) += d_ff.colwise().sum();
    Matrix d_hidden = d_ff * p.ff_out.transpose();
    d_hidden.array() *= (c.ff_pre.array() > 0.0).cast<double>();
    g.ff_in.noalias() += c.norm1_out.transpose() * d_hidden;
    g.ff_in_bias.row(0) += d_hidden.colwise().sum();
    Matrix d_y1 = d_res2;
    d_y1.noalias() += d_hidden * p.ff_in.transpose();

    // First sublayer: norm1(x + MultiHead(x)).
    Matrix d_res1 = layer_norm_backward(d_y1, c.norm1_hat, c.norm1_inv_std, p.norm1_scale,
                                        g.norm1_scale, g.norm1_shift);
    Matrix d_sub = c.attn_drop.size() ? Matrix(d_res1.array() * c.attn_drop.array()) : d_res1;
    g.output.noalias() += c.concat.transpose() * d_sub;
    const Matrix d_concat = d_sub * p.output.transpose();

    Matrix dq(c.q.rows(), c.q.cols()), dkm(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (int h = 0; h < cfg.heads; ++h) {
      const Matrix& a = c.weights[h];
      const auto d_head = d_concat.middleCols(h * dk, dk);
      dv.middleCols(h * dk, dk).noalias() = a.transpose() * d_head;
      const Matrix d_a = d_head * c.v.middleCols(h * dk, dk).transpose();
      const Eigen::VectorXd row_dot = (d_a.array() * a.array()).rowwise().sum();
      const Matrix d_scores =
          (a.array() * (d_a.array().colwise() - row_dot.array())).matrix() * scale;
      dq.middleCols(h * dk, dk).noalias() = d_scores * c.k.middleCols(h * dk, dk);
      dkm.middleCols(h * dk, dk).noalias() = d_scores.transpose() * c.q.middleCols(h * dk, dk);
    }
    g.query.noalias() += c.input.transpose() * dq;
    g.key.noalias() += c.input.transpose() * dkm;
    g.value.noalias() += c.input.transpose() * dv;

    dx = d_res1;
    dx.noalias() += dq * p.query.transpose();
    dx.noalias() += dkm * p.key.transpose();
    dx.noalias() += dv * p.value.transpose();
  }

  if (cache.embed_drop.size()) dx.array() *= cache.embed_drop.array();
  for (std::size_t i = 0; i < cache.tokens.size(); ++i)
    grads.token_embedding.row(cache.tokens[i]) += dx.row(static_cast<Eigen::Index>(i));
}

}  // namespace dynembed
