#include "dynembed/trainer.hpp"

#include "dynembed/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dynembed {

Heads Heads::initialize(int dim, int vocab_size, std::vector<std::string> graph_ids, Rng& rng) {
  if (graph_ids.empty()) throw ValidationError("graph head needs at least one graph");
  Heads h;
  h.temporal = xavier_uniform(dim, vocab_size, rng);
  h.graph = xavier_uniform(dim, static_cast<int>(graph_ids.size()), rng);
  h.graph_ids = std::move(graph_ids);
  return h;
}

int Heads::graph_index(std::string_view graph_id) const {
  auto it = std::lower_bound(graph_ids.begin(), graph_ids.end(), graph_id);
  if (it == graph_ids.end() || *it != graph_id)
    throw ValidationError("unknown graph id '" + std::string(graph_id) + "'");
  return static_cast<int>(it - graph_ids.begin());
}

Model Model::zeros_like() const {
  Model z{encoder.zeros_like(), heads};
  z.heads.temporal.setZero();
  z.heads.graph.setZero();
  return z;
}

void MaskPolicy::validate() const {
  if (!(rate > 0.0 && rate <= 1.0)) throw ValidationError("mask rate must lie in (0, 1]");
  if (replace_with_mask < 0 || random_node < 0 || keep < 0 ||
      std::abs(replace_with_mask + random_node + keep - 1.0) > 1e-9)
    throw ValidationError("mask policy probabilities must be non-negative and sum to 1");
}

void TrainConfig::validate() const {
  if (lambda_td < 0 || lambda_gs < 0) throw ValidationError("loss weights must be >= 0");
  if (batch_size < 1 || epochs < 0) throw ValidationError("invalid batch size or epoch count");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  mask.validate();
}

std::vector<int> MaskedBatch::graph_targets() const {
  std::vector<int> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) out.push_back(s.graph);
  return out;
}

int masked_count(int walk_length, double rate) {
  // Guard against 0.15 * 20 landing a hair above 3.
  const int n = static_cast<int>(std::ceil(rate * walk_length - 1e-9));
  return std::clamp(n, 1, walk_length);
}

MaskedSequence make_masked_sequence(const TemporalWalk& walk, int graph, const Vocabulary& vocab,
                                    int max_seq, const MaskPolicy& policy, Rng& rng) {
  const int len = static_cast<int>(walk.nodes.size());
  if (len < 2) throw ValidationError("walk shorter than 2 nodes");
  if (len + 1 > max_seq)
    throw ValidationError("walk of " + std::to_string(len) + " nodes exceeds max_seq " +
                          std::to_string(max_seq));
  MaskedSequence s;
  s.graph = graph;
  s.length = len + 1;
  s.tokens.assign(max_seq, vocab.pad());
  s.tokens[0] = vocab.cls();
  for (int i = 0; i < len; ++i) {
    if (!vocab.is_node(walk.nodes[i]))
      throw ValidationError("node " + std::to_string(walk.nodes[i]) + " outside vocabulary");
    s.tokens[i + 1] = walk.nodes[i];
  }

  // Partial Fisher-Yates over positions 1..len.
  std::vector<int> slots(len);
  std::iota(slots.begin(), slots.end(), 1);
  const int m = masked_count(len, policy.rate);
  for (int i = 0; i < m; ++i) {
    const int j = std::uniform_int_distribution<int>(i, len - 1)(rng);
    std::swap(slots[i], slots[j]);
  }
  slots.resize(m);
  std::sort(slots.begin(), slots.end());

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> any_node(0, vocab.node_count - 1);
  for (int pos : slots) {
    s.positions.push_back(pos);
    s.targets.push_back(s.tokens[pos]);
    const double u = unit(rng);
    if (u < policy.replace_with_mask)
      s.tokens[pos] = vocab.mask();
    else if (u < policy.replace_with_mask + policy.random_node)
      s.tokens[pos] = any_node(rng);
  }
  return s;
}

MaskedBatch make_masked_batch(std::span<const TemporalWalk> walks, std::span<const int> graphs,
                              const Vocabulary& vocab, int max_seq, const MaskPolicy& policy,
                              Rng& rng) {
  if (walks.size() != graphs.size()) throw ValidationError("walk/graph target count mismatch");
  MaskedBatch b;
  b.max_seq = max_seq;
  b.sequences.reserve(walks.size());
  for (std::size_t i = 0; i < walks.size(); ++i)
    b.sequences.push_back(make_masked_sequence(walks[i], graphs[i], vocab, max_seq, policy, rng));
  return b;
}

double masked_token_cross_entropy(const Matrix& positions, const MaskedSequence& seq,
                                  const Matrix& w_td, double scale, Matrix* d_positions,
                                  Matrix* d_w_td) {
  double loss = 0.0;
  for (std::size_t m = 0; m < seq.positions.size(); ++m) {
    const int pos = seq.positions[m];
    const int target = seq.targets[m];
    if (target < 0 || target >= w_td.cols()) throw ValidationError("masked target out of range");
    RowVector logits = positions.row(pos) * w_td;
    const double top = logits.maxCoeff();
    const double lse = top + std::log((logits.array() - top).exp().sum());
    loss += lse - logits(target);
    if (d_positions || d_w_td) {
      RowVector g = (logits.array() - lse).exp().matrix();
      g(target) -= 1.0;
      g *= scale;
      if (d_positions) d_positions->row(pos).noalias() += g * w_td.transpose();
      if (d_w_td) d_w_td->noalias() += positions.row(pos).transpose() * g;
    }
  }
  return loss;
}

double graph_cross_entropy(const RowVector& cls, int target, const Matrix& w_gs, double scale,
                           RowVector* d_cls, Matrix* d_w_gs) {
  if (target < 0 || target >= w_gs.cols())
    throw ValidationError("graph index " + std::to_string(target) + " outside the " +
                          std::to_string(w_gs.cols()) + "-graph corpus");
  RowVector logits = cls * w_gs;
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  const double loss = lse - logits(target);
  if (d_cls || d_w_gs) {
    RowVector g = (logits.array() - lse).exp().matrix();
    g(target) -= 1.0;
    g *= scale;
    if (d_cls) d_cls->noalias() += g * w_gs.transpose();
    if (d_w_gs) d_w_gs->noalias() += cls.transpose() * g;
  }
  return loss;
}

namespace {

std::size_t total_masked(const MaskedBatch& batch) {
  std::size_t n = 0;
  for (const auto& s : batch.sequences) n += s.positions.size();
  return n;
}

double td_scale(const MaskedBatch& batch, TdNormalization norm) {
  const double denom = norm == TdNormalization::per_walk
                           ? static_cast<double>(batch.sequences.size())
                           : static_cast<double>(total_masked(batch));
  return denom > 0 ? 1.0 / denom : 0.0;
}

}  // namespace

double temporal_dynamics_loss(std::span<const Matrix> embeddings, const MaskedBatch& batch,
                              const Matrix& w_td, TdNormalization norm) {
  if (embeddings.size() != batch.sequences.size())
    throw ValidationError("one embedding matrix per sequence required");
  double sum = 0.0;
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    sum += masked_token_cross_entropy(embeddings[i], batch.sequences[i], w_td);
  return sum * td_scale(batch, norm);
}

double graph_level_loss(const Matrix& cls, std::span<const int> targets, const Matrix& w_gs) {
  if (static_cast<std::size_t>(cls.rows()) != targets.size())
    throw ValidationError("one CLS embedding per target required");
  if (targets.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    sum += graph_cross_entropy(cls.row(static_cast<Eigen::Index>(i)), targets[i], w_gs);
  return sum / static_cast<double>(targets.size());
}

LossValues joint_loss(const MaskedBatch& batch, const Model& model, const TrainConfig& cfg,
                      Model* grads, Rng* dropout_rng) {
  LossValues out;
  const std::size_t n = batch.sequences.size();
  if (n == 0) return out;
  const double td_w = td_scale(batch, cfg.td_normalization);
  const double gs_w = 1.0 / static_cast<double>(n);

  ForwardCache cache;
  for (const auto& seq : batch.sequences) {
    // PAD keys are masked out of attention, so encoding the non-PAD prefix
    // yields the same activations for every position the losses read.
    const Matrix& enc = encode_forward(seq.active_tokens(), model.encoder, cache, dropout_rng);
    if (!grads) {
      out.td += masked_token_cross_entropy(enc, seq, model.heads.temporal);
      out.gs += graph_cross_entropy(enc.row(0), seq.graph, model.heads.graph);
      continue;
    }
    Matrix d_enc = Matrix::Zero(enc.rows(), enc.cols());
    out.td += masked_token_cross_entropy(enc, seq, model.heads.temporal, cfg.lambda_td * td_w,
                                         &d_enc, &grads->heads.temporal);
    RowVector d_cls = RowVector::Zero(enc.cols());
    out.gs += graph_cross_entropy(enc.row(0), seq.graph, model.heads.graph, cfg.lambda_gs * gs_w,
                                  &d_cls, &grads->heads.graph);
    d_enc.row(0) += d_cls;
    encode_backward(cache, model.encoder, std::move(d_enc), grads->encoder);
  }
  out.td *= td_w;
  out.gs *= gs_w;
  out.total = cfg.lambda_td * out.td + cfg.lambda_gs * out.gs;
  return out;
}

Adam::Adam(const Model& shape, const TrainConfig& cfg)
    : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_epsilon) {
  shape.for_each_tensor([&](std::string_view, const Matrix& m) {
    m_.push_back(Matrix::Zero(m.rows(), m.cols()));
    v_.push_back(Matrix::Zero(m.rows(), m.cols()));
  });
}

void Adam::step(Model& params, const Model& grads) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  std::vector<const Matrix*> g;
  grads.for_each_tensor([&](std::string_view, const Matrix& m) { g.push_back(&m); });
  std::size_t i = 0;
  params.for_each_tensor([&](std::string_view, Matrix& p) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * *g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i]->cwiseProduct(*g[i]);
    p.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    ++i;
  });
}

std::vector<std::string> graph_ids_of(std::span<const TemporalWalk> walks) {
  std::vector<std::string> ids;
  for (const auto& w : walks) ids.push_back(w.graph_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

namespace {

std::string parameter_norms(const Model& model) {
  std::ostringstream out;
  model.for_each_tensor([&](std::string_view name, const Matrix& m) {
    out << "  " << name << " norm=" << m.norm() << '\n';
  });
  return out.str();
}

}  // namespace

TrainResult train(std::span<const TemporalWalk> walks, const Vocabulary& vocab,
                  const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                  const std::function<void(const EpochLoss&)>& on_epoch) {
  cfg.validate();
  enc_cfg.validate();
  if (walks.empty()) throw ValidationError("no walks to train on");

  TrainResult result;
  auto ids = graph_ids_of(walks);
  if (ids.size() == 1)
    result.warnings.push_back("single graph in corpus: graph-level loss is identically 0");

  std::vector<int> targets;
  targets.reserve(walks.size());
  for (const auto& w : walks) {
    if (w.nodes.size() < 2 || static_cast<int>(w.nodes.size()) + 1 > enc_cfg.max_seq)
      throw ValidationError("walk length " + std::to_string(w.nodes.size()) +
                            " incompatible with max_seq " + std::to_string(enc_cfg.max_seq));
    targets.push_back(static_cast<int>(std::lower_bound(ids.begin(), ids.end(), w.graph_id) -
                                       ids.begin()));
  }

  Rng init_rng = make_rng(derive_seed(cfg.seed, 1));
  result.model.encoder = EncoderState::initialize(enc_cfg, vocab, init_rng);
  result.model.heads = Heads::initialize(enc_cfg.dim, vocab.size(), std::move(ids), init_rng);

  const std::size_t n = walks.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  auto make_batch = [&](std::span<const std::size_t> idx, Rng& rng) {
    MaskedBatch b;
    b.max_seq = enc_cfg.max_seq;
    for (std::size_t i : idx)
      b.sequences.push_back(
          make_masked_sequence(walks[i], targets[i], vocab, enc_cfg.max_seq, cfg.mask, rng));
    return b;
  };
  auto record = [&](int epoch, double td_sum, double gs_sum) {
    EpochLoss e;
    e.epoch = epoch;
    e.td = td_sum / static_cast<double>(n);
    e.gs = gs_sum / static_cast<double>(n);
    e.total = cfg.lambda_td * e.td + cfg.lambda_gs * e.gs;
    result.trace.push_back(e);
    if (on_epoch) on_epoch(e);
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  {
    Rng eval_rng = make_rng(derive_seed(cfg.seed, 5));
    double td = 0.0, gs = 0.0;
    for (std::size_t s = 0; s < n; s += bs) {
      const auto idx = std::span<const std::size_t>(order).subspan(s, std::min(bs, n - s));
      const LossValues l = joint_loss(make_batch(idx, eval_rng), result.model, cfg);
      td += l.td * static_cast<double>(idx.size());
      gs += l.gs * static_cast<double>(idx.size());
    }
    record(0, td, gs);
  }

  Adam adam(result.model, cfg);
  Model grads = result.model.zeros_like();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = make_rng(derive_seed(cfg.seed, 2, epoch));
    Rng mask_rng = make_rng(derive_seed(cfg.seed, 3, epoch));
    Rng dropout_rng = make_rng(derive_seed(cfg.seed, 4, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double td = 0.0, gs = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t s = 0; s < n; s += bs, ++batch_no) {
      const auto idx = std::span<const std::size_t>(order).subspan(s, std::min(bs, n - s));
      const MaskedBatch batch = make_batch(idx, mask_rng);
      grads.for_each_tensor([](std::string_view, Matrix& m) { m.setZero(); });
      const LossValues l = joint_loss(batch, result.model, cfg, &grads, &dropout_rng);
      if (!std::isfinite(l.total))
        throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no) + " (L_TD=" + std::to_string(l.td) +
                             ", L_GS=" + std::to_string(l.gs) + ")\nparameter norms:\n" +
                             parameter_norms(result.model));
      adam.step(result.model, grads);
      td += l.td * static_cast<double>(idx.size());
      gs += l.gs * static_cast<double>(idx.size());
    }
    record(epoch, td, gs);
  }
  return result;
}

Matrix extract_embeddings(const Heads& heads, std::span<const std::string> graph_ids) {
  Matrix out(static_cast<Eigen::Index>(graph_ids.size()), heads.graph.rows());
  for (std::size_t i = 0; i < graph_ids.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = heads.graph.col(heads.graph_index(graph_ids[i])).transpose();
  return out;
}

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  return out;
}

}  // namespace

void write_embeddings_csv(const std::filesystem::path& path, const Heads& heads) {
  auto out = open_output(path);
  std::string line = "graph_id";
  for (Eigen::Index j = 0; j < heads.graph.rows(); ++j) line += ",e" + std::to_string(j);
  out << line << '\n';
  for (std::size_t i = 0; i < heads.graph_ids.size(); ++i) {
    line = heads.graph_ids[i];
    for (Eigen::Index j = 0; j < heads.graph.rows(); ++j) {
      line += ',';
      append_double(line, heads.graph(j, static_cast<Eigen::Index>(i)));
    }
    out << line << '\n';
  }
}

std::vector<EmbeddingRow> read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<EmbeddingRow> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line_no == 1 && !fields.empty() && fields[0] == "graph_id") {
      width = fields.size() - 1;
      continue;
    }
    if (fields.size() < 2) throw FormatError(path.string(), line_no, "expected graph_id,e0,...");
    if (width && fields.size() - 1 != width)
      throw FormatError(path.string(), line_no, "expected " + std::to_string(width) + " values");
    EmbeddingRow row;
    row.graph_id = fields[0];
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), v);
      if (ec != std::errc() || ptr != fields[i].data() + fields[i].size() || !std::isfinite(v))
        throw FormatError(path.string(), line_no, "bad value '" + fields[i] + "'");
      row.values.push_back(v);
    }
    width = row.values.size();
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_loss_trace_csv(const std::filesystem::path& path, std::span<const EpochLoss> trace) {
  auto out = open_output(path);
  out << "epoch,L_TD,L_GS,L_total\n";
  for (const auto& e : trace) {
    std::string line = std::to_string(e.epoch);
    for (double v : {e.td, e.gs, e.total}) {
      line += ',';
      append_double(line, v);
    }
    out << line << '\n';
  }
}

std::vector<EpochLoss> read_loss_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<EpochLoss> trace;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("epoch", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string f;
    std::vector<double> v;
    while (std::getline(ss, f, ',')) {
      double x = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw FormatError(path.string(), line_no, "bad value '" + f + "'");
      v.push_back(x);
    }
    if (v.size() != 4) throw FormatError(path.string(), line_no, "expected 4 columns");
    trace.push_back({static_cast<int>(v[0]), v[1], v[2], v[3]});
  }
  return trace;
}

}  // namespace dynembed
