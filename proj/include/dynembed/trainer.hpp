#pragma once

// Masked-node + graph-identity joint training and graph embedding readout.

#include "dynembed/encoder.hpp"
#include "dynembed/tempwalk.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dynembed {

/// Linear heads without bias. Column i of `graph` is the embedding of graph_ids[i].
struct Heads {
  Matrix temporal;  // d x |V|
  Matrix graph;     // d x |G|
  std::vector<std::string> graph_ids;

  static Heads initialize(int dim, int vocab_size, std::vector<std::string> graph_ids, Rng& rng);
  /// Throws ValidationError for an unknown id.
  int graph_index(std::string_view graph_id) const;
};

struct Model {
  EncoderState encoder;
  Heads heads;

  Model zeros_like() const;

  template <typename F>
  void for_each_tensor(F&& f) {
    encoder.for_each_tensor(f);
    f(std::string_view("head.temporal"), heads.temporal);
    f(std::string_view("head.graph"), heads.graph);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    encoder.for_each_tensor(f);
    f(std::string_view("head.temporal"), heads.temporal);
    f(std::string_view("head.graph"), heads.graph);
  }
};

struct MaskPolicy {
  double rate = 0.15;
  double replace_with_mask = 0.8;
  double random_node = 0.1;
  double keep = 0.1;

  void validate() const;
};

enum class TdNormalization {
  per_walk,      ///< sum over masked positions, mean over walks
  per_position,  ///< mean over all masked positions in the batch
};

struct TrainConfig {
  double lambda_td = 1.0;
  double lambda_gs = 5.0;
  int batch_size = 32;
  int epochs = 50;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  MaskPolicy mask;
  TdNormalization td_normalization = TdNormalization::per_walk;

  void validate() const;
};

/// One walk as a token sequence: CLS, walk nodes (some masked), PAD up to max_seq.
struct MaskedSequence {
  std::vector<int> tokens;
  std::vector<int> positions;  ///< masked token positions (1-based within the walk)
  std::vector<int> targets;    ///< original node ids at those positions
  int graph = 0;
  int length = 0;  ///< CLS + walk nodes, i.e. the non-PAD prefix

  std::span<const int> active_tokens() const { return {tokens.data(), std::size_t(length)}; }
};

struct MaskedBatch {
  std::vector<MaskedSequence> sequences;
  int max_seq = 0;

  std::vector<int> graph_targets() const;
};

/// Number of masked positions for a walk of `walk_length` nodes (at least one).
int masked_count(int walk_length, double rate);

MaskedSequence make_masked_sequence(const TemporalWalk& walk, int graph, const Vocabulary& vocab,
                                    int max_seq, const MaskPolicy& policy, Rng& rng);

MaskedBatch make_masked_batch(std::span<const TemporalWalk> walks, std::span<const int> graphs,
                              const Vocabulary& vocab, int max_seq, const MaskPolicy& policy,
                              Rng& rng);

/// Cross-entropy of the masked positions of one sequence, summed; gradients
/// (scaled by `scale`) are accumulated when the output pointers are non-null.
double masked_token_cross_entropy(const Matrix& positions, const MaskedSequence& seq,
                                  const Matrix& w_td, double scale = 1.0,
                                  Matrix* d_positions = nullptr, Matrix* d_w_td = nullptr);

/// -log softmax(cls . W_GS)[target]; same gradient convention.
double graph_cross_entropy(const RowVector& cls, int target, const Matrix& w_gs,
                           double scale = 1.0, RowVector* d_cls = nullptr,
                           Matrix* d_w_gs = nullptr);

/// `embeddings[i]` holds the encoder output for sequence i (at least its active rows).
double temporal_dynamics_loss(std::span<const Matrix> embeddings, const MaskedBatch& batch,
                              const Matrix& w_td,
                              TdNormalization norm = TdNormalization::per_walk);

/// `cls` is n x d, one row per sequence.
double graph_level_loss(const Matrix& cls, std::span<const int> targets, const Matrix& w_gs);

struct LossValues {
  double td = 0.0;
  double gs = 0.0;
  double total = 0.0;
};

/// Joint objective lambda_td * L_TD + lambda_gs * L_GS over one batch. When
/// `grads` is given, gradients are accumulated into it.
LossValues joint_loss(const MaskedBatch& batch, const Model& model, const TrainConfig& cfg,
                      Model* grads = nullptr, Rng* dropout_rng = nullptr);

class Adam {
 public:
  Adam(const Model& shape, const TrainConfig& cfg);
  void step(Model& params, const Model& grads);
  long steps() const { return step_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::vector<Matrix> m_, v_;
};

struct EpochLoss {
  int epoch = 0;  ///< 0 is the evaluation at initialisation
  double td = 0.0;
  double gs = 0.0;
  double total = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLoss> trace;
  std::vector<std::string> warnings;
};

/// Graph ids in head column order: sorted unique ids of the walks.
std::vector<std::string> graph_ids_of(std::span<const TemporalWalk> walks);

TrainResult train(std::span<const TemporalWalk> walks, const Vocabulary& vocab,
                  const EncoderConfig& enc_cfg, const TrainConfig& train_cfg,
                  const std::function<void(const EpochLoss&)>& on_epoch = {});

/// Row i is column graph_index(graph_ids[i]) of the graph head.
Matrix extract_embeddings(const Heads& heads, std::span<const std::string> graph_ids);

void write_embeddings_csv(const std::filesystem::path& path, const Heads& heads);

struct EmbeddingRow {
  std::string graph_id;
  std::vector<double> values;
};
std::vector<EmbeddingRow> read_embeddings_csv(const std::filesystem::path& path);

void write_loss_trace_csv(const std::filesystem::path& path, std::span<const EpochLoss> trace);
std::vector<EpochLoss> read_loss_trace_csv(const std::filesystem::path& path);

}  // namespace dynembed
