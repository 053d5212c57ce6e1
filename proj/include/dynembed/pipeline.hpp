#pragma once

// End-to-end orchestration: synth -> build-connectome -> sample-walks -> train
// -> embed -> evaluate, with a content-hash manifest for resumable stages.

#include "dynembed/connectome.hpp"
#include "dynembed/error.hpp"
#include "dynembed/evalkit.hpp"
#include "dynembed/synthetic.hpp"
#include "dynembed/tempwalk.hpp"
#include "dynembed/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dynembed {

namespace fs = std::filesystem;

struct SyntheticSpec {
  bool enabled = false;
  int subjects = 40;
  int regions = 20;
  int time_points = 200;
  RegimeDescriptor regimes;
};

struct PipelineConfig {
  fs::path input_dir;   ///< per-subject CSVs; ignored when synthetic.enabled
  fs::path phenotype;   ///< defaults to <input_dir>/phenotype.csv
  fs::path out_dir = "out";
  std::uint64_t seed = 0;
  int regions = 0;  ///< expected R; 0 accepts whatever the data holds
  bool site_report = false;  ///< additionally run leave-one-site-out

  SyntheticSpec synthetic;
  WindowSpec window;
  WalkConfig walk;
  EncoderConfig encoder;
  TrainConfig train;
  EvalConfig eval;

  /// Copies the global seed into every stage and derives max_seq from the walk length.
  PipelineConfig resolved() const;
  /// Cross-module consistency; throws ValidationError.
  void validate() const;

  nlohmann::json to_json() const;
  /// Fields absent from `j` keep the values already in `base`.
  static PipelineConfig from_json(const nlohmann::json& j, PipelineConfig base);
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const fs::path& path, PipelineConfig base);
  static PipelineConfig load(const fs::path& path);
};

/// Failure inside a named stage; exit code follows the wrapped error kind.
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorKind kind, const std::string& what)
      : Error(kind, "stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }
  nlohmann::json to_json() const;

 private:
  std::string stage_;
};

struct StageStatus {
  std::string name;
  bool skipped = false;
};

struct PipelineResult {
  fs::path out_dir;
  std::vector<StageStatus> stages;
  EvalReport report;
};

PipelineResult run_pipeline(const PipelineConfig& cfg, std::ostream* log = nullptr);

// ---- individual stages (shared with the CLI subcommands) -----------------

std::string sha256_file(const fs::path& path);
std::string sha256_text(std::string_view text);

/// Subject CSVs in `input_dir`, sorted, excluding phenotype.csv.
std::vector<fs::path> list_subject_files(const fs::path& input_dir);

/// Writes `<out_dir>/<subject>.tsv` per subject; returns the written paths.
std::vector<fs::path> build_connectome_stage(const fs::path& input_dir, const WindowSpec& spec,
                                             const fs::path& out_dir, int expected_regions = 0,
                                             std::ostream* log = nullptr);

/// Writes the walks file and a sampler statistics JSON next to it.
WalkCorpus sample_walks_stage(const fs::path& graphs_dir, const WalkConfig& cfg,
                              const fs::path& walks_file);

/// `nodes` = 0 infers R from the largest node id in the walks.
TrainResult train_stage(const fs::path& walks_file, const EncoderConfig& enc_cfg,
                        const TrainConfig& train_cfg, const fs::path& ckpt_dir, int nodes = 0,
                        std::ostream* log = nullptr);

void embed_stage(const fs::path& checkpoint, const fs::path& embeddings_csv);

std::vector<LabeledEmbedding> join_embeddings(const fs::path& embeddings_csv,
                                              const fs::path& phenotype_csv);

EvalReport evaluate_stage(const fs::path& embeddings_csv, const fs::path& phenotype_csv,
                          const EvalConfig& cfg, const fs::path& report_json,
                          const nlohmann::json& config_echo = nullptr);

void write_json_file(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const fs::path& path);

}  // namespace dynembed
