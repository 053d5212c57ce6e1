#include "dynembed/pipeline.hpp"

#include "dynembed/checkpoint.hpp"
#include "dynembed/report.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <set>

namespace dynembed {

using nlohmann::json;

// ---- config ---------------------------------------------------------------

namespace {

const char* regime_kind_name(RegimeKind k) {
  return k == RegimeKind::static_blocks ? "static" : "rotating";
}

RegimeKind parse_regime_kind(const std::string& s) {
  if (s == "static") return RegimeKind::static_blocks;
  if (s == "rotating") return RegimeKind::rotating_blocks;
  throw ValidationError("unknown regime kind '" + s + "'");
}

json regime_json(const ClassRegime& r) {
  return {{"kind", regime_kind_name(r.kind)},
          {"blocks", r.blocks},
          {"rotation_period", r.rotation_period},
          {"rotation_step", r.rotation_step}};
}

ClassRegime regime_from(const json& j, ClassRegime r) {
  if (j.contains("kind")) r.kind = parse_regime_kind(j["kind"].get<std::string>());
  r.blocks = j.value("blocks", r.blocks);
  r.rotation_period = j.value("rotation_period", r.rotation_period);
  r.rotation_step = j.value("rotation_step", r.rotation_step);
  return r;
}

std::string start_policy_name(StartTimePolicy p) {
  return p == StartTimePolicy::earliest ? "earliest" : "uniform-incident";
}

StartTimePolicy parse_start_policy(const std::string& s) {
  if (s == "earliest") return StartTimePolicy::earliest;
  if (s == "uniform-incident") return StartTimePolicy::uniform_incident;
  throw ValidationError("unknown start-time policy '" + s + "'");
}

std::string protocol_label(const EvalConfig& e) {
  return e.protocol == Protocol::stratified_k ? "stratified" + std::to_string(e.folds)
                                              : "leave-one-site-out";
}

json window_json(const WindowSpec& w) {
  return {{"length", w.window_length}, {"stride", w.stride}, {"percentile", w.threshold_percentile}};
}

json walk_json(const WalkConfig& w) {
  return {{"max_length", w.max_length},
          {"walks_per_node", w.walks_per_node},
          {"min_length", w.min_length},
          {"start_time", start_policy_name(w.start_time)},
          {"seed", w.seed}};
}

json encoder_json(const EncoderConfig& e) {
  return {{"dim", e.dim},         {"heads", e.heads},         {"layers", e.layers},
          {"ff_dim", e.ff_dim},   {"max_seq", e.max_seq},     {"dropout", e.dropout},
          {"norm_eps", e.norm_eps}};
}

json train_json(const TrainConfig& t) {
  return {{"lambda1", t.lambda_td},
          {"lambda2", t.lambda_gs},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.adam_epsilon},
          {"seed", t.seed},
          {"mask_rate", t.mask.rate},
          {"mask_replace", t.mask.replace_with_mask},
          {"mask_random", t.mask.random_node},
          {"mask_keep", t.mask.keep},
          {"td_normalization",
           t.td_normalization == TdNormalization::per_walk ? "per_walk" : "per_position"}};
}

json eval_json(const EvalConfig& e) {
  return {{"protocol", protocol_label(e)},
          {"seed", e.seed},
          {"reg", e.logistic.reg},
          {"tolerance", e.logistic.tolerance},
          {"max_iterations", e.logistic.max_iterations},
          {"threshold", e.threshold},
          {"standardize", e.standardize}};
}

}  // namespace

PipelineConfig PipelineConfig::resolved() const {
  PipelineConfig c = *this;
  c.walk.seed = seed;
  c.train.seed = seed;
  c.eval.seed = seed;
  c.encoder.max_seq = c.walk.max_length + 1;
  if (c.synthetic.enabled) {
    c.input_dir = c.out_dir / "data";
    c.phenotype = c.input_dir / "phenotype.csv";
    if (c.regions == 0) c.regions = c.synthetic.regions;
  } else if (c.phenotype.empty()) {
    c.phenotype = c.input_dir / "phenotype.csv";
  }
  return c;
}

void PipelineConfig::validate() const {
  window.validate();
  walk.validate();
  encoder.validate();
  train.validate();
  if (encoder.max_seq != walk.max_length + 1)
    throw ValidationError("encoder max_seq (" + std::to_string(encoder.max_seq) +
                          ") must equal walk length + 1 (" + std::to_string(walk.max_length + 1) + ")");
  if (synthetic.enabled) {
    if (regions != 0 && regions != synthetic.regions)
      throw ValidationError("regions does not match the synthetic corpus R");
    if (synthetic.time_points < window.window_length)
      throw ValidationError("synthetic series shorter than the window length");
  } else if (input_dir.empty()) {
    throw ValidationError("input_dir is required unless synthetic.enabled is set");
  }
  if (eval.protocol == Protocol::stratified_k && eval.folds < 2)
    throw ValidationError("stratified protocol needs k >= 2");
}

json PipelineConfig::to_json() const {
  const auto& r = synthetic.regimes;
  return {{"input_dir", input_dir.string()},
          {"phenotype", phenotype.string()},
          {"out_dir", out_dir.string()},
          {"seed", seed},
          {"regions", regions},
          {"site_report", site_report},
          {"synthetic",
           {{"enabled", synthetic.enabled},
            {"subjects", synthetic.subjects},
            {"regions", synthetic.regions},
            {"time_points", synthetic.time_points},
            {"signal", r.signal},
            {"noise", r.noise},
            {"noise_jitter", r.noise_jitter},
            {"autocorrelation", r.autocorrelation},
            {"sites", r.sites},
            {"control", regime_json(r.control)},
            {"patient", regime_json(r.patient)}}},
          {"window", window_json(window)},
          {"walk", walk_json(walk)},
          {"encoder", encoder_json(encoder)},
          {"train", train_json(train)},
          {"eval", eval_json(eval)}};
}

PipelineConfig PipelineConfig::from_json(const json& j, PipelineConfig c) {
  try {
    if (j.contains("input_dir")) c.input_dir = j["input_dir"].get<std::string>();
    if (j.contains("phenotype")) c.phenotype = j["phenotype"].get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.regions = j.value("regions", c.regions);
    c.site_report = j.value("site_report", c.site_report);
    if (j.contains("synthetic")) {
      const auto& s = j["synthetic"];
      auto& r = c.synthetic.regimes;
      c.synthetic.enabled = s.value("enabled", true);
      c.synthetic.subjects = s.value("subjects", c.synthetic.subjects);
      c.synthetic.regions = s.value("regions", c.synthetic.regions);
      c.synthetic.time_points = s.value("time_points", c.synthetic.time_points);
      r.signal = s.value("signal", r.signal);
      r.noise = s.value("noise", r.noise);
      r.noise_jitter = s.value("noise_jitter", r.noise_jitter);
      r.autocorrelation = s.value("autocorrelation", r.autocorrelation);
      r.sites = s.value("sites", r.sites);
      if (s.contains("control")) r.control = regime_from(s["control"], r.control);
      if (s.contains("patient")) r.patient = regime_from(s["patient"], r.patient);
    }
    if (j.contains("window")) {
      const auto& w = j["window"];
      c.window.window_length = w.value("length", c.window.window_length);
      c.window.stride = w.value("stride", c.window.stride);
      c.window.threshold_percentile = w.value("percentile", c.window.threshold_percentile);
    }
    if (j.contains("walk")) {
      const auto& w = j["walk"];
      c.walk.max_length = w.value("max_length", c.walk.max_length);
      c.walk.walks_per_node = w.value("walks_per_node", c.walk.walks_per_node);
      c.walk.min_length = w.value("min_length", c.walk.min_length);
      if (w.contains("start_time"))
        c.walk.start_time = parse_start_policy(w["start_time"].get<std::string>());
    }
    if (j.contains("encoder")) {
      const auto& e = j["encoder"];
      c.encoder.dim = e.value("dim", c.encoder.dim);
      c.encoder.heads = e.value("heads", c.encoder.heads);
      c.encoder.layers = e.value("layers", c.encoder.layers);
      c.encoder.ff_dim = e.value("ff_dim", c.encoder.ff_dim);
      c.encoder.max_seq = e.value("max_seq", c.encoder.max_seq);
      c.encoder.dropout = e.value("dropout", c.encoder.dropout);
      c.encoder.norm_eps = e.value("norm_eps", c.encoder.norm_eps);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      auto& tc = c.train;
      tc.lambda_td = t.value("lambda1", tc.lambda_td);
      tc.lambda_gs = t.value("lambda2", tc.lambda_gs);
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.epochs = t.value("epochs", tc.epochs);
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.beta1 = t.value("beta1", tc.beta1);
      tc.beta2 = t.value("beta2", tc.beta2);
      tc.adam_epsilon = t.value("epsilon", tc.adam_epsilon);
      tc.mask.rate = t.value("mask_rate", tc.mask.rate);
      tc.mask.replace_with_mask = t.value("mask_replace", tc.mask.replace_with_mask);
      tc.mask.random_node = t.value("mask_random", tc.mask.random_node);
      tc.mask.keep = t.value("mask_keep", tc.mask.keep);
      if (t.contains("td_normalization")) {
        const auto n = t["td_normalization"].get<std::string>();
        if (n == "per_walk")
          tc.td_normalization = TdNormalization::per_walk;
        else if (n == "per_position")
          tc.td_normalization = TdNormalization::per_position;
        else
          throw ValidationError("unknown td_normalization '" + n + "'");
      }
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      if (e.contains("protocol"))
        c.eval.protocol = parse_protocol(e["protocol"].get<std::string>(), &c.eval.folds);
      c.eval.folds = e.value("folds", c.eval.folds);
      c.eval.logistic.reg = e.value("reg", c.eval.logistic.reg);
      c.eval.logistic.tolerance = e.value("tolerance", c.eval.logistic.tolerance);
      c.eval.logistic.max_iterations = e.value("max_iterations", c.eval.logistic.max_iterations);
      c.eval.threshold = e.value("threshold", c.eval.threshold);
      c.eval.standardize = e.value("standardize", c.eval.standardize);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::from_json(const json& j) { return from_json(j, PipelineConfig{}); }

PipelineConfig PipelineConfig::load(const fs::path& path) { return load(path, PipelineConfig{}); }

PipelineConfig PipelineConfig::load(const fs::path& path, PipelineConfig base) {
  return from_json(read_json_file(path), std::move(base));
}

json StageError::to_json() const {
  return {{"stage", stage_}, {"code", exit_code()}, {"error", what()}};
}

// ---- hashing and json files -------------------------------------------------

namespace {

std::string hex_digest(EVP_MD_CTX* ctx) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

using DigestCtx = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>;

DigestCtx new_sha256() {
  DigestCtx ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw RuntimeFailure("sha256 initialisation failed");
  return ctx;
}

}  // namespace

std::string sha256_text(std::string_view text) {
  auto ctx = new_sha256();
  EVP_DigestUpdate(ctx.get(), text.data(), text.size());
  return hex_digest(ctx.get());
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read " + path.string());
  auto ctx = new_sha256();
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  return hex_digest(ctx.get());
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---- stages -----------------------------------------------------------------

std::vector<fs::path> list_subject_files(const fs::path& input_dir) {
  if (!fs::is_directory(input_dir)) throw ValidationError("not a directory: " + input_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
        entry.path().filename() != "phenotype.csv")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no subject CSV files in " + input_dir.string());
  return files;
}

std::vector<fs::path> build_connectome_stage(const fs::path& input_dir, const WindowSpec& spec,
                                             const fs::path& out_dir, int expected_regions,
                                             std::ostream* log) {
  spec.validate();
  const auto files = list_subject_files(input_dir);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  int regions = expected_regions;
  for (const auto& f : files) {
    const TimeSeriesMatrix ts = read_time_series_csv(f, f.stem().string());
    if (regions == 0) regions = ts.regions();
    if (ts.regions() != regions)
      throw ValidationError(f.string() + ": " + std::to_string(ts.regions()) +
                            " regions, expected " + std::to_string(regions));
    const DynamicGraph g = build_dynamic_graph(ts, spec);
    if (log)
      for (const auto& w : g.warnings) *log << "warning: " << g.graph_id << ": " << w << '\n';
    written.push_back(out_dir / (g.graph_id + ".tsv"));
    write_graph_file(written.back(), g);
  }
  return written;
}

WalkCorpus sample_walks_stage(const fs::path& graphs_dir, const WalkConfig& cfg,
                              const fs::path& walks_file) {
  const auto graphs = read_graph_dir(graphs_dir);
  if (graphs.empty()) throw ValidationError("no graphs in " + graphs_dir.string());
  WalkCorpus corpus = sample_corpus(graphs, cfg);
  write_walks_file(walks_file, corpus.walks);

  json stats;
  stats["config"] = walk_json(cfg);
  for (const auto& [id, s] : corpus.stats.per_graph)
    stats["graphs"][id] = {{"attempted", s.attempted},
                           {"emitted", s.emitted},
                           {"rejected_isolated", s.rejected_isolated},
                           {"rejected_short", s.rejected_short}};
  stats["warnings"] = corpus.stats.warnings;
  fs::path stats_path = walks_file;
  stats_path.replace_extension(".stats.json");
  write_json_file(stats_path, stats);
  return corpus;
}

TrainResult train_stage(const fs::path& walks_file, const EncoderConfig& enc_cfg,
                        const TrainConfig& train_cfg, const fs::path& ckpt_dir, int nodes,
                        std::ostream* log) {
  const auto walks = read_walks_file(walks_file);
  if (walks.empty()) throw ValidationError(walks_file.string() + ": no walks");
  int max_node = 0;
  for (const auto& w : walks)
    for (int v : w.nodes) max_node = std::max(max_node, v);
  if (nodes == 0) nodes = max_node + 1;
  if (max_node >= nodes)
    throw ValidationError("walks reference node " + std::to_string(max_node) +
                          " but the vocabulary has " + std::to_string(nodes) + " nodes");

  auto progress = [&](const EpochLoss& e) {
    if (log)
      *log << "epoch " << e.epoch << " L_TD=" << e.td << " L_GS=" << e.gs
           << " L_total=" << e.total << '\n';
  };
  TrainResult result = train(walks, Vocabulary{nodes}, enc_cfg, train_cfg, progress);
  if (log)
    for (const auto& w : result.warnings) *log << "warning: " << w << '\n';
  fs::create_directories(ckpt_dir);
  save_checkpoint(ckpt_dir / "model.bin", result.model);
  write_loss_trace_csv(ckpt_dir / "loss_trace.csv", result.trace);
  write_json_file(ckpt_dir / "config.json",
                  {{"encoder", encoder_json(enc_cfg)}, {"train", train_json(train_cfg)},
                   {"nodes", nodes}});
  return result;
}

void embed_stage(const fs::path& checkpoint, const fs::path& embeddings_csv) {
  const Model model = load_checkpoint(checkpoint);
  write_embeddings_csv(embeddings_csv, model.heads);
}

std::vector<LabeledEmbedding> join_embeddings(const fs::path& embeddings_csv,
                                              const fs::path& phenotype_csv) {
  const auto rows = read_embeddings_csv(embeddings_csv);
  const auto pheno = read_phenotype_csv(phenotype_csv);
  std::vector<LabeledEmbedding> items;
  for (const auto& r : rows) {
    auto it = pheno.find(r.graph_id);
    if (it == pheno.end())
      throw ValidationError("graph '" + r.graph_id + "' missing from " + phenotype_csv.string());
    LabeledEmbedding e;
    e.graph_id = r.graph_id;
    e.vector = Eigen::Map<const Eigen::VectorXd>(r.values.data(),
                                                 static_cast<Eigen::Index>(r.values.size()));
    e.label = it->second.label;
    e.site = it->second.site;
    items.push_back(std::move(e));
  }
  return items;
}

EvalReport evaluate_stage(const fs::path& embeddings_csv, const fs::path& phenotype_csv,
                          const EvalConfig& cfg, const fs::path& report_json,
                          const json& config_echo) {
  const auto items = join_embeddings(embeddings_csv, phenotype_csv);
  EvalReport report = run_cv(items, cfg);
  report.config_echo = config_echo;
  write_json_file(report_json, report.to_json());
  return report;
}

// ---- orchestration -----------------------------------------------------------

namespace {

class Manifest {
 public:
  explicit Manifest(fs::path out_dir) : out_dir_(std::move(out_dir)) {
    const auto path = out_dir_ / "manifest.json";
    if (fs::exists(path)) {
      try {
        data_ = read_json_file(path);
      } catch (const ValidationError&) {
        data_ = json::object();
      }
    }
    if (!data_.is_object()) data_ = json::object();
    data_["format"] = "dynembed-manifest/1";
  }

  bool up_to_date(const std::string& stage, const std::string& key) const {
    if (!data_.contains("stages") || !data_["stages"].contains(stage)) return false;
    const auto& s = data_["stages"][stage];
    if (s.value("key", "") != key || !s.contains("outputs")) return false;
    for (const auto& [rel, hash] : s["outputs"].items()) {
      const fs::path p = out_dir_ / rel;
      if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) return false;
    }
    return true;
  }

  json outputs(const std::string& stage) const { return data_["stages"][stage]["outputs"]; }

  void record(const std::string& stage, const std::string& key, const std::vector<fs::path>& files) {
    json outs = json::object();
    for (const auto& f : files) outs[fs::relative(f, out_dir_).generic_string()] = sha256_file(f);
    data_["stages"][stage] = {{"key", key}, {"outputs", outs}};
    save();
  }

  void set_config(const json& cfg) { data_["config"] = cfg; }
  void save() const { write_json_file(out_dir_ / "manifest.json", data_); }

 private:
  fs::path out_dir_;
  json data_;
};

std::vector<fs::path> files_in(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

json hashes_of(const std::vector<fs::path>& files, const fs::path& base) {
  json j = json::object();
  for (const auto& f : files) j[fs::relative(f, base).generic_string()] = sha256_file(f);
  return j;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& raw, std::ostream* log) {
  const PipelineConfig cfg = raw.resolved();
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw StageError("config", e.kind(), e.what());
  }
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  Manifest manifest(out);
  manifest.set_config(cfg.to_json());

  PipelineResult result;
  result.out_dir = out;

  json previous = json::object();  // hashes feeding the next stage
  auto run_stage = [&](const std::string& name, const json& stage_cfg,
                       const std::function<std::vector<fs::path>()>& body) {
    const std::string key =
        sha256_text(json{{"stage", name}, {"config", stage_cfg}, {"inputs", previous}}.dump());
    StageStatus status{name, false};
    if (manifest.up_to_date(name, key)) {
      status.skipped = true;
      if (log) *log << "[" << name << "] up to date, skipped\n";
    } else {
      if (log) *log << "[" << name << "] running\n";
      try {
        auto files = body();
        manifest.record(name, key, files);
      } catch (const StageError&) {
        throw;
      } catch (const Error& e) {
        throw StageError(name, e.kind(), e.what());
      } catch (const std::exception& e) {
        throw StageError(name, ErrorKind::runtime, e.what());
      }
    }
    previous = manifest.outputs(name);
    result.stages.push_back(status);
  };

  const fs::path graphs_dir = out / "graphs";
  const fs::path walks_file = out / "walks" / "walks.txt";
  const fs::path ckpt_dir = out / "ckpt";
  const fs::path emb_file = out / "embeddings" / "embeddings.csv";
  const fs::path reports_dir = out / "reports";
  const json full_cfg = cfg.to_json();

  if (cfg.synthetic.enabled) {
    run_stage("synth", full_cfg["synthetic"], [&] {
      const auto& s = cfg.synthetic;
      const auto corpus =
          generate_synthetic_corpus(s.subjects, s.regions, s.time_points, s.regimes, cfg.seed);
      if (log)
        for (const auto& w : corpus.warnings) *log << "warning: " << w << '\n';
      fs::remove_all(cfg.input_dir);
      write_synthetic_corpus(cfg.input_dir, corpus);
      write_json_file(cfg.input_dir / "config.json",
                      {{"synthetic", full_cfg["synthetic"]},
                       {"seed", cfg.seed},
                       {"degenerate_regime", corpus.degenerate_regime}});
      return files_in(cfg.input_dir);
    });
  } else {
    try {
      auto inputs = list_subject_files(cfg.input_dir);
      inputs.push_back(cfg.phenotype);
      previous = json{{"inputs", hashes_of(inputs, cfg.input_dir)}};
    } catch (const Error& e) {
      throw StageError("build-connectome", e.kind(), e.what());
    }
  }

  run_stage("build-connectome", full_cfg["window"], [&] {
    fs::remove_all(graphs_dir);
    auto files = build_connectome_stage(cfg.input_dir, cfg.window, graphs_dir, cfg.regions, log);
    write_json_file(graphs_dir / "config.json", {{"window", full_cfg["window"]}});
    files.push_back(graphs_dir / "config.json");
    return files;
  });

  run_stage("sample-walks", full_cfg["walk"], [&] {
    const auto corpus = sample_walks_stage(graphs_dir, cfg.walk, walks_file);
    if (log)
      for (const auto& w : corpus.stats.warnings) *log << "warning: " << w << '\n';
    return files_in(walks_file.parent_path());
  });

  const int regions = read_graph_dir(graphs_dir).front().node_count;
  run_stage("train", json{{"encoder", full_cfg["encoder"]}, {"train", full_cfg["train"]}}, [&] {
    train_stage(walks_file, cfg.encoder, cfg.train, ckpt_dir, regions, log);
    return files_in(ckpt_dir);
  });

  run_stage("embed", json::object(), [&] {
    embed_stage(ckpt_dir / "model.bin", emb_file);
    return std::vector<fs::path>{emb_file};
  });

  previous["phenotype"] = sha256_file(cfg.phenotype);
  run_stage("evaluate", json{{"eval", full_cfg["eval"]}, {"site_report", cfg.site_report}}, [&] {
    std::vector<fs::path> files;
    fs::create_directories(reports_dir);
    auto report = evaluate_stage(emb_file, cfg.phenotype, cfg.eval, reports_dir / "report.json",
                                 full_cfg);
    files.push_back(reports_dir / "report.json");
    const auto trace = read_loss_trace_csv(ckpt_dir / "loss_trace.csv");
    files.push_back(reports_dir / "summary.txt");
    write_report_artifacts(report.to_json(), &trace, reports_dir / "summary.txt");
    if (cfg.site_report) {
      EvalConfig site = cfg.eval;
      site.protocol = Protocol::leave_one_site_out;
      auto site_report = evaluate_stage(emb_file, cfg.phenotype, site,
                                        reports_dir / "report_sites.json", full_cfg);
      files.push_back(reports_dir / "report_sites.json");
      files.push_back(reports_dir / "summary_sites.txt");
      write_report_artifacts(site_report.to_json(), nullptr, reports_dir / "summary_sites.txt");
    }
    return files;
  });

  result.report = EvalReport::from_json(read_json_file(reports_dir / "report.json"));
  return result;
}

}  // namespace dynembed
