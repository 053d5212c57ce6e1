#include "dynembed/checkpoint.hpp"
#include "dynembed/pipeline.hpp"
#include "dynembed/report.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

using namespace dynembed;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> epochs, dim, heads, layers, walks_per_node, walk_length;
  std::optional<double> lambda1, lambda2, lr;
  std::optional<std::string> protocol;
  bool site_report = false;

  void apply(PipelineConfig& c) const {
    if (seed) c.seed = *seed;
    if (out) c.out_dir = *out;
    if (epochs) c.train.epochs = *epochs;
    if (dim) c.encoder.dim = *dim;
    if (heads) c.encoder.heads = *heads;
    if (layers) c.encoder.layers = *layers;
    if (walks_per_node) c.walk.walks_per_node = *walks_per_node;
    if (walk_length) c.walk.max_length = *walk_length;
    if (lambda1) c.train.lambda_td = *lambda1;
    if (lambda2) c.train.lambda_gs = *lambda2;
    if (lr) c.train.learning_rate = *lr;
    if (protocol) c.eval.protocol = parse_protocol(*protocol, &c.eval.folds);
    if (site_report) c.site_report = true;
  }
};

int report_failure(const Error& e) {
  if (const auto* stage = dynamic_cast<const StageError*>(&e))
    std::cerr << stage->to_json().dump() << '\n';
  std::cerr << "error: " << e.what() << '\n';
  return e.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic functional-connectivity graph embedding toolkit"};
  app.require_subcommand(1);

  // build-connectome
  std::string bc_input, bc_out;
  WindowSpec window;
  int bc_regions = 0;
  auto* bc = app.add_subcommand("build-connectome", "Sliding-window correlation graphs per subject");
  bc->add_option("--input", bc_input, "Directory of per-subject T x R CSV files")->required();
  bc->add_option("--out", bc_out, "Output directory for graph TSV files")->required();
  bc->add_option("--window", window.window_length, "Window length in time points");
  bc->add_option("--stride", window.stride, "Window stride");
  bc->add_option("--percentile", window.threshold_percentile, "Per-window threshold percentile");
  bc->add_option("--regions", bc_regions, "Expected region count (0 accepts any)");

  // sample-walks
  std::string sw_graphs, sw_out, sw_start = "earliest";
  WalkConfig walk;
  auto* sw = app.add_subcommand("sample-walks", "Temporal random walks over dynamic graphs");
  sw->add_option("--graphs", sw_graphs, "Directory of graph TSV files")->required();
  sw->add_option("--out", sw_out, "Walks file to write")->required();
  sw->add_option("--length", walk.max_length, "Maximum walk length in nodes");
  sw->add_option("--walks-per-node", walk.walks_per_node, "Walk attempts per start node");
  sw->add_option("--min-length", walk.min_length, "Shorter walks are rejected");
  sw->add_option("--start-time", sw_start, "earliest | uniform-incident")
      ->check(CLI::IsMember({"earliest", "uniform-incident"}));
  sw->add_option("--seed", walk.seed, "Random seed");

  // train
  std::string tr_walks, tr_out;
  EncoderConfig enc;
  TrainConfig tc;
  int tr_nodes = 0;
  auto* tr = app.add_subcommand("train", "Train the walk encoder with the joint objective");
  tr->add_option("--walks", tr_walks, "Walks file")->required();
  tr->add_option("--out", tr_out, "Checkpoint directory")->required();
  tr->add_option("--dim", enc.dim, "Model width d");
  tr->add_option("--heads", enc.heads, "Attention heads");
  tr->add_option("--layers", enc.layers, "Encoder layers");
  tr->add_option("--ff-dim", enc.ff_dim, "Feed-forward width (0 means 4d)");
  tr->add_option("--max-seq", enc.max_seq, "Maximum sequence length including CLS");
  tr->add_option("--dropout", enc.dropout, "Dropout rate");
  tr->add_option("--nodes", tr_nodes, "Node count R (0 infers from walks)");
  tr->add_option("--lambda1", tc.lambda_td, "Weight of the masked-node loss");
  tr->add_option("--lambda2", tc.lambda_gs, "Weight of the graph-identity loss");
  tr->add_option("--epochs", tc.epochs, "Training epochs");
  tr->add_option("--batch-size", tc.batch_size, "Walks per optimizer step");
  tr->add_option("--lr", tc.learning_rate, "Adam learning rate");
  tr->add_option("--mask-rate", tc.mask.rate, "Fraction of walk positions masked");
  tr->add_option("--seed", tc.seed, "Random seed");

  // embed
  std::string em_ckpt, em_out;
  auto* em = app.add_subcommand("embed", "Export graph embeddings from a checkpoint");
  em->add_option("--checkpoint", em_ckpt, "Checkpoint file (model.bin)")->required();
  em->add_option("--out", em_out, "Embeddings CSV")->required();

  // evaluate
  std::string ev_emb, ev_pheno, ev_out, ev_protocol = "stratified10";
  EvalConfig ev;
  bool ev_raw = false;
  auto* evc = app.add_subcommand("evaluate", "Cross-validated logistic classification");
  evc->add_option("--embeddings", ev_emb, "Embeddings CSV")->required();
  evc->add_option("--phenotype", ev_pheno, "Phenotype CSV (subject_id,label,site)")->required();
  evc->add_option("--protocol", ev_protocol, "stratifiedK (e.g. stratified10) | loso");
  evc->add_option("--seed", ev.seed, "Fold assignment seed");
  evc->add_option("--reg", ev.logistic.reg, "L2 strength");
  evc->add_option("--threshold", ev.threshold, "Decision threshold on P(label 1)");
  evc->add_flag("--no-standardize", ev_raw, "Skip z-scoring of embedding features");
  evc->add_option("--out", ev_out, "Report JSON")->required();

  // pipeline
  std::string pl_config;
  Overrides ov;
  auto* pl = app.add_subcommand("pipeline", "Run every stage, skipping those already up to date");
  pl->add_option("--config", pl_config, "Pipeline configuration JSON")->required();
  pl->add_option("--seed", ov.seed, "Override the global seed");
  pl->add_option("--out", ov.out, "Override the output directory");
  pl->add_option("--epochs", ov.epochs, "Training epochs");
  pl->add_option("--dim", ov.dim, "Model width d");
  pl->add_option("--heads", ov.heads, "Attention heads");
  pl->add_option("--layers", ov.layers, "Encoder layers");
  pl->add_option("--walks-per-node", ov.walks_per_node, "Walk attempts per start node");
  pl->add_option("--length", ov.walk_length, "Maximum walk length in nodes");
  pl->add_option("--lambda1", ov.lambda1, "Weight of the masked-node loss");
  pl->add_option("--lambda2", ov.lambda2, "Weight of the graph-identity loss");
  pl->add_option("--lr", ov.lr, "Adam learning rate");
  pl->add_option("--protocol", ov.protocol, "stratifiedK | loso");
  pl->add_flag("--site-report", ov.site_report, "Also evaluate leave-one-site-out");
  bool pl_quiet = false;
  pl->add_flag("--quiet", pl_quiet, "Suppress progress output");

  // synth
  std::string sy_out, sy_config;
  SyntheticSpec sy;
  std::uint64_t sy_seed = 0;
  auto* syc = app.add_subcommand("synth", "Write a two-regime synthetic corpus");
  syc->add_option("--out", sy_out, "Output directory")->required();
  syc->add_option("--config", sy_config, "Take the synthetic section and seed from a pipeline config");
  syc->add_option("--subjects", sy.subjects, "Number of subjects");
  syc->add_option("--regions", sy.regions, "Regions per subject");
  syc->add_option("--time-points", sy.time_points, "Rows per time series");
  syc->add_option("--seed", sy_seed, "Random seed");

  // report
  std::string rp_in, rp_trace, rp_out;
  auto* rp = app.add_subcommand("report", "Render a report JSON as text tables and charts");
  rp->add_option("--report", rp_in, "Report JSON")->required();
  rp->add_option("--loss-trace", rp_trace, "Optional loss_trace.csv to chart");
  rp->add_option("--out", rp_out, "Also write the summary to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::validation);
  }

  try {
    if (bc->parsed()) {
      const auto files = build_connectome_stage(bc_input, window, bc_out, bc_regions, &std::cerr);
      std::cout << "wrote " << files.size() << " graphs to " << bc_out << '\n';
    } else if (sw->parsed()) {
      walk.start_time =
          sw_start == "earliest" ? StartTimePolicy::earliest : StartTimePolicy::uniform_incident;
      const auto corpus = sample_walks_stage(sw_graphs, walk, sw_out);
      for (const auto& w : corpus.stats.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << "wrote " << corpus.walks.size() << " walks to " << sw_out << '\n';
    } else if (tr->parsed()) {
      const auto result = train_stage(tr_walks, enc, tc, tr_out, tr_nodes, &std::cerr);
      std::cout << "final L_total " << result.trace.back().total << "; checkpoint in " << tr_out
                << '\n';
    } else if (em->parsed()) {
      embed_stage(em_ckpt, em_out);
      std::cout << "wrote " << em_out << '\n';
    } else if (evc->parsed()) {
      ev.protocol = parse_protocol(ev_protocol, &ev.folds);
      ev.standardize = !ev_raw;
      const auto report = evaluate_stage(ev_emb, ev_pheno, ev, ev_out,
                                         {{"embeddings", ev_emb}, {"phenotype", ev_pheno}});
      std::cout << emit_report(report.to_json()).text;
    } else if (pl->parsed()) {
      PipelineConfig cfg;
      try {
        cfg = PipelineConfig::load(pl_config);
        ov.apply(cfg);
      } catch (const Error& e) {
        throw StageError("config", e.kind(), e.what());
      }
      const auto result = run_pipeline(cfg, pl_quiet ? nullptr : &std::cerr);
      for (const auto& s : result.stages)
        std::cout << s.name << ": " << (s.skipped ? "skipped (up to date)" : "done") << '\n';
      std::cout << emit_report(result.report.to_json()).text;
    } else if (syc->parsed()) {
      if (!sy_config.empty()) {
        const auto cfg = PipelineConfig::load(sy_config);
        const auto flags = sy;
        sy = cfg.synthetic;
        if (syc->count("--subjects")) sy.subjects = flags.subjects;
        if (syc->count("--regions")) sy.regions = flags.regions;
        if (syc->count("--time-points")) sy.time_points = flags.time_points;
        if (!syc->count("--seed")) sy_seed = cfg.seed;
      }
      const auto corpus =
          generate_synthetic_corpus(sy.subjects, sy.regions, sy.time_points, sy.regimes, sy_seed);
      for (const auto& w : corpus.warnings) std::cerr << "warning: " << w << '\n';
      write_synthetic_corpus(sy_out, corpus);
      std::cout << "wrote " << corpus.subjects.size() << " subjects to " << sy_out << '\n';
    } else if (rp->parsed()) {
      std::optional<std::vector<EpochLoss>> trace;
      if (!rp_trace.empty()) trace = read_loss_trace_csv(rp_trace);
      const auto json = read_json_file(rp_in);
      const auto rendered = rp_out.empty()
                                ? emit_report(json, trace ? &*trace : nullptr)
                                : write_report_artifacts(json, trace ? &*trace : nullptr, rp_out);
      std::cout << rendered.text;
      for (const auto& w : rendered.warnings) std::cerr << "warning: " << w << '\n';
    }
  } catch (const Error& e) {
    return report_failure(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::runtime);
  }
  return 0;
}
