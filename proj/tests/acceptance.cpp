// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "dynembed/pipeline.hpp"
#include "dynembed/report.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace dynembed;

namespace {

class Verdict {
 public:
  void fail(const std::string& why) {
    ok_ = false;
    if (!first_failure_.empty()) return;
    first_failure_ = why;
  }
  void require(bool cond, const std::string& why) {
    if (!cond) fail(why);
  }
  void note(const std::string& text) {
    notes_ += notes_.empty() ? text : "; " + text;
  }
  bool ok() const { return ok_; }
  std::string detail() const { return ok_ ? notes_ : first_failure_ + (notes_.empty() ? "" : " (" + notes_ + ")"); }

 private:
  bool ok_ = true;
  std::string first_failure_;
  std::string notes_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Harness {
  PipelineConfig base;
  fs::path workdir;
  int failures = 0;

  // Shared between the end-to-end criteria.
  std::optional<PipelineResult> main_run;
  double main_seconds = 0.0;
  std::optional<PipelineResult> ablation_run;
  std::map<std::string, std::string> main_bytes;

  void report(int id, const std::string& title, const Verdict& v) {
    if (!v.ok()) ++failures;
    std::cout << (v.ok() ? "PASS" : "FAIL") << " [" << id << "] " << title;
    if (const auto d = v.detail(); !d.empty()) std::cout << ": " << d;
    std::cout << std::endl;
  }

  template <typename F>
  void run(int id, const std::string& title, F&& body) {
    Verdict v;
    try {
      body(v);
    } catch (const std::exception& e) {
      v.fail(std::string("exception: ") + e.what());
    }
    report(id, title, v);
  }

  PipelineConfig main_config() const {
    auto c = base;
    c.synthetic.enabled = true;
    c.out_dir = workdir / "run";
    c.site_report = true;
    c.train.lambda_td = 1.0;
    return c;
  }

  PipelineConfig ablation_config() const {
    auto c = main_config();
    c.out_dir = workdir / "ablation";
    c.site_report = false;
    c.train.lambda_td = 0.0;
    return c;
  }

  void ensure_main_run() {
    if (main_run) return;
    const auto cfg = main_config();
    fs::remove_all(cfg.out_dir);
    const auto start = std::chrono::steady_clock::now();
    main_run = run_pipeline(cfg);
    main_seconds = seconds_since(start);
    for (const char* p : {"walks/walks.txt", "ckpt/model.bin", "embeddings/embeddings.csv", "reports/report.json"})
      main_bytes[p] = slurp(cfg.out_dir / p);
  }
};

// ---- individual criteria -------------------------------------------------

void protocol_fidelity(Harness& h, Verdict& v) {
  h.ensure_main_run();
  const auto cfg = h.main_config().resolved();
  const auto phenotype = read_phenotype_csv(cfg.phenotype);
  std::set<std::string> sites;
  for (const auto& [id, row] : phenotype) sites.insert(row.site);

  const auto check_partition = [&](const EvalReport& r, const std::string& label) {
    std::set<std::string> seen;
    for (const auto& f : r.folds) {
      v.require(static_cast<int>(f.held_out.size()) == f.subjects, label + " fold " + f.name + " subject count");
      for (const auto& id : f.held_out) {
        v.require(phenotype.count(id) == 1, label + " unknown subject " + id);
        v.require(seen.insert(id).second, label + " subject " + id + " held out twice");
      }
    }
    v.require(seen.size() == phenotype.size(), label + " folds do not cover every subject");
  };

  const auto strat = EvalReport::from_json(read_json_file(cfg.out_dir / "reports/report.json"));
  v.require(strat.config.protocol == Protocol::stratified_k && strat.folds.size() == 10,
            "stratified report does not hold 10 folds");
  check_partition(strat, "stratified");
  int positives = 0;
  for (const auto& [id, row] : phenotype) positives += row.label;
  const int negatives = static_cast<int>(phenotype.size()) - positives;
  for (const auto& f : strat.folds) {
    v.require(std::abs(f.positives * 10 - positives) <= 10 && std::abs(f.negatives * 10 - negatives) <= 10,
              "fold " + f.name + " class counts not stratified");
  }
  for (const auto* m : {&strat.accuracy, &strat.sensitivity, &strat.specificity, &strat.auc})
    v.require(m->count > 0, "stratified aggregate missing");

  const auto loso = EvalReport::from_json(read_json_file(cfg.out_dir / "reports/report_sites.json"));
  v.require(loso.config.protocol == Protocol::leave_one_site_out, "site report protocol");
  v.require(loso.folds.size() == sites.size(), "site report is not one fold per site");
  check_partition(loso, "site");
  for (const auto& f : loso.folds)
    for (const auto& id : f.held_out)
      v.require(phenotype.at(id).site == f.name, "subject " + id + " outside its site fold");

  const std::string summary = slurp(cfg.out_dir / "reports/summary.txt");
  for (const char* word : {"Accuracy", "Sensitivity", "Specificity", "AUC", "±"})
    v.require(summary.find(word) != std::string::npos, std::string("summary lacks ") + word);
  v.note("10 stratified folds over " + std::to_string(phenotype.size()) + " subjects, " +
         std::to_string(loso.folds.size()) + " site folds");
}

void walk_invariants(Verdict& v) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::vector<DynamicGraph> graphs;
  for (int i = 0; i < 20; ++i)
    graphs.push_back(oracle::random_graph("g" + std::to_string(i), 20, 31, 0.05, rng));
  WalkConfig cfg;
  cfg.walks_per_node = 30;
  cfg.seed = 17;
  const auto corpus = sample_corpus(graphs, cfg);
  std::map<std::string, const DynamicGraph*> by_id;
  for (const auto& g : graphs) by_id[g.graph_id] = &g;
  v.require(corpus.walks.size() >= 10000, "only " + std::to_string(corpus.walks.size()) + " walks emitted");
  std::size_t checked = 0;
  for (const auto& w : corpus.walks) {
    if (checked == 10000) break;
    ++checked;
    const std::string why = check_walk(w, *by_id.at(w.graph_id), cfg.max_length);
    if (!why.empty()) {
      v.fail("invalid walk in " + w.graph_id + ": " + why);
      break;
    }
    if (!std::is_sorted(w.times.begin(), w.times.end())) {
      v.fail("timestamps decrease in " + w.graph_id);
      break;
    }
  }
  const double secs = seconds_since(start);
  v.require(secs < 10.0, "took " + fmt(secs, 2) + " s");
  v.note(std::to_string(checked) + " walks valid in " + fmt(secs, 2) + " s");
}

DynamicGraph star(const std::vector<int>& times) {
  DynamicGraph g;
  g.graph_id = "star";
  g.node_count = static_cast<int>(times.size()) + 1;
  g.snapshots = *std::max_element(times.begin(), times.end()) + 1;
  for (std::size_t i = 0; i < times.size(); ++i) g.edges.push_back({0, static_cast<int>(i) + 1, times[i]});
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

void transition_distribution(Verdict& v) {
  // chi-square critical values at p = 0.001 for 1..5 degrees of freedom
  const double critical[] = {0, 10.828, 13.816, 16.266, 18.467, 20.515};
  const std::vector<std::vector<int>> cases{{0, 1}, {0, 0, 1}, {0, 1, 2, 3}, {2, 2, 5}, {0, 1, 1, 2, 4}};
  const int draws = 100000;
  WalkConfig cfg;
  cfg.max_length = 2;
  double worst_se = 0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto g = star(cases[c]);
    const TemporalAdjacency adj(g);
    Rng rng = make_rng(derive_seed(99, c));
    std::vector<double> counts(cases[c].size(), 0.0);
    for (int i = 0; i < draws; ++i) {
      const auto s = sample_walk(adj, 0, cfg, rng);
      if (s.outcome != WalkOutcome::emitted) {
        v.fail("walk from the star centre was rejected");
        return;
      }
      counts[s.walk.nodes[1] - 1] += 1;
    }
    const auto p = oracle::transition_closed_form(cases[c], 0);
    double chi2 = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double expected = draws * p[i];
      const double se = std::sqrt(draws * p[i] * (1 - p[i]));
      const double z = std::abs(counts[i] - expected) / se;
      worst_se = std::max(worst_se, z);
      v.require(z <= 3.0, "case " + std::to_string(c) + " edge " + std::to_string(i) + " off by " + fmt(z, 2) + " SE");
      chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
    }
    v.require(chi2 < critical[p.size() - 1], "case " + std::to_string(c) + " chi2 " + fmt(chi2, 2));
    if (c == 0) {
      const double f0 = counts[0] / draws, f1 = counts[1] / draws;
      v.require(std::abs(f0 - 0.7311) <= 0.005 && std::abs(f1 - 0.2689) <= 0.005,
                "two-edge case gave [" + fmt(f0) + ", " + fmt(f1) + "]");
      v.note("two-edge case [" + fmt(f0) + ", " + fmt(f1) + "]");
    }
  }
  v.note("worst deviation " + fmt(worst_se, 2) + " SE");
}

void gradient_fidelity(Verdict& v) {
  const auto start = std::chrono::steady_clock::now();
  EncoderConfig enc;
  enc.dim = 8;
  enc.heads = 2;
  enc.layers = 1;
  enc.max_seq = 6;
  Rng rng = make_rng(6);
  Model model;
  model.encoder = EncoderState::initialize(enc, Vocabulary{7}, rng);
  model.heads = Heads::initialize(enc.dim, model.encoder.vocab.size(), {"a", "b", "c"}, rng);
  v.require(model.encoder.vocab.size() == 10, "vocabulary is not 10");
  const std::vector<TemporalWalk> walks{{"a", {0, 1, 2, 3, 4}, {0, 0, 1, 1}},
                                        {"b", {5, 6, 5}, {2, 3}},
                                        {"c", {2, 4, 6, 0}, {0, 1, 2}}};
  MaskPolicy policy;
  policy.rate = 0.4;
  const auto batch = make_masked_batch(walks, std::vector<int>{0, 1, 2}, model.encoder.vocab, enc.max_seq, policy, rng);
  TrainConfig cfg;
  cfg.lambda_td = 1.0;
  cfg.lambda_gs = 5.0;
  Model grads = model.zeros_like();
  joint_loss(batch, model, cfg, &grads);
  const double worst = fixture::max_relative_gradient_error(
      model, grads, [&] { return joint_loss(batch, model, cfg).total; }, 1e-4, 1e-6);
  const double secs = seconds_since(start);
  v.require(worst < 1e-3, "max relative error " + std::to_string(worst));
  v.require(secs < 30.0, "took " + fmt(secs, 2) + " s");
  std::ostringstream s;
  s << "max relative error " << std::scientific << std::setprecision(2) << worst << " in " << fmt(secs, 2) << " s";
  v.note(s.str());
}

void loss_sanity(Harness& h, Verdict& v) {
  const Vocabulary vocab{116};
  const int d = 16;
  Matrix positions = Matrix::Random(21, d);
  MaskedSequence seq;
  seq.length = 21;
  seq.positions = {3, 8, 13};
  seq.targets = {0, 60, 115};
  const double td = masked_token_cross_entropy(positions, seq, Matrix::Zero(d, vocab.size())) / 3.0;
  const double gs = graph_cross_entropy(positions.row(0), 11, Matrix::Zero(d, 40));
  v.require(std::abs(td - std::log(static_cast<double>(vocab.size()))) < 1e-6, "uniform L_TD " + fmt(td, 8));
  v.require(std::abs(gs - std::log(40.0)) < 1e-6, "uniform L_GS " + fmt(gs, 8));

  // Ten graphs from the bundled regimes; sampler and optimiser keep every default.
  const auto cfg = h.base.resolved();
  const auto corpus = generate_synthetic_corpus(10, cfg.synthetic.regions, cfg.synthetic.time_points,
                                                cfg.synthetic.regimes, cfg.seed);
  std::vector<DynamicGraph> graphs;
  for (const auto& s : corpus.subjects) graphs.push_back(build_dynamic_graph(s.series, cfg.window));
  WalkConfig walk_cfg;
  walk_cfg.seed = cfg.seed;
  const auto walks = sample_corpus(graphs, walk_cfg).walks;
  TrainConfig train_cfg;
  train_cfg.seed = cfg.seed;
  const auto result = train(walks, Vocabulary{cfg.synthetic.regions}, cfg.encoder, train_cfg);
  const double first = result.trace.front().total, last = result.trace.back().total;
  v.require(train_cfg.epochs == 50, "default epochs changed");
  v.require(last < 0.5 * first, "L_total " + fmt(first) + " -> " + fmt(last) + " after " +
                                    std::to_string(train_cfg.epochs) + " epochs at lr " +
                                    std::to_string(train_cfg.learning_rate));
  v.note("ln|V| and ln|G| within 1e-6; L_total " + fmt(first) + " -> " + fmt(last) + " (" +
         fmt(100.0 * last / first, 1) + "%)");
}

void discriminability(Harness& h, Verdict& v) {
  h.ensure_main_run();
  const auto& r = h.main_run->report;
  v.require(h.main_run->report.folds.size() == 10, "expected 10 folds");
  v.require(r.accuracy.mean >= 0.9, "accuracy " + fmt(r.accuracy.mean));
  v.require(r.auc.mean >= 0.9, "AUC " + fmt(r.auc.mean));
  v.require(h.main_seconds < 600.0, "pipeline took " + fmt(h.main_seconds, 1) + " s");
  v.note("accuracy " + fmt(r.accuracy.mean) + " ± " + fmt(r.accuracy.std) + ", AUC " + fmt(r.auc.mean) + " ± " +
         fmt(r.auc.std) + " in " + fmt(h.main_seconds, 1) + " s");
}

void ablation_direction(Harness& h, Verdict& v) {
  h.ensure_main_run();
  const auto cfg = h.ablation_config();
  fs::remove_all(cfg.out_dir);
  h.ablation_run = run_pipeline(cfg);
  const double with = h.main_run->report.auc.mean;
  const double without = h.ablation_run->report.auc.mean;
  v.require(without < with, "lambda1=0 AUC " + fmt(without) + " is not below lambda1=1 AUC " + fmt(with));
  v.note("AUC " + fmt(with) + " with the masked-node term, " + fmt(without) + " without");
}

void connectome_oracle(Verdict& v) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto series = [&](int t, int r) {
    Eigen::MatrixXd m(t, r);
    for (int i = 0; i < t; ++i) {
      const double shared = n(rng);
      for (int j = 0; j < r; ++j) m(i, j) = n(rng) + (j % 3 == 0 ? 0.5 * shared : 0.0) + 3.0;
    }
    return m;
  };
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int regions = 4 + trial % 9;
    const int len = 5 + trial % 17;
    const int stride = 1 + trial % 6;
    const int t = len + static_cast<int>(rng() % 60);
    const double pct = trial % 4 == 0 ? 80.0 : 50.0 + (trial % 45);
    const TimeSeriesMatrix ts{"s" + std::to_string(trial), series(t, regions)};
    const WindowSpec spec{len, stride, pct};
    const DynamicGraph g = build_dynamic_graph(ts, spec);
    const auto ref = oracle::naive_snapshots(ts.values, len, stride, pct);
    if (g.snapshots != static_cast<int>(ref.size())) {
      v.fail("trial " + std::to_string(trial) + " snapshot count");
      return;
    }
    for (int w = 0; w < g.snapshots; ++w) {
      const auto corr = window_correlations(ts, w * stride, len);
      std::size_t k = 0;
      for (int a = 0; a < regions; ++a)
        for (int b = a + 1; b < regions; ++b, ++k) worst = std::max(worst, std::abs(corr[k] - ref[w].corr[a][b]));
      worst = std::max(worst, std::abs(g.thresholds[w] - ref[w].threshold));
      for (int a = 0; a < regions; ++a)
        for (int b = a + 1; b < regions; ++b) {
          const double c = ref[w].corr[a][b];
          if (std::abs(c - ref[w].threshold) < 1e-12) continue;
          const bool present = std::binary_search(g.edges.begin(), g.edges.end(), TemporalEdge{a, b, w});
          v.require(present == (c > ref[w].threshold), "trial " + std::to_string(trial) + " edge set differs");
        }
    }
  }
  v.require(worst <= 1e-12, "max deviation " + std::to_string(worst));

  std::size_t snapshots = 0;
  for (int regions : {10, 20, 37}) {
    const TimeSeriesMatrix ts{"s", series(200, regions)};
    const WindowSpec spec;
    const DynamicGraph g = build_dynamic_graph(ts, spec);
    const std::size_t pairs = static_cast<std::size_t>(regions) * (regions - 1) / 2;
    const auto expected = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(pairs) - 1e-9));
    for (int w = 0; w < g.snapshots; ++w, ++snapshots) {
      const auto corr = window_correlations(ts, w * spec.stride, spec.window_length);
      const auto ties = static_cast<std::size_t>(std::count(corr.begin(), corr.end(), g.thresholds[w]));
      const std::size_t kept = g.edges_in_snapshot(w);
      v.require(kept <= expected + ties && kept + ties >= expected,
                "R=" + std::to_string(regions) + " window " + std::to_string(w) + " kept " + std::to_string(kept));
    }
  }
  std::ostringstream s;
  s << "100 inputs, max deviation " << std::scientific << std::setprecision(1) << worst << "; 20% retained in "
    << snapshots << " snapshots";
  v.note(s.str());
}

void metric_oracle(Verdict& v) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 49);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      s[i] = trial % 2 ? std::round(u(rng) * 10) / 10 : u(rng);
    }
    y[0] = 1;
    y[1] = 0;
    const auto m = metrics(y, s, 0.5);
    const auto c = oracle::confusion(y, s, 0.5);
    const bool same = m.accuracy == double(c.tp + c.tn) / n && *m.sensitivity == double(c.tp) / (c.tp + c.fn) &&
                      *m.specificity == double(c.tn) / (c.tn + c.fp) && *m.auc == oracle::auc_pairs(y, s);
    if (!same) {
      v.fail("trial " + std::to_string(trial) + " differs from the oracle");
      return;
    }
  }

  std::vector<LabeledEmbedding> items(871);
  for (std::size_t i = 0; i < items.size(); ++i) items[i].label = i < 403 ? 1 : 0;
  const auto folds = stratified_kfold(items, 10, 3);
  v.require(folds.size() == 10, "fold count");
  std::set<std::size_t> seen;
  int lo = 1000, hi = 0;
  for (const auto& f : folds) {
    int pos = 0;
    for (std::size_t i : f) {
      v.require(seen.insert(i).second, "index held out twice");
      pos += items[i].label;
    }
    const int neg = static_cast<int>(f.size()) - pos;
    v.require(std::abs(pos * 10 - 403) <= 10 && std::abs(neg * 10 - 468) <= 10, "fold class counts outside ±1");
    lo = std::min(lo, pos);
    hi = std::max(hi, pos);
  }
  v.require(seen.size() == items.size(), "folds do not cover every item");
  v.note("1000 vectors exact; positives per fold " + std::to_string(lo) + ".." + std::to_string(hi));
}

void determinism(Harness& h, Verdict& v) {
  h.ensure_main_run();
  const auto cfg = h.main_config();
  fs::remove_all(cfg.out_dir);
  run_pipeline(cfg);
  for (const auto& [path, bytes] : h.main_bytes)
    v.require(slurp(cfg.out_dir / path) == bytes, path + " differs between runs");
  v.note("walks, checkpoint, embeddings and report byte-identical");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynembed acceptance checks"};
  fs::path workdir = "acceptance_work";
  fs::path config_path;
  app.add_option("--workdir", workdir, "scratch directory for pipeline runs");
  app.add_option("--config", config_path, "bundled synthetic pipeline config")->required()->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  Harness h;
  h.workdir = workdir;
  try {
    h.base = PipelineConfig::load(config_path);
  } catch (const std::exception& e) {
    std::cerr << "cannot load config: " << e.what() << "\n";
    return 2;
  }
  fs::create_directories(workdir);

  h.run(1, "protocol fidelity (stratified 10-fold and leave-one-site-out)", [&](Verdict& v) { protocol_fidelity(h, v); });
  h.run(2, "temporal walk invariants", [&](Verdict& v) { walk_invariants(v); });
  h.run(3, "transition distribution", [&](Verdict& v) { transition_distribution(v); });
  h.run(4, "gradient fidelity", [&](Verdict& v) { gradient_fidelity(v); });
  h.run(5, "loss sanity", [&](Verdict& v) { loss_sanity(h, v); });
  h.run(6, "end-to-end discriminability", [&](Verdict& v) { discriminability(h, v); });
  h.run(7, "ablation direction (lambda1=0 vs lambda1=1)", [&](Verdict& v) { ablation_direction(h, v); });
  h.run(8, "connectome oracle equivalence", [&](Verdict& v) { connectome_oracle(v); });
  h.run(9, "metric oracle equivalence and stratified fold counts", [&](Verdict& v) { metric_oracle(v); });
  h.run(10, "determinism", [&](Verdict& v) { determinism(h, v); });

  if (h.failures == 0)
    std::cout << "all criteria passed" << std::endl;
  else
    std::cout << h.failures << (h.failures == 1 ? " criterion" : " criteria") << " failed" << std::endl;
  return h.failures == 0 ? 0 : 1;
}
