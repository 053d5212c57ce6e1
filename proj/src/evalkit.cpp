#include "dynembed/evalkit.hpp"

#include "dynembed/error.hpp"
#include "dynembed/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace dynembed {

namespace {

void count_classes(std::span<const int> y, int& pos, int& neg) {
  pos = neg = 0;
  for (int v : y) (v == 1 ? pos : neg)++;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Folds stratified_kfold(std::span<const LabeledEmbedding> items, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k must be >= 2");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].label != 0 && items[i].label != 1) throw ValidationError("labels must be 0 or 1");
    by_class[items[i].label].push_back(i);
  }
  for (int c = 0; c < 2; ++c)
    if (static_cast<int>(by_class[c].size()) < k)
      throw InfeasibleError("class " + std::to_string(c) + " has " +
                            std::to_string(by_class[c].size()) + " members, fewer than k=" +
                            std::to_string(k));

  Rng rng = make_rng(derive_seed(seed, 0xf01d));
  Folds folds(k);
  std::size_t cursor = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t idx : members) folds[cursor++ % k].push_back(idx);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

Folds site_folds(std::span<const LabeledEmbedding> items, std::vector<std::string>* site_names) {
  std::map<std::string, std::vector<std::size_t>> sites;
  for (std::size_t i = 0; i < items.size(); ++i) sites[items[i].site].push_back(i);
  if (sites.size() < 2) throw InfeasibleError("leave-one-site-out needs at least two sites");
  Folds folds;
  if (site_names) site_names->clear();
  for (auto& [name, idx] : sites) {
    if (site_names) site_names->push_back(name);
    folds.push_back(std::move(idx));
  }
  return folds;
}

double LogisticModel::probability(const Eigen::VectorXd& x) const {
  return sigmoid(weights.dot(x) + bias);
}

double logistic_objective(const Eigen::MatrixXd& x, std::span<const int> y,
                          const Eigen::VectorXd& w, double b, double reg) {
  const double n = static_cast<double>(y.size());
  const Eigen::VectorXd z = (x * w).array() + b;
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double s = y[i] == 1 ? 1.0 : -1.0;
    loss += softplus(-s * z(static_cast<Eigen::Index>(i)));
  }
  return loss / n + reg / (2.0 * n) * w.squaredNorm();
}

LogisticModel logistic_fit(const Eigen::MatrixXd& x, std::span<const int> y,
                           const LogisticOptions& options) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw ValidationError("logistic_fit: feature/label count mismatch");
  int pos = 0, neg = 0;
  count_classes(y, pos, neg);
  if (pos == 0 || neg == 0) throw InfeasibleError("logistic_fit: training set has a single class");

  const double n = static_cast<double>(y.size());
  Eigen::VectorXd yv(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) yv(i) = y[static_cast<std::size_t>(i)];

  LogisticModel m;
  m.weights = Eigen::VectorXd::Zero(x.cols());
  m.bias = 0.0;

  auto gradient = [&](const Eigen::VectorXd& w, double b, Eigen::VectorXd& gw, double& gb) {
    Eigen::VectorXd r = (x * w).array() + b;
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = sigmoid(r(i)) - yv(i);
    gw = x.transpose() * r / n + options.reg / n * w;
    gb = r.sum() / n;
  };

  Eigen::VectorXd gw;
  double gb = 0.0;
  gradient(m.weights, m.bias, gw, gb);
  double f = logistic_objective(x, y, m.weights, m.bias, options.reg);
  double step = 1.0;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    const double g2 = gw.squaredNorm() + gb * gb;
    if (std::sqrt(g2) < options.tolerance) break;
    // Armijo backtracking along the negative gradient.
    Eigen::VectorXd w_new;
    double b_new = 0.0, f_new = 0.0;
    for (;;) {
      w_new = m.weights - step * gw;
      b_new = m.bias - step * gb;
      f_new = logistic_objective(x, y, w_new, b_new, options.reg);
      if (f_new <= f - 0.5 * step * g2 || step < 1e-12) break;
      step *= 0.5;
    }
    Eigen::VectorXd gw_new;
    double gb_new = 0.0;
    gradient(w_new, b_new, gw_new, gb_new);
    // Barzilai-Borwein trial step for the next iteration.
    const double sy = (w_new - m.weights).dot(gw_new - gw) + (b_new - m.bias) * (gb_new - gb);
    const double ss = (w_new - m.weights).squaredNorm() + (b_new - m.bias) * (b_new - m.bias);
    step = sy > 0 ? std::clamp(ss / sy, 1e-6, 1e6) : step * 2.0;
    m.weights = std::move(w_new);
    m.bias = b_new;
    gw = std::move(gw_new);
    gb = gb_new;
    f = f_new;
  }
  m.iterations = it;
  m.gradient_norm = std::sqrt(gw.squaredNorm() + gb * gb);
  m.objective = f;
  return m;
}

double auc_rank(std::span<const int> y_true, std::span<const double> scores) {
  if (y_true.size() != scores.size()) throw ValidationError("auc: size mismatch");
  int pos = 0, neg = 0;
  count_classes(y_true, pos, neg);
  if (pos == 0 || neg == 0) throw InfeasibleError("AUC undefined for a single-class sample");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks: tied scores share the mean of their 1-based ranks.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (y_true[order[t]] == 1) pos_rank_sum += rank;
    i = j + 1;
  }
  const double p = pos, q = neg;
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

BinaryMetrics partial_metrics(std::span<const int> y_true, std::span<const double> scores,
                              double threshold) {
  if (y_true.size() != scores.size() || y_true.empty())
    throw ValidationError("metrics: empty or mismatched inputs");
  int tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (y_true[i] == 1)
      (predicted ? tp : fn)++;
    else
      (predicted ? fp : tn)++;
  }
  BinaryMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(y_true.size());
  if (tp + fn > 0) m.sensitivity = static_cast<double>(tp) / (tp + fn);
  if (tn + fp > 0) m.specificity = static_cast<double>(tn) / (tn + fp);
  if (tp + fn > 0 && tn + fp > 0) m.auc = auc_rank(y_true, scores);
  return m;
}

BinaryMetrics metrics(std::span<const int> y_true, std::span<const double> scores,
                      double threshold) {
  BinaryMetrics m = partial_metrics(y_true, scores, threshold);
  if (!m.auc) throw InfeasibleError("metrics undefined: y_true holds a single class");
  return m;
}

MetricSummary summarize(std::span<const std::optional<double>> values) {
  MetricSummary s;
  double sum = 0.0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++s.count;
    }
  if (s.count == 0) return s;
  s.mean = sum / s.count;
  double sq = 0.0;
  for (const auto& v : values)
    if (v) sq += (*v - s.mean) * (*v - s.mean);
  s.std = std::sqrt(sq / s.count);
  return s;
}

std::string protocol_name(Protocol p) {
  return p == Protocol::stratified_k ? "stratified-k" : "leave-one-site-out";
}

Protocol parse_protocol(const std::string& name, int* folds) {
  if (name == "leave-one-site-out" || name == "loso") return Protocol::leave_one_site_out;
  if (name == "stratified-k") return Protocol::stratified_k;
  if (name.rfind("stratified", 0) == 0) {
    const std::string digits = name.substr(10);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
      if (folds) *folds = std::stoi(digits);
      return Protocol::stratified_k;
    }
  }
  throw ValidationError("unknown protocol '" + name + "'");
}

EvalReport run_cv(std::span<const LabeledEmbedding> items, const EvalConfig& cfg) {
  if (items.empty()) throw ValidationError("no embeddings to evaluate");
  const Eigen::Index dim = items.front().vector.size();
  for (const auto& it : items) {
    if (it.vector.size() != dim) throw ValidationError("embedding dimensions differ");
    if (!it.vector.allFinite()) throw ValidationError("embedding '" + it.graph_id + "' not finite");
  }

  EvalReport report;
  report.config = cfg;
  Folds folds;
  std::vector<std::string> names;
  if (cfg.protocol == Protocol::stratified_k) {
    folds = stratified_kfold(items, cfg.folds, cfg.seed);
    for (std::size_t f = 0; f < folds.size(); ++f) names.push_back("fold" + std::to_string(f));
  } else {
    folds = site_folds(items, &names);
  }

  std::vector<std::uint8_t> held(items.size());
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::fill(held.begin(), held.end(), 0);
    for (std::size_t i : folds[f]) held[i] = 1;
    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < items.size(); ++i)
      if (!held[i]) train_idx.push_back(i);

    Eigen::MatrixXd x_train(static_cast<Eigen::Index>(train_idx.size()), dim);
    std::vector<int> y_train;
    for (std::size_t r = 0; r < train_idx.size(); ++r) {
      x_train.row(static_cast<Eigen::Index>(r)) = items[train_idx[r]].vector.transpose();
      y_train.push_back(items[train_idx[r]].label);
    }
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(dim);
    Eigen::RowVectorXd scale = Eigen::RowVectorXd::Ones(dim);
    if (cfg.standardize) {
      mean = x_train.colwise().mean();
      const Eigen::MatrixXd centered = x_train.rowwise() - mean;
      for (Eigen::Index j = 0; j < dim; ++j) {
        const double sd = std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(x_train.rows()));
        scale(j) = sd > 0 ? sd : 1.0;
      }
      x_train = centered.array().rowwise() / scale.array();
    }

    const LogisticModel model = logistic_fit(x_train, y_train, cfg.logistic);

    FoldResult fr;
    fr.name = names[f];
    std::vector<int> y_test;
    std::vector<double> scores;
    for (std::size_t i : folds[f]) {
      const auto& it = items[i];
      fr.held_out.push_back(it.graph_id);
      const Eigen::VectorXd z =
          ((it.vector.transpose() - mean).array() / scale.array()).matrix().transpose();
      scores.push_back(model.probability(z));
      y_test.push_back(it.label);
      (it.label == 1 ? fr.positives : fr.negatives)++;
    }
    fr.subjects = static_cast<int>(folds[f].size());
    fr.metrics = partial_metrics(y_test, scores, cfg.threshold);
    report.folds.push_back(std::move(fr));
  }

  auto collect = [&](auto field) {
    std::vector<std::optional<double>> v;
    for (const auto& f : report.folds) v.push_back(field(f.metrics));
    return summarize(v);
  };
  report.accuracy = collect([](const BinaryMetrics& m) { return std::optional<double>(m.accuracy); });
  report.sensitivity = collect([](const BinaryMetrics& m) { return m.sensitivity; });
  report.specificity = collect([](const BinaryMetrics& m) { return m.specificity; });
  report.auc = collect([](const BinaryMetrics& m) { return m.auc; });
  return report;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

nlohmann::json summary_json(const MetricSummary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"folds", s.count}};
}

MetricSummary summary_from(const nlohmann::json& j) {
  MetricSummary s;
  s.mean = j.value("mean", 0.0);
  s.std = j.value("std", 0.0);
  s.count = j.value("folds", 0);
  return s;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["format"] = "dynembed-eval-report/1";
  j["protocol"] = protocol_name(config.protocol);
  j["positive_class"] = "label 1 (ASD)";
  j["config"] = {{"folds", config.folds},
                 {"seed", config.seed},
                 {"reg", config.logistic.reg},
                 {"tolerance", config.logistic.tolerance},
                 {"max_iterations", config.logistic.max_iterations},
                 {"threshold", config.threshold},
                 {"standardize", config.standardize}};
  if (!config_echo.is_null()) j["config_echo"] = config_echo;
  nlohmann::json folds_j = nlohmann::json::array();
  for (const auto& f : folds)
    folds_j.push_back({{"name", f.name},
                       {"held_out", f.held_out},
                       {"subjects", f.subjects},
                       {"positives", f.positives},
                       {"negatives", f.negatives},
                       {"accuracy", f.metrics.accuracy},
                       {"sensitivity", opt(f.metrics.sensitivity)},
                       {"specificity", opt(f.metrics.specificity)},
                       {"auc", opt(f.metrics.auc)}});
  j["folds"] = std::move(folds_j);
  j["aggregate"] = {{"accuracy", summary_json(accuracy)},
                    {"sensitivity", summary_json(sensitivity)},
                    {"specificity", summary_json(specificity)},
                    {"auc", summary_json(auc)}};
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  if (j.contains("protocol")) r.config.protocol = parse_protocol(j["protocol"].get<std::string>());
  if (j.contains("config")) {
    const auto& c = j["config"];
    r.config.folds = c.value("folds", r.config.folds);
    r.config.seed = c.value("seed", r.config.seed);
    r.config.logistic.reg = c.value("reg", r.config.logistic.reg);
    r.config.threshold = c.value("threshold", r.config.threshold);
    r.config.standardize = c.value("standardize", r.config.standardize);
  }
  if (j.contains("config_echo")) r.config_echo = j["config_echo"];
  if (j.contains("folds"))
    for (const auto& f : j["folds"]) {
      FoldResult fr;
      fr.name = f.value("name", "");
      if (f.contains("held_out")) fr.held_out = f["held_out"].get<std::vector<std::string>>();
      fr.subjects = f.value("subjects", 0);
      fr.positives = f.value("positives", 0);
      fr.negatives = f.value("negatives", 0);
      fr.metrics.accuracy = f.value("accuracy", 0.0);
      fr.metrics.sensitivity = opt_from(f, "sensitivity");
      fr.metrics.specificity = opt_from(f, "specificity");
      fr.metrics.auc = opt_from(f, "auc");
      r.folds.push_back(std::move(fr));
    }
  if (j.contains("aggregate")) {
    const auto& a = j["aggregate"];
    if (a.contains("accuracy")) r.accuracy = summary_from(a["accuracy"]);
    if (a.contains("sensitivity")) r.sensitivity = summary_from(a["sensitivity"]);
    if (a.contains("specificity")) r.specificity = summary_from(a["specificity"]);
    if (a.contains("auc")) r.auc = summary_from(a["auc"]);
  }
  return r;
}

}  // namespace dynembed
