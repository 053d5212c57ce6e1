#pragma once

// Downstream logistic classification of graph embeddings and CV protocols.

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dynembed {

struct LabeledEmbedding {
  std::string graph_id;
  Eigen::VectorXd vector;
  int label = 0;  ///< 1 is the positive (ASD) class
  std::string site;
};

/// Index folds; fold i lists the held-out positions into `items`, ascending.
using Folds = std::vector<std::vector<std::size_t>>;

/// Each class is shuffled with `seed` and dealt round-robin, the second class
/// continuing where the first stopped so fold sizes differ by at most one.
/// Throws InfeasibleError when a class has fewer than k members.
Folds stratified_kfold(std::span<const LabeledEmbedding> items, int k, std::uint64_t seed);

/// One fold per site, sites in lexicographic order.
Folds site_folds(std::span<const LabeledEmbedding> items, std::vector<std::string>* site_names);

struct LogisticOptions {
  double reg = 1.0;  ///< L2 strength on the weights (bias unpenalised)
  double tolerance = 1e-6;
  int max_iterations = 200000;
};

struct LogisticModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  double objective = 0.0;

  double probability(const Eigen::VectorXd& x) const;
};

/// (1/n) sum log(1 + exp(-s_i (w.x_i + b))) + reg / (2n) |w|^2, with s_i = +-1.
double logistic_objective(const Eigen::MatrixXd& x, std::span<const int> y,
                          const Eigen::VectorXd& w, double b, double reg);

/// Gradient descent from zero with Armijo backtracking. Rows of `x` are samples.
/// Throws InfeasibleError when y holds a single class.
LogisticModel logistic_fit(const Eigen::MatrixXd& x, std::span<const int> y,
                           const LogisticOptions& options = {});

struct BinaryMetrics {
  double accuracy = 0.0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> auc;
};

/// Mann-Whitney AUC with ties counted one half. Throws InfeasibleError on a
/// single-class input.
double auc_rank(std::span<const int> y_true, std::span<const double> scores);

/// All four metrics; throws InfeasibleError when y_true holds a single class.
BinaryMetrics metrics(std::span<const int> y_true, std::span<const double> scores,
                      double threshold = 0.5);

/// As `metrics`, leaving undefined entries empty instead of throwing.
BinaryMetrics partial_metrics(std::span<const int> y_true, std::span<const double> scores,
                              double threshold = 0.5);

enum class Protocol { stratified_k, leave_one_site_out };

struct EvalConfig {
  Protocol protocol = Protocol::stratified_k;
  int folds = 10;
  std::uint64_t seed = 0;
  LogisticOptions logistic;
  double threshold = 0.5;
  bool standardize = true;
};

struct FoldResult {
  std::string name;
  std::vector<std::string> held_out;
  int subjects = 0;
  int positives = 0;
  int negatives = 0;
  BinaryMetrics metrics;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation over folds
  int count = 0;     ///< folds where the metric is defined
};

struct EvalReport {
  EvalConfig config;
  std::vector<FoldResult> folds;
  MetricSummary accuracy, sensitivity, specificity, auc;
  nlohmann::json config_echo;  ///< caller-supplied provenance, copied verbatim

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

MetricSummary summarize(std::span<const std::optional<double>> values);

EvalReport run_cv(std::span<const LabeledEmbedding> items, const EvalConfig& cfg);

std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& name, int* folds = nullptr);

}  // namespace dynembed
