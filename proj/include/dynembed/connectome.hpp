#pragma once

// Sliding-window functional connectivity: ROI time-series -> dynamic graph.

#include <Eigen/Dense>

#include <compare>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dynembed {

/// Per-subject ROI signal matrix, T time points (rows) x R regions (columns).
struct TimeSeriesMatrix {
  std::string subject_id;
  Eigen::MatrixXd values;

  int time_points() const { return static_cast<int>(values.rows()); }
  int regions() const { return static_cast<int>(values.cols()); }

  /// Throws ValidationError on empty or non-finite data.
  void validate() const;
};

struct WindowSpec {
  int window_length = 50;
  int stride = 5;
  double threshold_percentile = 80.0;

  void validate() const;
  /// Number of windows for a series of `time_points` rows; 0 when too short.
  int window_count(int time_points) const;
};

struct TemporalEdge {
  int u = 0;
  int v = 0;
  int t = 0;

  // Ordered by snapshot first so that edge lists read chronologically.
  auto operator<=>(const TemporalEdge& other) const {
    if (auto c = t <=> other.t; c != 0) return c;
    if (auto c = u <=> other.u; c != 0) return c;
    return v <=> other.v;
  }
  bool operator==(const TemporalEdge&) const = default;
};

/// Timestamped undirected edges over a fixed node set. Edges satisfy u < v and
/// are kept sorted by (t, u, v).
struct DynamicGraph {
  std::string graph_id;
  int node_count = 0;
  int snapshots = 0;
  std::vector<TemporalEdge> edges;

  // Diagnostics from construction; not serialized.
  std::vector<double> thresholds;
  std::vector<std::string> warnings;

  void validate() const;
  std::size_t edges_in_snapshot(int t) const;
};

struct Correlation {
  double value = 0.0;
  bool degenerate = false;  ///< one input had zero variance; value forced to 0
};

/// Sample Pearson coefficient. Throws ValidationError on length mismatch or n < 2.
Correlation pearson(std::span<const double> x, std::span<const double> y);

/// Linear-interpolation quantile (0 <= percentile <= 100) of unsorted values.
double percentile_linear(std::vector<double> values, double percentile);

/// Upper-triangle correlations of rows [start, start + length) in (u, v), u < v
/// row-major order. `degenerate_pairs` receives the zero-variance pair count.
std::vector<double> window_correlations(const TimeSeriesMatrix& ts, int start, int length,
                                        int* degenerate_pairs = nullptr);

DynamicGraph build_dynamic_graph(const TimeSeriesMatrix& ts, const WindowSpec& spec);

// ---- file formats -------------------------------------------------------

/// Reads a T x R numeric CSV; a non-numeric first line is treated as a header.
TimeSeriesMatrix read_time_series_csv(const std::filesystem::path& path,
                                      const std::string& subject_id);
void write_time_series_csv(const std::filesystem::path& path, const TimeSeriesMatrix& ts);

struct Phenotype {
  int label = 0;  ///< 0 control, 1 ASD
  std::string site;
};
using PhenotypeTable = std::map<std::string, Phenotype>;

PhenotypeTable read_phenotype_csv(const std::filesystem::path& path);
void write_phenotype_csv(const std::filesystem::path& path, const PhenotypeTable& table);

/// `#<graph_id> nodes=R snapshots=S` header, then one `u\tv\tt` line per edge.
void write_graph(std::ostream& out, const DynamicGraph& g);
void write_graph_file(const std::filesystem::path& path, const DynamicGraph& g);
DynamicGraph read_graph(std::istream& in, const std::string& source_name);
DynamicGraph read_graph_file(const std::filesystem::path& path);

/// Loads every `*.tsv` graph in a directory, sorted by graph id.
std::vector<DynamicGraph> read_graph_dir(const std::filesystem::path& dir);

}  // namespace dynembed
