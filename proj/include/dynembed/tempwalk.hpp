#pragma once

// Temporal random walks with exponential time-decay transitions.

#include "dynembed/connectome.hpp"
#include "dynembed/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dynembed {

/// nodes[i] -> nodes[i+1] is traversed along an edge with timestamp times[i];
/// times.size() == nodes.size() - 1 and times is non-decreasing.
struct TemporalWalk {
  std::string graph_id;
  std::vector<int> nodes;
  std::vector<int> times;

  std::size_t length() const { return nodes.size(); }
  bool operator==(const TemporalWalk&) const = default;
};

enum class StartTimePolicy { earliest, uniform_incident };

struct WalkConfig {
  int max_length = 20;
  int walks_per_node = 30;
  int min_length = 2;
  StartTimePolicy start_time = StartTimePolicy::earliest;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One incident temporal edge seen from a fixed endpoint.
struct IncidentEdge {
  int neighbor = 0;
  int time = 0;

  bool operator==(const IncidentEdge&) const = default;
};

/// Per-node incident edges sorted by time so that a temporal neighborhood is a suffix.
class TemporalAdjacency {
 public:
  explicit TemporalAdjacency(const DynamicGraph& g);

  const std::string& graph_id() const { return graph_id_; }
  int node_count() const { return static_cast<int>(offsets_.size()) - 1; }

  std::span<const IncidentEdge> incident(int v) const;
  /// Incident edges of v with timestamp >= t.
  std::span<const IncidentEdge> neighborhood(int v, int t) const;

 private:
  std::string graph_id_;
  std::vector<std::size_t> offsets_;
  std::vector<IncidentEdge> edges_;
};

std::vector<IncidentEdge> temporal_neighborhood(const DynamicGraph& g, int v, int t);

/// exp(t - t') normalised over the neighborhood; std::nullopt marks a dead end.
std::optional<std::vector<double>> transition_probs(std::span<const IncidentEdge> neighborhood,
                                                    int t);

enum class WalkOutcome { emitted, isolated_start, too_short };

struct WalkSample {
  WalkOutcome outcome = WalkOutcome::emitted;
  TemporalWalk walk;  ///< valid only when outcome == emitted
};

WalkSample sample_walk(const TemporalAdjacency& adj, int start, const WalkConfig& cfg, Rng& rng);

struct GraphWalkStats {
  std::size_t attempted = 0;
  std::size_t emitted = 0;
  std::size_t rejected_isolated = 0;
  std::size_t rejected_short = 0;
};

struct SamplerStats {
  std::map<std::string, GraphWalkStats> per_graph;
  std::vector<std::string> warnings;
};

struct WalkCorpus {
  std::vector<TemporalWalk> walks;
  SamplerStats stats;
};

/// Attempts walks_per_node walks from every node of every graph. Each attempt
/// draws from its own stream keyed by (seed, graph_id, node, walk index).
WalkCorpus sample_corpus(std::span<const DynamicGraph> graphs, const WalkConfig& cfg);

/// Empty string when the walk is consistent with the graph; otherwise the reason.
std::string check_walk(const TemporalWalk& walk, const DynamicGraph& g, int max_length);

// ---- walks file ---------------------------------------------------------

/// `graph_id<TAB>v0:t0 v1:t1 ...`; the last node repeats the final edge time.
void write_walks(std::ostream& out, std::span<const TemporalWalk> walks);
void write_walks_file(const std::filesystem::path& path, std::span<const TemporalWalk> walks);
std::vector<TemporalWalk> read_walks(std::istream& in, const std::string& source_name);
std::vector<TemporalWalk> read_walks_file(const std::filesystem::path& path);

}  // namespace dynembed
