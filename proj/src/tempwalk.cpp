#include "dynembed/tempwalk.hpp"

#include "dynembed/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dynembed {

void WalkConfig::validate() const {
  if (max_length < 2) throw ValidationError("walk length must be >= 2");
  if (walks_per_node < 1) throw ValidationError("walks per node must be >= 1");
  if (min_length < 1 || min_length > max_length)
    throw ValidationError("min_length must lie in [1, max_length]");
}

TemporalAdjacency::TemporalAdjacency(const DynamicGraph& g) : graph_id_(g.graph_id) {
  std::vector<std::size_t> degree(g.node_count, 0);
  for (const auto& e : g.edges) {
    ++degree[e.u];
    ++degree[e.v];
  }
  offsets_.assign(g.node_count + 1, 0);
  for (int v = 0; v < g.node_count; ++v) offsets_[v + 1] = offsets_[v] + degree[v];
  edges_.resize(offsets_.back());
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const auto& e : g.edges) {
    edges_[cursor[e.u]++] = {e.v, e.t};
    edges_[cursor[e.v]++] = {e.u, e.t};
  }
  for (int v = 0; v < g.node_count; ++v)
    std::sort(edges_.begin() + offsets_[v], edges_.begin() + offsets_[v + 1],
              [](const IncidentEdge& a, const IncidentEdge& b) {
                return a.time != b.time ? a.time < b.time : a.neighbor < b.neighbor;
              });
}

std::span<const IncidentEdge> TemporalAdjacency::incident(int v) const {
  return {edges_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
}

std::span<const IncidentEdge> TemporalAdjacency::neighborhood(int v, int t) const {
  auto all = incident(v);
  auto it = std::lower_bound(all.begin(), all.end(), t,
                             [](const IncidentEdge& e, int time) { return e.time < time; });
  return all.subspan(static_cast<std::size_t>(it - all.begin()));
}

std::vector<IncidentEdge> temporal_neighborhood(const DynamicGraph& g, int v, int t) {
  if (v < 0 || v >= g.node_count) throw ValidationError("node index out of range");
  TemporalAdjacency adj(g);
  auto nbh = adj.neighborhood(v, t);
  return {nbh.begin(), nbh.end()};
}

std::optional<std::vector<double>> transition_probs(std::span<const IncidentEdge> neighborhood,
                                                    int t) {
  if (neighborhood.empty()) return std::nullopt;
  // exp(t - t') for t' >= t; subtracting the largest exponent (at the
  // earliest t') leaves the normalised result unchanged.
  int earliest = neighborhood.front().time;
  for (const auto& e : neighborhood) earliest = std::min(earliest, e.time);
  const double shift = static_cast<double>(t - earliest);
  std::vector<double> p(neighborhood.size());
  double total = 0.0;
  for (std::size_t i = 0; i < neighborhood.size(); ++i) {
    p[i] = std::exp(static_cast<double>(t - neighborhood[i].time) - shift);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

namespace {

std::size_t draw_index(std::span<const double> probs, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

}  // namespace

WalkSample sample_walk(const TemporalAdjacency& adj, int start, const WalkConfig& cfg, Rng& rng) {
  if (start < 0 || start >= adj.node_count()) throw ValidationError("start node out of range");
  WalkSample sample;
  const auto incident = adj.incident(start);
  if (incident.empty()) {
    sample.outcome = WalkOutcome::isolated_start;
    return sample;
  }

  int now = 0;
  if (cfg.start_time == StartTimePolicy::uniform_incident) {
    std::vector<int> stamps;
    for (const auto& e : incident)
      if (stamps.empty() || stamps.back() != e.time) stamps.push_back(e.time);
    now = stamps[std::uniform_int_distribution<std::size_t>(0, stamps.size() - 1)(rng)];
  }

  TemporalWalk& walk = sample.walk;
  walk.graph_id = adj.graph_id();
  walk.nodes.push_back(start);
  int current = start;
  while (static_cast<int>(walk.nodes.size()) < cfg.max_length) {
    const auto nbh = adj.neighborhood(current, now);
    const auto probs = transition_probs(nbh, now);
    if (!probs) break;
    const IncidentEdge& next = nbh[draw_index(*probs, rng)];
    walk.times.push_back(next.time);
    walk.nodes.push_back(next.neighbor);
    current = next.neighbor;
    now = next.time;
  }
  if (static_cast<int>(walk.nodes.size()) < std::max(cfg.min_length, 2)) {
    sample.outcome = WalkOutcome::too_short;
    sample.walk = {};
  }
  return sample;
}

WalkCorpus sample_corpus(std::span<const DynamicGraph> graphs, const WalkConfig& cfg) {
  cfg.validate();
  if (graphs.empty()) throw ValidationError("no graphs to sample from");
  WalkCorpus corpus;
  for (const auto& g : graphs) {
    GraphWalkStats& stats = corpus.stats.per_graph[g.graph_id];
    if (g.edges.empty()) {
      corpus.stats.warnings.push_back("graph '" + g.graph_id + "' has no edges; no walks sampled");
      continue;
    }
    const TemporalAdjacency adj(g);
    const std::uint64_t graph_key = fnv1a(g.graph_id);
    for (int node = 0; node < g.node_count; ++node) {
      for (int w = 0; w < cfg.walks_per_node; ++w) {
        Rng rng = make_rng(derive_seed(cfg.seed, graph_key, node, w));
        WalkSample s = sample_walk(adj, node, cfg, rng);
        ++stats.attempted;
        switch (s.outcome) {
          case WalkOutcome::emitted:
            ++stats.emitted;
            corpus.walks.push_back(std::move(s.walk));
            break;
          case WalkOutcome::isolated_start:
            ++stats.rejected_isolated;
            break;
          case WalkOutcome::too_short:
            ++stats.rejected_short;
            break;
        }
      }
    }
  }
  return corpus;
}

std::string check_walk(const TemporalWalk& walk, const DynamicGraph& g, int max_length) {
  if (walk.graph_id != g.graph_id) return "graph id mismatch";
  if (walk.nodes.size() < 2) return "walk shorter than 2 nodes";
  if (static_cast<int>(walk.nodes.size()) > max_length) return "walk longer than max length";
  if (walk.times.size() + 1 != walk.nodes.size()) return "times/nodes size mismatch";
  for (std::size_t i = 0; i + 1 < walk.times.size(); ++i)
    if (walk.times[i] > walk.times[i + 1]) return "timestamps decrease at step " + std::to_string(i);
  for (std::size_t i = 0; i < walk.times.size(); ++i) {
    TemporalEdge e{std::min(walk.nodes[i], walk.nodes[i + 1]),
                   std::max(walk.nodes[i], walk.nodes[i + 1]), walk.times[i]};
    if (!std::binary_search(g.edges.begin(), g.edges.end(), e))
      return "step " + std::to_string(i) + " is not an edge of the graph";
  }
  return {};
}

void write_walks(std::ostream& out, std::span<const TemporalWalk> walks) {
  for (const auto& w : walks) {
    out << w.graph_id << '\t';
    for (std::size_t i = 0; i < w.nodes.size(); ++i) {
      const int t = w.times.empty() ? 0 : w.times[std::min(i, w.times.size() - 1)];
      if (i) out << ' ';
      out << w.nodes[i] << ':' << t;
    }
    out << '\n';
  }
}

void write_walks_file(const std::filesystem::path& path, std::span<const TemporalWalk> walks) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  write_walks(out, walks);
}

namespace {

bool parse_int(std::string_view s, int& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::vector<TemporalWalk> read_walks(std::istream& in, const std::string& source_name) {
  std::vector<TemporalWalk> walks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw FormatError(source_name, line_no, "expected graph_id<TAB>steps");
    TemporalWalk w;
    w.graph_id = line.substr(0, tab);
    std::istringstream steps(line.substr(tab + 1));
    std::string tok;
    std::vector<int> stamps;
    while (steps >> tok) {
      const auto colon = tok.find(':');
      int v = 0, t = 0;
      if (colon == std::string::npos ||
          !parse_int(std::string_view(tok).substr(0, colon), v) ||
          !parse_int(std::string_view(tok).substr(colon + 1), t) || v < 0 || t < 0)
        throw FormatError(source_name, line_no, "malformed step '" + tok + "'");
      w.nodes.push_back(v);
      stamps.push_back(t);
    }
    if (w.nodes.size() < 2) throw FormatError(source_name, line_no, "walk has fewer than 2 nodes");
    stamps.pop_back();
    w.times = std::move(stamps);
    for (std::size_t i = 0; i + 1 < w.times.size(); ++i)
      if (w.times[i] > w.times[i + 1])
        throw FormatError(source_name, line_no, "timestamps are not non-decreasing");
    walks.push_back(std::move(w));
  }
  return walks;
}

std::vector<TemporalWalk> read_walks_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return read_walks(in, path.string());
}

}  // namespace dynembed
