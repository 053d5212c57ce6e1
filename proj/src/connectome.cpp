#include "dynembed/connectome.hpp"

#include "dynembed/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dynembed {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string s = trim(text);
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_int(const std::string& text, int& out) {
  const std::string s = trim(text);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  return out;
}

}  // namespace

void TimeSeriesMatrix::validate() const {
  if (values.rows() == 0 || values.cols() == 0)
    throw ValidationError("time series '" + subject_id + "' is empty");
  if (!values.allFinite())
    throw ValidationError("time series '" + subject_id + "' contains non-finite values");
}

void WindowSpec::validate() const {
  if (window_length < 2) throw ValidationError("window length must be >= 2");
  if (stride < 1) throw ValidationError("stride must be >= 1");
  if (!(threshold_percentile > 0.0 && threshold_percentile < 100.0))
    throw ValidationError("threshold percentile must lie in (0, 100)");
}

int WindowSpec::window_count(int time_points) const {
  if (time_points < window_length) return 0;
  return (time_points - window_length) / stride + 1;
}

void DynamicGraph::validate() const {
  if (node_count <= 0) throw ValidationError("graph '" + graph_id + "' has no nodes");
  if (snapshots <= 0) throw ValidationError("graph '" + graph_id + "' has no snapshots");
  for (const auto& e : edges) {
    if (e.u == e.v) throw ValidationError("graph '" + graph_id + "' has a self-loop");
    if (e.u < 0 || e.v < 0 || e.u >= node_count || e.v >= node_count)
      throw ValidationError("graph '" + graph_id + "' has an out-of-range node");
    if (e.t < 0 || e.t >= snapshots)
      throw ValidationError("graph '" + graph_id + "' has an out-of-range snapshot");
  }
}

std::size_t DynamicGraph::edges_in_snapshot(int t) const {
  auto lo = std::lower_bound(edges.begin(), edges.end(), TemporalEdge{0, 0, t},
                             [](const auto& a, const auto& b) { return a.t < b.t; });
  auto hi = std::upper_bound(edges.begin(), edges.end(), TemporalEdge{0, 0, t},
                             [](const auto& a, const auto& b) { return a.t < b.t; });
  return static_cast<std::size_t>(hi - lo);
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  if (x.size() < 2) throw ValidationError("pearson: need at least two samples");

  // Streaming co-moments (Welford).
  double mean_x = 0.0, mean_y = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(i + 1);
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    mean_x += dx / n;
    mean_y += dy / n;
    sxx += dx * (x[i] - mean_x);
    syy += dy * (y[i] - mean_y);
    sxy += dx * (y[i] - mean_y);
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  const double r = sxy / std::sqrt(sxx * syy);
  return {std::clamp(r, -1.0, 1.0), false};
}

double percentile_linear(std::vector<double> values, double percentile) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = percentile / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

std::vector<double> window_correlations(const TimeSeriesMatrix& ts, int start, int length,
                                        int* degenerate_pairs) {
  const int regions = ts.regions();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(regions) * (regions - 1) / 2);
  int degenerate = 0;
  for (int u = 0; u < regions; ++u) {
    std::span<const double> xu(ts.values.col(u).data() + start, length);
    for (int v = u + 1; v < regions; ++v) {
      std::span<const double> xv(ts.values.col(v).data() + start, length);
      const Correlation c = pearson(xu, xv);
      degenerate += c.degenerate ? 1 : 0;
      out.push_back(c.value);
    }
  }
  if (degenerate_pairs) *degenerate_pairs = degenerate;
  return out;
}

DynamicGraph build_dynamic_graph(const TimeSeriesMatrix& ts, const WindowSpec& spec) {
  ts.validate();
  spec.validate();
  const int windows = spec.window_count(ts.time_points());
  if (windows < 1)
    throw ValidationError("series '" + ts.subject_id + "' has " +
                          std::to_string(ts.time_points()) + " time points, shorter than window " +
                          std::to_string(spec.window_length));
  if (ts.regions() < 2) throw ValidationError("need at least two regions");

  DynamicGraph g;
  g.graph_id = ts.subject_id;
  g.node_count = ts.regions();
  g.snapshots = windows;
  g.thresholds.reserve(windows);

  for (int t = 0; t < windows; ++t) {
    int degenerate = 0;
    const auto corr = window_correlations(ts, t * spec.stride, spec.window_length, &degenerate);
    if (degenerate > 0)
      g.warnings.push_back("window " + std::to_string(t) + ": " + std::to_string(degenerate) +
                           " zero-variance pairs set to 0");
    const double threshold = percentile_linear(corr, spec.threshold_percentile);
    g.thresholds.push_back(threshold);

    std::size_t k = 0;
    for (int u = 0; u < g.node_count; ++u)
      for (int v = u + 1; v < g.node_count; ++v, ++k)
        if (corr[k] > threshold) g.edges.push_back({u, v, t});
  }
  return g;
}

TimeSeriesMatrix read_time_series_csv(const fs::path& path, const std::string& subject_id) {
  auto in = open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    std::vector<double> row;
    row.reserve(fields.size());
    bool numeric = true;
    for (const auto& f : fields) {
      double v = 0.0;
      if (!parse_double(f, v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw FormatError(path.string(), line_no, "non-numeric field");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError(path.string(), line_no,
                        "expected " + std::to_string(rows.front().size()) + " columns");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(path.string() + ": no data rows");

  TimeSeriesMatrix ts;
  ts.subject_id = subject_id;
  ts.values.resize(static_cast<Eigen::Index>(rows.size()),
                   static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      ts.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  ts.validate();
  return ts;
}

void write_time_series_csv(const fs::path& path, const TimeSeriesMatrix& ts) {
  auto out = open_output(path);
  char buf[64];
  for (Eigen::Index r = 0; r < ts.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < ts.values.cols(); ++c) {
      auto res = std::to_chars(buf, buf + sizeof buf, ts.values(r, c));
      if (c) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

PhenotypeTable read_phenotype_csv(const fs::path& path) {
  auto in = open_input(path);
  PhenotypeTable table;
  std::string line;
  std::size_t line_no = 0;
  int id_col = 0, label_col = 1, site_col = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    for (auto& f : fields) f = trim(f);
    if (line_no == 1) {
      auto find = [&](const char* name) {
        auto it = std::find(fields.begin(), fields.end(), name);
        return it == fields.end() ? -1 : static_cast<int>(it - fields.begin());
      };
      if (find("subject_id") >= 0) {
        id_col = find("subject_id");
        label_col = find("label");
        site_col = find("site");
        if (label_col < 0 || site_col < 0)
          throw FormatError(path.string(), line_no, "header must name subject_id,label,site");
        continue;
      }
    }
    const int needed = std::max({id_col, label_col, site_col});
    if (static_cast<int>(fields.size()) <= needed)
      throw FormatError(path.string(), line_no, "expected subject_id,label,site");
    int label = 0;
    if (!parse_int(fields[label_col], label) || (label != 0 && label != 1))
      throw FormatError(path.string(), line_no, "label must be 0 or 1");
    if (!table.emplace(fields[id_col], Phenotype{label, fields[site_col]}).second)
      throw FormatError(path.string(), line_no, "duplicate subject '" + fields[id_col] + "'");
  }
  return table;
}

void write_phenotype_csv(const fs::path& path, const PhenotypeTable& table) {
  auto out = open_output(path);
  out << "subject_id,label,site\n";
  for (const auto& [id, p] : table) out << id << ',' << p.label << ',' << p.site << '\n';
}

void write_graph(std::ostream& out, const DynamicGraph& g) {
  out << '#' << g.graph_id << " nodes=" << g.node_count << " snapshots=" << g.snapshots << '\n';
  for (const auto& e : g.edges) out << e.u << '\t' << e.v << '\t' << e.t << '\n';
}

void write_graph_file(const fs::path& path, const DynamicGraph& g) {
  auto out = open_output(path);
  write_graph(out, g);
}

DynamicGraph read_graph(std::istream& in, const std::string& source_name) {
  DynamicGraph g;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!have_header) {
      if (line.front() != '#') throw FormatError(source_name, line_no, "missing graph header");
      std::istringstream hs(line.substr(1));
      std::string nodes, snaps;
      if (!(hs >> g.graph_id >> nodes >> snaps) || nodes.rfind("nodes=", 0) != 0 ||
          snaps.rfind("snapshots=", 0) != 0 || !parse_int(nodes.substr(6), g.node_count) ||
          !parse_int(snaps.substr(10), g.snapshots))
        throw FormatError(source_name, line_no, "malformed header, expected '#id nodes=R snapshots=S'");
      have_header = true;
      continue;
    }
    const auto f = split(line, '\t');
    TemporalEdge e;
    if (f.size() != 3 || !parse_int(f[0], e.u) || !parse_int(f[1], e.v) || !parse_int(f[2], e.t))
      throw FormatError(source_name, line_no, "expected u<TAB>v<TAB>t");
    if (e.u > e.v) std::swap(e.u, e.v);
    g.edges.push_back(e);
  }
  if (!have_header) throw FormatError(source_name, line_no, "empty graph file");
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  g.validate();
  return g;
}

DynamicGraph read_graph_file(const fs::path& path) {
  auto in = open_input(path);
  return read_graph(in, path.string());
}

std::vector<DynamicGraph> read_graph_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".tsv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<DynamicGraph> graphs;
  graphs.reserve(files.size());
  for (const auto& f : files) graphs.push_back(read_graph_file(f));
  std::sort(graphs.begin(), graphs.end(),
            [](const auto& a, const auto& b) { return a.graph_id < b.graph_id; });
  return graphs;
}

}  // namespace dynembed
