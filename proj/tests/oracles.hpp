#pragma once

// Deliberately naive reference computations used as test oracles. None of
// these share code with the library.

#include "dynembed/connectome.hpp"
#include "dynembed/tempwalk.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

inline double pearson_two_pass(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// numpy.percentile(..., method="linear").
inline double percentile_sorted(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct NaiveSnapshot {
  std::vector<std::vector<double>> corr;  // full R x R
  double threshold = 0.0;
};

inline std::vector<NaiveSnapshot> naive_snapshots(const Eigen::MatrixXd& ts, int len, int stride,
                                                  double pct) {
  std::vector<NaiveSnapshot> out;
  const int regions = static_cast<int>(ts.cols());
  for (int start = 0; start + len <= ts.rows(); start += stride) {
    NaiveSnapshot s;
    s.corr.assign(regions, std::vector<double>(regions, 0.0));
    std::vector<double> upper;
    for (int u = 0; u < regions; ++u)
      for (int v = u + 1; v < regions; ++v) {
        std::vector<double> a, b;
        for (int t = start; t < start + len; ++t) {
          a.push_back(ts(t, u));
          b.push_back(ts(t, v));
        }
        s.corr[u][v] = s.corr[v][u] = pearson_two_pass(a, b);
        upper.push_back(s.corr[u][v]);
      }
    s.threshold = percentile_sorted(upper, pct);
    out.push_back(std::move(s));
  }
  return out;
}

/// Linear scan over all edges.
inline std::vector<dynembed::IncidentEdge> scan_neighborhood(const dynembed::DynamicGraph& g, int v,
                                                             int t) {
  std::vector<dynembed::IncidentEdge> out;
  for (const auto& e : g.edges) {
    if (e.t < t) continue;
    if (e.u == v) out.push_back({e.v, e.t});
    if (e.v == v) out.push_back({e.u, e.t});
  }
  return out;
}

/// Closed form exp(t - t_i) / sum_j exp(t - t_j) evaluated directly.
inline std::vector<double> transition_closed_form(const std::vector<int>& times, int t) {
  std::vector<double> p;
  double z = 0;
  for (int ti : times) z += std::exp(static_cast<double>(t - ti));
  for (int ti : times) p.push_back(std::exp(static_cast<double>(t - ti)) / z);
  return p;
}

/// Random dynamic graph with about `density` of all (pair, snapshot) slots present.
inline dynembed::DynamicGraph random_graph(const std::string& id, int nodes, int snapshots,
                                           double density, std::mt19937_64& rng) {
  dynembed::DynamicGraph g;
  g.graph_id = id;
  g.node_count = nodes;
  g.snapshots = snapshots;
  std::bernoulli_distribution keep(density);
  for (int t = 0; t < snapshots; ++t)
    for (int u = 0; u < nodes; ++u)
      for (int v = u + 1; v < nodes; ++v)
        if (keep(rng)) g.edges.push_back({u, v, t});
  return g;
}

struct Confusion {
  int tp = 0, tn = 0, fp = 0, fn = 0;
};

inline Confusion confusion(const std::vector<int>& y, const std::vector<double>& s, double thr) {
  Confusion c;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool pred = s[i] >= thr;
    if (y[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

/// O(n^2) pair counting: P(score_pos > score_neg) + 0.5 P(tie).
inline double auc_pairs(const std::vector<int>& y, const std::vector<double>& s) {
  double num = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        if (s[i] > s[j]) num += 1;
        else if (s[i] == s[j]) num += 0.5;
      }
  return num / pairs;
}

}  // namespace oracle
