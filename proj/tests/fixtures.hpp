#pragma once

// Small synthetic corpora shared by the trainer, pipeline and acceptance tests.

#include "dynembed/connectome.hpp"
#include "dynembed/synthetic.hpp"
#include "dynembed/tempwalk.hpp"
#include "dynembed/trainer.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace fixture {

inline std::vector<dynembed::DynamicGraph> synthetic_graphs(int subjects, int regions, int time_points,
                                                            std::uint64_t seed) {
  const auto corpus = dynembed::generate_synthetic_corpus(subjects, regions, time_points,
                                                          dynembed::RegimeDescriptor{}, seed);
  std::vector<dynembed::DynamicGraph> graphs;
  for (const auto& s : corpus.subjects)
    graphs.push_back(dynembed::build_dynamic_graph(s.series, dynembed::WindowSpec{}));
  return graphs;
}

inline std::vector<dynembed::TemporalWalk> synthetic_walks(int subjects, int regions, int walks_per_node,
                                                           int max_length, std::uint64_t seed) {
  dynembed::WalkConfig cfg;
  cfg.walks_per_node = walks_per_node;
  cfg.max_length = max_length;
  cfg.seed = seed;
  return dynembed::sample_corpus(synthetic_graphs(subjects, regions, 200, seed), cfg).walks;
}

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every
/// parameter entry, using central differences with step h.
inline double max_relative_gradient_error(dynembed::Model& model, const dynembed::Model& grads,
                                          const std::function<double()>& loss, double h,
                                          double floor) {
  std::vector<dynembed::Matrix*> params;
  std::vector<const dynembed::Matrix*> analytic;
  model.for_each_tensor([&](std::string_view, dynembed::Matrix& m) { params.push_back(&m); });
  grads.for_each_tensor([&](std::string_view, const dynembed::Matrix& m) { analytic.push_back(&m); });
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (Eigen::Index i = 0; i < params[p]->size(); ++i) {
      double& w = (*params[p])(i);
      const double saved = w;
      w = saved + h;
      const double up = loss();
      w = saved - h;
      const double down = loss();
      w = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = (*analytic[p])(i);
      const double scale = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  return worst;
}

}  // namespace fixture
