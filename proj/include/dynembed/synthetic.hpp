#pragma once

// Seeded generator of ROI time-series with class-dependent community dynamics.

#include "dynembed/connectome.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dynembed {

enum class RegimeKind {
  static_blocks,    ///< fixed block membership for the whole series
  rotating_blocks,  ///< membership shifts by `rotation_step` regions every `rotation_period` rows
};

struct ClassRegime {
  RegimeKind kind = RegimeKind::static_blocks;
  int blocks = 2;
  int rotation_period = 50;
  int rotation_step = 0;  ///< 0 means R / (2 * blocks)

  bool operator==(const ClassRegime&) const = default;
};

struct RegimeDescriptor {
  ClassRegime control{RegimeKind::static_blocks};
  ClassRegime patient{RegimeKind::rotating_blocks};
  double signal = 1.0;      ///< latent block signal amplitude
  double noise = 0.8;       ///< mean per-region independent noise level
  double noise_jitter = 0.25;  ///< per-subject relative noise variation
  double autocorrelation = 0.6;  ///< AR(1) coefficient of latent signals
  int sites = 4;

  bool degenerate() const { return control == patient; }
};

struct SyntheticSubject {
  TimeSeriesMatrix series;
  int label = 0;
  std::string site;
};

struct SyntheticCorpus {
  std::vector<SyntheticSubject> subjects;
  bool degenerate_regime = false;
  std::vector<std::string> warnings;
};

/// Labels alternate 0/1 so both classes are present for n_subjects >= 2.
SyntheticCorpus generate_synthetic_corpus(int n_subjects, int regions, int time_points,
                                          const RegimeDescriptor& regimes, std::uint64_t seed);

/// Writes `<subject_id>.csv` files plus `phenotype.csv` into `dir`.
void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace dynembed
