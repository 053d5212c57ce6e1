#include "dynembed/synthetic.hpp"

#include "dynembed/error.hpp"
#include "dynembed/rng.hpp"

#include <cmath>
#include <cstdio>

namespace dynembed {

namespace {

int block_of(const ClassRegime& regime, int region, int row, int regions, int phase) {
  int shifted = region;
  if (regime.kind == RegimeKind::rotating_blocks) {
    const int step =
        regime.rotation_step > 0 ? regime.rotation_step : std::max(1, regions / (2 * regime.blocks));
    const int shift = ((row + phase) / regime.rotation_period) * step;
    shifted = (region + shift) % regions;
  }
  return shifted * regime.blocks / regions;
}

std::string format_id(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*d", prefix, width, i);
  return buf;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(int n_subjects, int regions, int time_points,
                                          const RegimeDescriptor& regimes, std::uint64_t seed) {
  if (n_subjects < 2) throw ValidationError("synthetic corpus needs at least two subjects");
  if (regions < 2 || time_points < 2) throw ValidationError("synthetic corpus shape too small");
  for (const ClassRegime* r : {&regimes.control, &regimes.patient}) {
    if (r->blocks < 1 || r->blocks > regions) throw ValidationError("invalid block count");
    if (r->rotation_period < 1) throw ValidationError("rotation period must be >= 1");
  }
  if (regimes.sites < 1) throw ValidationError("need at least one site");

  SyntheticCorpus corpus;
  corpus.degenerate_regime = regimes.degenerate();
  if (corpus.degenerate_regime)
    corpus.warnings.push_back("control and patient regimes are identical; labels carry no signal");

  const double innovation = std::sqrt(1.0 - regimes.autocorrelation * regimes.autocorrelation);
  corpus.subjects.reserve(n_subjects);
  for (int i = 0; i < n_subjects; ++i) {
    Rng rng = make_rng(derive_seed(seed, 0x5157u, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    const int label = i % 2;
    const ClassRegime& regime = label == 0 ? regimes.control : regimes.patient;
    const int phase = std::uniform_int_distribution<int>(0, regime.rotation_period - 1)(rng);
    const double noise = regimes.noise * (1.0 + regimes.noise_jitter * unit(rng));

    Eigen::MatrixXd latent(time_points, regime.blocks);
    for (int b = 0; b < regime.blocks; ++b) {
      double z = normal(rng);
      for (int t = 0; t < time_points; ++t) {
        z = regimes.autocorrelation * z + innovation * normal(rng);
        latent(t, b) = z;
      }
    }

    SyntheticSubject s;
    s.label = label;
    s.site = format_id("site", i % regimes.sites, 2);
    s.series.subject_id = format_id("sub", i, 4);
    s.series.values.resize(time_points, regions);
    for (int t = 0; t < time_points; ++t)
      for (int r = 0; r < regions; ++r)
        s.series.values(t, r) =
            regimes.signal * latent(t, block_of(regime, r, t, regions, phase)) + noise * normal(rng);
    corpus.subjects.push_back(std::move(s));
  }
  return corpus;
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  PhenotypeTable table;
  for (const auto& s : corpus.subjects) {
    write_time_series_csv(dir / (s.series.subject_id + ".csv"), s.series);
    table[s.series.subject_id] = Phenotype{s.label, s.site};
  }
  write_phenotype_csv(dir / "phenotype.csv", table);
}

}  // namespace dynembed
