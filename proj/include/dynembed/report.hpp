#pragma once

// Human-readable rendering of evaluation reports: a summary table, per-fold
// and per-site tables, and plaintext charts.

#include "dynembed/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace dynembed {

struct RenderedReport {
  std::string text;
  std::vector<std::string> warnings;
  bool empty = false;  ///< no folds to show
};

/// Tolerates missing fields: whatever is present is rendered and each gap is
/// listed in `warnings`. `loss_trace` may be null.
RenderedReport emit_report(const nlohmann::json& report,
                           const std::vector<EpochLoss>* loss_trace = nullptr);

/// Renders and writes the summary text (warnings included) to `path`.
RenderedReport write_report_artifacts(const nlohmann::json& report,
                                      const std::vector<EpochLoss>* loss_trace,
                                      const std::filesystem::path& path);

/// Plaintext line chart of `values` against their index.
std::string ascii_line_chart(const std::vector<double>& values, int height = 10, int width = 60);

}  // namespace dynembed
