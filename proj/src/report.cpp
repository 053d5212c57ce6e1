#include "dynembed/report.hpp"

#include "dynembed/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

namespace dynembed {

using nlohmann::json;

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::optional<double> number_at(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_number()) return std::nullopt;
  return j[key].get<double>();
}

std::string cell(const std::optional<double>& v) { return v ? fixed(*v) : "n/a"; }

/// Terminal columns taken by UTF-8 text (continuation bytes do not count).
std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string pad_right(std::string s, std::size_t width) {
  if (const auto w = display_width(s); w < width) s.append(width - w, ' ');
  return s;
}

std::string pad_left(std::string s, std::size_t width) {
  if (const auto w = display_width(s); w < width) s.insert(0, width - w, ' ');
  return s;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = display_width(header[c]);
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size() && c < width.size(); ++c)
        width[c] = std::max(width[c], display_width(r[c]));
    auto line = [&](const std::vector<std::string>& r) {
      std::string s;
      for (std::size_t c = 0; c < width.size(); ++c) {
        const std::string v = c < r.size() ? r[c] : "";
        s += c == 0 ? pad_right(v, width[c]) : "  " + pad_left(v, width[c]);
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      return s + '\n';
    };
    std::string out = line(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
    for (const auto& r : rows) out += line(r);
    return out;
  }
};

struct FoldView {
  std::string name;
  std::optional<double> subjects, accuracy, sensitivity, specificity, auc;
};

struct Summary {
  double mean = 0.0, std = 0.0;
  int count = 0;
};

Summary summarize_values(const std::vector<std::optional<double>>& values) {
  Summary s;
  for (const auto& v : values)
    if (v) {
      s.mean += *v;
      ++s.count;
    }
  if (s.count == 0) return s;
  s.mean /= s.count;
  for (const auto& v : values)
    if (v) s.std += (*v - s.mean) * (*v - s.mean);
  s.std = std::sqrt(s.std / s.count);
  return s;
}

std::string bar(double v, int width) {
  const int n = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * width));
  return std::string(static_cast<std::size_t>(n), '#') + std::string(static_cast<std::size_t>(width - n), '.');
}

}  // namespace

std::string ascii_line_chart(const std::vector<double>& values, int height, int width) {
  if (values.empty() || height < 2 || width < 1) return "(no data)\n";
  const int columns = std::min<int>(width, static_cast<int>(values.size()));
  std::vector<double> col(static_cast<std::size_t>(columns));
  for (int c = 0; c < columns; ++c) {
    const std::size_t i = values.size() == 1
                              ? 0
                              : static_cast<std::size_t>(std::lround(
                                    static_cast<double>(c) * (values.size() - 1) / std::max(1, columns - 1)));
    col[static_cast<std::size_t>(c)] = values[i];
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<std::string> grid(static_cast<std::size_t>(height), std::string(static_cast<std::size_t>(columns), ' '));
  for (int c = 0; c < columns; ++c) {
    const int level = static_cast<int>(std::lround((col[static_cast<std::size_t>(c)] - lo) / span * (height - 1)));
    grid[static_cast<std::size_t>(height - 1 - level)][static_cast<std::size_t>(c)] = '*';
  }
  const std::string top = fixed(hi), bottom = fixed(lo);
  const std::size_t label = std::max(top.size(), bottom.size());
  std::string out;
  for (int r = 0; r < height; ++r) {
    std::string prefix = r == 0 ? top : r == height - 1 ? bottom : "";
    out += pad_left(prefix, label) + " |" + grid[static_cast<std::size_t>(r)] + '\n';
  }
  out += std::string(label + 1, ' ') + '+' + std::string(static_cast<std::size_t>(columns), '-') + '\n';
  out += std::string(label + 2, ' ') + "0" +
         pad_left(std::to_string(values.size() - 1), static_cast<std::size_t>(std::max(1, columns - 1))) + '\n';
  return out;
}

RenderedReport emit_report(const json& report, const std::vector<EpochLoss>* loss_trace) {
  RenderedReport out;
  std::ostringstream text;
  auto warn = [&](std::string w) { out.warnings.push_back(std::move(w)); };

  if (!report.is_object()) {
    warn("report is not a JSON object");
    out.empty = true;
    out.text = "no results\n";
    return out;
  }

  const std::string protocol = report.value("protocol", std::string());
  if (protocol.empty()) warn("missing field 'protocol'");
  const bool by_site = protocol == "leave-one-site-out";

  std::vector<FoldView> folds;
  if (!report.contains("folds") || !report["folds"].is_array()) {
    warn("missing field 'folds'");
  } else {
    for (std::size_t i = 0; i < report["folds"].size(); ++i) {
      const auto& f = report["folds"][i];
      FoldView v;
      v.name = f.is_object() && f.contains("name") && f["name"].is_string()
                   ? f["name"].get<std::string>()
                   : "fold" + std::to_string(i);
      v.subjects = number_at(f, "subjects");
      v.accuracy = number_at(f, "accuracy");
      v.sensitivity = number_at(f, "sensitivity");
      v.specificity = number_at(f, "specificity");
      v.auc = number_at(f, "auc");
      if (!v.accuracy) warn("fold '" + v.name + "' has no accuracy");
      folds.push_back(std::move(v));
    }
  }

  if (folds.empty()) {
    warn("report contains no folds");
    out.empty = true;
    out.text = "no results\n";
    return out;
  }

  text << "Protocol: " << (protocol.empty() ? "unknown" : protocol) << ", " << folds.size()
       << (by_site ? " sites" : " folds") << '\n';
  if (report.contains("positive_class") && report["positive_class"].is_string())
    text << "Positive class: " << report["positive_class"].get<std::string>() << '\n';
  text << '\n';

  // Aggregate row: prefer the stored aggregate, recompute from folds when absent.
  const char* names[] = {"accuracy", "sensitivity", "specificity", "auc"};
  auto column = [&](int k) {
    std::vector<std::optional<double>> v;
    for (const auto& f : folds) v.push_back(k == 0 ? f.accuracy : k == 1 ? f.sensitivity : k == 2 ? f.specificity : f.auc);
    return v;
  };
  std::vector<std::string> agg_row{"dynembed"};
  for (int k = 0; k < 4; ++k) {
    std::optional<Summary> s;
    if (report.contains("aggregate") && report["aggregate"].contains(names[k])) {
      const auto& a = report["aggregate"][names[k]];
      if (auto m = number_at(a, "mean"), sd = number_at(a, "std"); m && sd)
        s = Summary{*m, *sd, static_cast<int>(number_at(a, "folds").value_or(0))};
    }
    if (!s) {
      warn(std::string("aggregate '") + names[k] + "' missing; recomputed from folds");
      s = summarize_values(column(k));
    }
    agg_row.push_back(s->count == 0 ? "n/a" : fixed(s->mean) + " ± " + fixed(s->std));
  }
  Table summary{{"Method", "Accuracy", "Sensitivity", "Specificity", "AUC"}, {agg_row}};
  text << summary.render() << '\n';

  Table detail;
  detail.header = by_site
                      ? std::vector<std::string>{"Site", "Subject Count", "Acc.", "Sen.", "Spe.", "AUC"}
                      : std::vector<std::string>{"Fold", "Subjects", "Accuracy", "Sensitivity", "Specificity", "AUC"};
  for (const auto& f : folds)
    detail.rows.push_back({f.name, f.subjects ? std::to_string(static_cast<long>(*f.subjects)) : "n/a",
                           cell(f.accuracy), cell(f.sensitivity), cell(f.specificity), cell(f.auc)});
  text << detail.render() << '\n';

  text << (by_site ? "Per-site" : "Per-fold") << " accuracy (A) and AUC (U):\n";
  std::size_t name_width = 0;
  for (const auto& f : folds) name_width = std::max(name_width, f.name.size());
  for (const auto& f : folds) {
    text << pad_right(f.name, name_width) << " A |" << (f.accuracy ? bar(*f.accuracy, 40) : std::string(40, ' '))
         << "| " << cell(f.accuracy) << '\n';
    text << pad_right("", name_width) << " U |" << (f.auc ? bar(*f.auc, 40) : std::string(40, ' ')) << "| "
         << cell(f.auc) << '\n';
  }

  if (loss_trace && !loss_trace->empty()) {
    std::vector<double> total;
    for (const auto& e : *loss_trace) total.push_back(e.total);
    text << "\nL_total by epoch:\n" << ascii_line_chart(total);
    const auto& first = loss_trace->front();
    const auto& last = loss_trace->back();
    text << "epoch " << first.epoch << ": L_TD=" << fixed(first.td) << " L_GS=" << fixed(first.gs)
         << " L_total=" << fixed(first.total) << '\n';
    text << "epoch " << last.epoch << ": L_TD=" << fixed(last.td) << " L_GS=" << fixed(last.gs)
         << " L_total=" << fixed(last.total) << '\n';
  }

  out.text = text.str();
  return out;
}

RenderedReport write_report_artifacts(const json& report, const std::vector<EpochLoss>* loss_trace,
                                      const std::filesystem::path& path) {
  RenderedReport r = emit_report(report, loss_trace);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << r.text;
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
  return r;
}

}  // namespace dynembed
