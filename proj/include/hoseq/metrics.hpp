#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"
#include "hoseq/handover.hpp"
#include "hoseq/version.hpp"

namespace hoseq::metrics {

class LengthMismatch : public Error {
 public:
  using Error::Error;
};
class NoBaselineHandovers : public Error {
 public:
  using Error::Error;
};

struct Classification {
  double accuracy_pct = 0;
  double precision_pct = 0;
  double recall_pct = 0;
  double f1_pct = 0;
};

// Standard confusion-matrix metrics in percent; zero-denominator cases
// report 0 by convention.
inline Classification classification_metrics(const std::vector<bool>& truth,
                                             const std::vector<bool>& pred) {
  if (truth.size() != pred.size() || truth.empty())
    throw LengthMismatch("truth/pred length mismatch or empty");
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] && pred[i]) ++tp;
    else if (!truth[i] && !pred[i]) ++tn;
    else if (!truth[i] && pred[i]) ++fp;
    else ++fn;
  }
  Classification c;
  const double n = static_cast<double>(truth.size());
  c.accuracy_pct = 100.0 * static_cast<double>(tp + tn) / n;
  c.precision_pct =
      tp + fp > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  c.recall_pct =
      tp + fn > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  c.f1_pct = (c.precision_pct + c.recall_pct) > 0
                 ? 2.0 * c.precision_pct * c.recall_pct / (c.precision_pct + c.recall_pct)
                 : 0.0;
  return c;
}

struct Reductions {
  std::optional<double> pp_reduction_pct;  // absent when the baseline has no ping-pongs
  double ho_reduction_pct = 0;
  double tos_gain_pct = 0;
};

namespace detail {

inline std::size_t executed_pp_count(const ho::HandoverLog& log) {
  std::size_t n = 0;
  for (const auto& e : log.events) n += e.executed && e.pp;
  return n;
}

// mean ToS over non-censored executed stays; censored final stays are
// excluded so equal-duration logs compare fairly
inline std::optional<double> mean_tos_s(const ho::HandoverLog& log) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& e : log.events)
    if (e.executed && e.tos_s) {
      sum += *e.tos_s;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

// pp_reduction = 100 (PP_b - PP_r) / PP_b over executed events (labels
// recomputed on the replayed chain by the caller); ho_reduction =
// 100 N_suppressed / N_b; tos_gain = 100 (meanToS_r - meanToS_b) / meanToS_b.
inline Reductions reduction_metrics(const ho::HandoverLog& baseline,
                                    const ho::HandoverLog& replayed) {
  const std::size_t n_b = baseline.executed_count();
  if (n_b == 0) throw NoBaselineHandovers("baseline log has no handovers");

  Reductions r;
  const std::size_t pp_b = detail::executed_pp_count(baseline);
  const std::size_t pp_r = detail::executed_pp_count(replayed);
  if (pp_b > 0)
    r.pp_reduction_pct = 100.0 * (static_cast<double>(pp_b) - static_cast<double>(pp_r)) /
                         static_cast<double>(pp_b);

  r.ho_reduction_pct =
      100.0 * static_cast<double>(replayed.suppressed_count()) / static_cast<double>(n_b);

  const auto tos_b = detail::mean_tos_s(baseline);
  const auto tos_r = detail::mean_tos_s(replayed);
  if (tos_b && tos_r && *tos_b > 0) r.tos_gain_pct = 100.0 * (*tos_r - *tos_b) / *tos_b;
  return r;
}

struct Timing {
  double wall_train_s = 0;
  double wall_infer_s = 0;                  // full test pass
  std::optional<double> infer_per_event_s;  // absent with zero test events
  std::size_t param_count = 0;
};

inline Timing timing_capture(double wall_train_s, double wall_infer_s,
                             std::size_t test_events, std::size_t param_count) {
  Timing t;
  t.wall_train_s = wall_train_s;
  t.wall_infer_s = wall_infer_s;
  t.param_count = param_count;
  if (test_events > 0) t.infer_per_event_s = wall_infer_s / static_cast<double>(test_events);
  return t;
}

// One row of the comparison table: model kind x feature mode.
struct MetricsSummary {
  std::string kind;  // gru / lstm / transformer
  std::string mode;  // rsrp / all
  Classification detection;
  Reductions reductions;
  Timing timing;
  // Wall times are the one nondeterministic quantity in a run; the pipeline
  // keeps them out of summary.csv by default so identical (config, seed)
  // runs are byte-identical, and parks the measurements in run_meta.txt.
  bool report_wall_times = false;
};

namespace detail {

inline std::string na_or_fixed(const std::optional<double>& v, int decimals) {
  return v ? csv::fmt_fixed(*v, decimals) : std::string("na");
}

}  // namespace detail

inline std::string summary_csv(std::span<const MetricsSummary> rows) {
  std::string out = "kind,mode,pp_reduction,pp_f1,ho_reduction,tos_gain,train_s,infer_s,params\n";
  for (const auto& s : rows) {
    out += s.kind;
    out += ',';
    out += s.mode;
    out += ',';
    out += detail::na_or_fixed(s.reductions.pp_reduction_pct, 2);
    out += ',';
    out += csv::fmt_fixed(s.detection.f1_pct, 2);
    out += ',';
    out += csv::fmt_fixed(s.reductions.ho_reduction_pct, 2);
    out += ',';
    out += csv::fmt_fixed(s.reductions.tos_gain_pct, 2);
    out += ',';
    out += s.report_wall_times ? csv::fmt_fixed(s.timing.wall_train_s, 2) : "na";
    out += ',';
    out += s.report_wall_times ? csv::fmt_fixed(s.timing.wall_infer_s, 3) : "na";
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(s.timing.param_count));
    out += '\n';
  }
  return out;
}

inline std::string summary_txt(std::span<const MetricsSummary> rows) {
  auto pad = [](std::string s, std::size_t w) {
    while (s.size() < w) s += ' ';
    return s;
  };
  std::string out;
  out += pad("kind", 13) + pad("mode", 6) + pad("pp_red%", 9) + pad("pp_f1", 8) +
         pad("ho_red%", 9) + pad("tos_gain%", 11) + pad("params", 8) + "\n";
  for (const auto& s : rows) {
    out += pad(s.kind, 13);
    out += pad(s.mode, 6);
    out += pad(detail::na_or_fixed(s.reductions.pp_reduction_pct, 2), 9);
    out += pad(csv::fmt_fixed(s.detection.f1_pct, 2), 8);
    out += pad(csv::fmt_fixed(s.reductions.ho_reduction_pct, 2), 9);
    out += pad(csv::fmt_fixed(s.reductions.tos_gain_pct, 2), 11);
    out += pad(csv::fmt(static_cast<std::int64_t>(s.timing.param_count)), 8);
    out += '\n';
  }
  return out;
}

namespace detail {

// Minimal grouped bar chart, deterministic bytes for identical inputs.
inline std::string bar_chart_svg(const std::string& title,
                                 std::span<const std::string> labels,
                                 std::span<const double> values) {
  const int width = 640, height = 360;
  const int ml = 60, mr = 20, mt = 50, mb = 90;
  double vmax = 1.0, vmin = 0.0;
  for (const double v : values) {
    vmax = std::max(vmax, v);
    vmin = std::min(vmin, v);
  }
  const double span = vmax - vmin;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
       "\" height=\"" + std::to_string(height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(width / 2) +
       "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
       title + " (v" + std::string(kVersion) + ")</text>\n";

  const std::size_t n = values.size();
  const double slot = plot_w / static_cast<double>(n == 0 ? 1 : n);
  const double bar_w = slot * 0.6;
  auto y_px = [&](double v) { return mt + plot_h * (1.0 - (v - vmin) / span); };

  // baseline (zero) axis
  s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + csv::fmt_fixed(y_px(0.0), 1) +
       "\" x2=\"" + std::to_string(width - mr) + "\" y2=\"" + csv::fmt_fixed(y_px(0.0), 1) +
       "\" stroke=\"black\"/>\n";

  for (std::size_t i = 0; i < n; ++i) {
    const double x = ml + slot * static_cast<double>(i) + (slot - bar_w) / 2.0;
    const double v = values[i];
    const double y0 = y_px(std::max(0.0, v)), y1 = y_px(std::min(0.0, v));
    s += "<rect x=\"" + csv::fmt_fixed(x, 1) + "\" y=\"" + csv::fmt_fixed(y0, 1) +
         "\" width=\"" + csv::fmt_fixed(bar_w, 1) + "\" height=\"" +
         csv::fmt_fixed(std::max(0.5, y1 - y0), 1) + "\" fill=\"#4878a8\"/>\n";
    s += "<text x=\"" + csv::fmt_fixed(x + bar_w / 2.0, 1) + "\" y=\"" +
         csv::fmt_fixed(y0 - 4.0, 1) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
         csv::fmt_fixed(v, 2) + "</text>\n";
    s += "<text x=\"" + csv::fmt_fixed(x + bar_w / 2.0, 1) + "\" y=\"" +
         std::to_string(height - mb + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(30 " +
         csv::fmt_fixed(x + bar_w / 2.0, 1) + " " + std::to_string(height - mb + 16) + ")\">" +
         labels[i] + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("short write to '" + path.string() + "'");
}

}  // namespace detail

// Writes summary.csv, summary.txt and one SVG bar chart per metric into
// out_dir (created if absent). Byte output is deterministic for identical
// inputs and tool version.
inline std::vector<std::filesystem::path> emit_report(std::span<const MetricsSummary> rows,
                                                      const std::filesystem::path& out_dir) {
  if (rows.empty()) throw Error("emit_report needs at least one summary");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    const auto p = out_dir / name;
    detail::write_file(p, content);
    written.push_back(p);
  };

  emit("summary.csv", summary_csv(rows));
  emit("summary.txt", summary_txt(rows));

  std::vector<std::string> labels;
  for (const auto& s : rows) labels.push_back(s.kind + "/" + s.mode);

  struct ChartSpec {
    const char* file;
    const char* title;
    double (*get)(const MetricsSummary&);
  };
  const ChartSpec charts[] = {
      {"pp_reduction.svg", "Ping-pong reduction %",
       [](const MetricsSummary& s) { return s.reductions.pp_reduction_pct.value_or(0.0); }},
      {"pp_f1.svg", "Ping-pong detection F1 %",
       [](const MetricsSummary& s) { return s.detection.f1_pct; }},
      {"ho_reduction.svg", "Handover reduction %",
       [](const MetricsSummary& s) { return s.reductions.ho_reduction_pct; }},
      {"tos_gain.svg", "Time-of-stay gain %",
       [](const MetricsSummary& s) { return s.reductions.tos_gain_pct; }},
  };
  for (const auto& ch : charts) {
    std::vector<double> vals;
    for (const auto& s : rows) vals.push_back(ch.get(s));
    emit(ch.file, detail::bar_chart_svg(ch.title, labels, vals));
  }
  return written;
}

}  // namespace hoseq::metrics
