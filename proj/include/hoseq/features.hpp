#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"
#include "hoseq/handover.hpp"
#include "hoseq/linalg.hpp"
#include "hoseq/trace.hpp"

namespace hoseq::feat {

class TooShort : public Error {
 public:
  using Error::Error;
};
class EmptyTrainSet : public Error {
 public:
  using Error::Error;
};
class SingleClass : public Error {
 public:
  using Error::Error;
};
class TooFewWindows : public Error {
 public:
  using Error::Error;
};

enum class FeatureMode { RSRP_ONLY, ALL };

inline const char* to_string(FeatureMode m) {
  return m == FeatureMode::RSRP_ONLY ? "rsrp" : "all";
}

// Column layout of a window's feature matrix.
inline std::vector<std::string> feature_names(FeatureMode mode) {
  if (mode == FeatureMode::RSRP_ONLY) return {"serving_rsrp", "best_neighbor_rsrp"};
  return {"serving_rsrp", "best_neighbor_rsrp", "serving_snr",  "rsrp_slope",
          "snr_slope",    "elapsed_session_s",  "time_on_serving_s",
          "bearing_sin",  "bearing_cos",        "speed_mps",
          "session_ftp",  "session_video",      "session_http",
          "mobility_walk", "mobility_shuttle",  "mobility_brt"};
}

inline int feature_count(FeatureMode mode) {
  return mode == FeatureMode::RSRP_ONLY ? 2 : 16;
}

// One training/inference sample: L feature rows ending at the handover
// trigger sample. Raw trigger-side quantities ride along for the control
// rules, which operate on unnormalized physics.
struct SequenceWindow {
  la::Mat features;  // L x F, time-ordered, last row at the trigger
  std::vector<std::int64_t> row_ts_ms;
  double target_tos_s = 0;
  bool target_pp = false;
  int event_index = -1;
  std::int64_t trigger_ts_ms = 0;

  double bearing_last_deg = 0;
  double bearing_prev_deg = 0;
  double rsrp_slope_last = 0;   // dB/s at the trigger step
  double snr_slope_last = 0;
  double serving_rsrp_dbm = 0;  // at the trigger sample
};

struct MinMax {
  double lo = 0, hi = 0;
};

struct FeatureSpec {
  FeatureMode mode = FeatureMode::ALL;
  int seq_len = 10;
  std::vector<MinMax> ranges;  // fitted on the training split; empty before fit
};

struct ClassWeights {
  double w0 = 1.0;  // negative class
  double w1 = 1.0;  // positive class
  double of(bool positive) const { return positive ? w1 : w0; }
};

// slope[t] = (series[t] - series[t-1]) / dt_s
inline std::vector<double> slope(std::span<const double> series, double dt_s) {
  if (series.size() < 2) throw TooShort("slope needs >= 2 samples");
  if (!(dt_s > 0)) throw TooShort("slope needs dt_s > 0");
  std::vector<double> out;
  out.reserve(series.size() - 1);
  for (std::size_t t = 1; t < series.size(); ++t)
    out.push_back((series[t] - series[t - 1]) / dt_s);
  return out;
}

namespace detail {

// Serving-relative radio view of one record; cells drop out of the
// measured top-5, so fall back to the range floor when unmeasured.
inline double rsrp_or_floor(const MeasurementRecord& r, int cell) {
  return r.rsrp_of(cell).value_or(kRsrpMin);
}
inline double snr_or_floor(const MeasurementRecord& r, int cell) {
  return r.snr_of(cell).value_or(kSnrMin);
}
inline double best_other_rsrp(const MeasurementRecord& r, int cell) {
  double best = kRsrpMin;
  auto see = [&](const CellMeasurement& m) {
    if (m.cell_id != cell && m.rsrp_dbm) best = std::max(best, *m.rsrp_dbm);
  };
  see(r.serving);
  for (const auto& n : r.neighbors) see(n);
  return best;
}

}  // namespace detail

// ts of the most recent session boundary at each sample; the trace start
// counts as one.
inline std::vector<std::int64_t> session_starts(const DriveTrace& trace) {
  std::vector<std::int64_t> start(trace.size());
  std::int64_t cur = trace.records.empty() ? 0 : trace.records.front().ts_ms;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i > 0 && trace.records[i].session != trace.records[i - 1].session)
      cur = trace.records[i].ts_ms;
    start[i] = cur;
  }
  return start;
}

// Builds the window whose last row sits at trace sample `trigger_idx`, with
// `serving` as the cell the UE is leaving and `last_ho_ts` the previous
// executed handover (or trace start). Returns nothing when fewer than
// seq_len samples of history exist. Shared between training-set
// construction and counterfactual replay so both sides see identical
// features.
inline std::optional<SequenceWindow> build_window_at(
    const DriveTrace& trace, const std::vector<std::int64_t>& session_start,
    int serving, std::size_t trigger_idx, std::int64_t last_ho_ts,
    const FeatureSpec& spec) {
  const int L = spec.seq_len;
  if (trigger_idx + 1 < static_cast<std::size_t>(L)) return std::nullopt;

  const int F = feature_count(spec.mode);
  SequenceWindow w;
  w.features = la::Mat(L, F);
  w.row_ts_ms.resize(L);
  w.trigger_ts_ms = trace.records[trigger_idx].ts_ms;

  const double dt = trace.sample_period_ms / 1000.0;
  for (int r = 0; r < L; ++r) {
    const std::size_t i = trigger_idx - L + 1 + r;
    const auto& rec = trace.records[i];
    w.row_ts_ms[r] = rec.ts_ms;

    const double serv_rsrp = detail::rsrp_or_floor(rec, serving);
    const double best_rsrp = detail::best_other_rsrp(rec, serving);
    double* row = w.features.row(r);
    row[0] = serv_rsrp;
    row[1] = best_rsrp;
    double rsrp_slope = 0, snr_slope = 0;
    if (i > 0) {
      const auto& prev = trace.records[i - 1];
      rsrp_slope = (serv_rsrp - detail::rsrp_or_floor(prev, serving)) / dt;
      snr_slope =
          (detail::snr_or_floor(rec, serving) - detail::snr_or_floor(prev, serving)) / dt;
    }
    if (spec.mode == FeatureMode::ALL) {
      const double bearing = rec.bearing_deg.value_or(0.0);
      const double rad = bearing * 3.14159265358979323846 / 180.0;
      row[2] = detail::snr_or_floor(rec, serving);
      row[3] = rsrp_slope;
      row[4] = snr_slope;
      row[5] = static_cast<double>(rec.ts_ms - session_start[i]) / 1000.0;
      row[6] = static_cast<double>(rec.ts_ms - last_ho_ts) / 1000.0;
      row[7] = std::sin(rad);
      row[8] = std::cos(rad);
      row[9] = rec.speed_mps.value_or(0.0);
      const auto onehot = encode_categoricals(rec);
      for (int j = 0; j < 6; ++j) row[10 + j] = onehot[j];
    }
    if (r == L - 1) {
      w.rsrp_slope_last = rsrp_slope;
      w.snr_slope_last = snr_slope;
      w.serving_rsrp_dbm = serv_rsrp;
      w.bearing_last_deg = rec.bearing_deg.value_or(0.0);
      const auto& prev = trace.records[i > 0 ? i - 1 : 0];
      w.bearing_prev_deg = prev.bearing_deg.value_or(0.0);
    }
  }
  return w;
}

struct WindowSet {
  std::vector<SequenceWindow> windows;
  std::size_t skipped_short = 0;     // events without seq_len samples of history
  std::size_t skipped_censored = 0;  // events with no ToS label
};

// One window per labelled handover event. Features are computed relative to
// the event's source cell (the serving cell on approach), causally: no row
// may sit after the trigger sample.
inline WindowSet build_windows(const DriveTrace& trace, const ho::HandoverLog& log,
                               const FeatureSpec& spec) {
  WindowSet out;
  const auto session_start = session_starts(trace);

  std::map<std::int64_t, std::size_t> idx_by_ts;
  for (std::size_t i = 0; i < trace.size(); ++i) idx_by_ts[trace.records[i].ts_ms] = i;

  std::int64_t last_exec_ts = trace.records.empty() ? 0 : trace.records.front().ts_ms;
  for (const auto& ev : log.events) {
    if (!ev.executed) continue;
    const auto it = idx_by_ts.find(ev.trigger_ts_ms);
    if (it == idx_by_ts.end()) continue;
    if (!ev.tos_s) {
      ++out.skipped_censored;
      last_exec_ts = ev.trigger_ts_ms;
      continue;
    }
    auto w = build_window_at(trace, session_start, ev.source_cell_id, it->second,
                             last_exec_ts, spec);
    if (!w) {
      ++out.skipped_short;
    } else {
      w->target_tos_s = *ev.tos_s;
      w->target_pp = ev.pp;
      w->event_index = ev.index;
      out.windows.push_back(std::move(*w));
    }
    last_exec_ts = ev.trigger_ts_ms;
  }
  return out;
}

// Min-max fitted on the training split only.
inline FeatureSpec fit_minmax(std::span<const SequenceWindow> train, FeatureMode mode,
                              int seq_len) {
  if (train.empty()) throw EmptyTrainSet("fit_minmax on empty training set");
  const int F = train.front().features.cols;
  FeatureSpec spec;
  spec.mode = mode;
  spec.seq_len = seq_len;
  spec.ranges.assign(F, {1e300, -1e300});
  for (const auto& w : train)
    for (int r = 0; r < w.features.rows; ++r)
      for (int j = 0; j < F; ++j) {
        spec.ranges[j].lo = std::min(spec.ranges[j].lo, w.features(r, j));
        spec.ranges[j].hi = std::max(spec.ranges[j].hi, w.features(r, j));
      }
  return spec;
}

// x' = (x - min) / (max - min), clamped to [0, 1]; constant features map
// to 0 everywhere.
inline void apply_minmax(const FeatureSpec& spec, std::span<SequenceWindow> windows) {
  if (spec.ranges.empty()) throw EmptyTrainSet("apply_minmax before fit");
  for (auto& w : windows)
    for (int r = 0; r < w.features.rows; ++r)
      for (int j = 0; j < w.features.cols; ++j) {
        const auto& mm = spec.ranges[j];
        double& x = w.features(r, j);
        x = mm.hi > mm.lo ? std::clamp((x - mm.lo) / (mm.hi - mm.lo), 0.0, 1.0) : 0.0;
      }
}

// Inverse-frequency weights, w_c = N / (2 N_c).
inline ClassWeights class_weights(const std::vector<bool>& labels) {
  std::size_t pos = 0;
  for (const bool b : labels) pos += b;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw SingleClass("class_weights needs both classes");
  const double n = static_cast<double>(labels.size());
  return {n / (2.0 * static_cast<double>(neg)), n / (2.0 * static_cast<double>(pos))};
}

struct SplitRatios {
  double train = 0.70, val = 0.15, test = 0.15;
};

struct Split {
  std::vector<SequenceWindow> train, val, test;
};

// Contiguous time-ordered partitions: floor(train), floor(val), remainder.
inline Split chronological_split(std::vector<SequenceWindow> windows,
                                 const SplitRatios& ratios = {}) {
  if (windows.size() < 10) throw TooFewWindows("need >= 10 windows to split");
  const std::size_t n = windows.size();
  const auto n_train = static_cast<std::size_t>(std::floor(n * ratios.train));
  const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.val));
  Split s;
  s.train.assign(std::make_move_iterator(windows.begin()),
                 std::make_move_iterator(windows.begin() + n_train));
  s.val.assign(std::make_move_iterator(windows.begin() + n_train),
               std::make_move_iterator(windows.begin() + n_train + n_val));
  s.test.assign(std::make_move_iterator(windows.begin() + n_train + n_val),
                std::make_move_iterator(windows.end()));
  return s;
}

inline std::string windows_to_csv(std::span<const SequenceWindow> windows, FeatureMode mode) {
  std::string out = "window,row,ts_ms";
  for (const auto& n : feature_names(mode)) {
    out += ',';
    out += n;
  }
  out += ",target_tos_s,target_pp\n";
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& win = windows[w];
    for (int r = 0; r < win.features.rows; ++r) {
      out += csv::fmt(static_cast<std::int64_t>(w));
      out += ',';
      out += csv::fmt(static_cast<std::int64_t>(r));
      out += ',';
      out += csv::fmt(win.row_ts_ms[r]);
      for (int j = 0; j < win.features.cols; ++j) {
        out += ',';
        out += csv::fmt(win.features(r, j));
      }
      out += ',';
      out += csv::fmt(win.target_tos_s);
      out += ',';
      out += win.target_pp ? '1' : '0';
      out += '\n';
    }
  }
  return out;
}

}  // namespace hoseq::feat
