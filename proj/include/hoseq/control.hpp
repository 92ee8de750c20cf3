#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"
#include "hoseq/features.hpp"
#include "hoseq/handover.hpp"
#include "hoseq/models.hpp"
#include "hoseq/trace.hpp"

namespace hoseq::ctrl {

class MissingPrediction : public Error {
 public:
  using Error::Error;
};
class TooFewBearings : public Error {
 public:
  using Error::Error;
};

struct ControlThresholds {
  double tos_th_s = 5.0;            // ToS_th: predicted-stay cutoff for "short"
  double rsrp_slope_th_db_s = 5.0;  // rsrp_th
  double snr_slope_th_db_s = 3.0;   // snr_th
  double osc_th_s = 2.0;            // osc_th, compared against y_p as written
  double theta_rsrp_dbm = -110.0;   // 3GPP serving-signal safety floor
  double theta_tos_s = 5.0;         // theta_tos
  double maway_deg = 45.0;          // moving-away turn threshold
};

// How the class-weight adjustment of the detection rule is applied.
//   RULE:    the Boolean rule stands alone (deployable, label-free).
//   GATED:   rule AND weighted classifier head, pp_prob * w1/(w0+w1) >= 0.5.
//   ORACLE:  rule AND w[p] >= 1 with the ground-truth label p. Non-causal
//            (uses the label at decision time); only for offline counting
//            studies, never for deployment.
enum class WeightMode { RULE, GATED, ORACLE };

struct DetectInput {
  double y_p_s = 0;            // predicted ToS, seconds
  double rsrp_slope_db_s = 0;  // last-step slopes, dB/s
  double snr_slope_db_s = 0;
  std::optional<bool> truth_pp;    // ground-truth p, when known
  std::optional<double> pp_prob;   // classifier head, when enabled
};

struct DetectFlags {
  bool short_stay = false;
  bool osc = false;
  bool is_pp = false;
};

struct DetectionResult {
  std::vector<DetectFlags> flags;
  std::size_t n_pp = 0;   // all positive detections
  std::size_t n_cor = 0;  // detections whose ground truth is p = 1
};

// Algorithm: short <- y_p < ToS_th; osc <- |rsrp_slope| > rsrp_th OR
// |snr_slope| > snr_th; is_pp <- short AND (osc OR y_p < osc_th), then the
// weight adjustment per WeightMode. All comparisons strict.
inline DetectFlags detect_one(const DetectInput& in, const ControlThresholds& th,
                              const feat::ClassWeights& w, WeightMode mode) {
  DetectFlags f;
  f.short_stay = in.y_p_s < th.tos_th_s;
  f.osc = std::abs(in.rsrp_slope_db_s) > th.rsrp_slope_th_db_s ||
          std::abs(in.snr_slope_db_s) > th.snr_slope_th_db_s;
  f.is_pp = f.short_stay && (f.osc || in.y_p_s < th.osc_th_s);
  if (f.is_pp && mode == WeightMode::GATED) {
    if (!in.pp_prob) throw MissingPrediction("GATED detection needs pp_prob");
    f.is_pp = *in.pp_prob * (w.w1 / (w.w0 + w.w1)) >= 0.5;
  } else if (f.is_pp && mode == WeightMode::ORACLE) {
    if (!in.truth_pp) throw MissingPrediction("ORACLE detection needs the ground-truth label");
    f.is_pp = w.of(*in.truth_pp) >= 1.0;
  }
  return f;
}

inline DetectionResult detect(std::span<const DetectInput> events,
                              const ControlThresholds& th, const feat::ClassWeights& w,
                              WeightMode mode = WeightMode::RULE) {
  DetectionResult r;
  r.flags.reserve(events.size());
  for (const auto& in : events) {
    const DetectFlags f = detect_one(in, th, w, mode);
    if (f.is_pp) {
      ++r.n_pp;
      if (in.truth_pp && *in.truth_pp) ++r.n_cor;
    }
    r.flags.push_back(f);
  }
  return r;
}

enum class Decision { EXECUTE, SUPPRESS };

struct AvoidInput {
  double y_p_s = 0;
  std::vector<double> bearings_deg;  // event window bearings, oldest first
  double serving_rsrp_dbm = 0;
  bool is_pp = false;
};

struct AvoidFlags {
  bool maway = false;
  bool safe = false;
  bool unnec = false;
  Decision decision = Decision::EXECUTE;
};

// Bearings wrap: 350 -> 10 is a 20 degree turn.
inline double circular_diff_deg(double a, double b) {
  const double d = std::abs(std::fmod(a, 360.0) - std::fmod(b, 360.0));
  return std::min(d, 360.0 - d);
}

// maway <- circ_diff(bearing[-1], bearing[-2]) > 45; safe <- RSRP > theta_rsrp;
// unnec <- (y_p < theta_tos OR maway) AND safe; suppress iff is_pp OR unnec.
// The safety floor is on the unnec path only, exactly as written.
inline AvoidFlags avoid_one(const AvoidInput& in, const ControlThresholds& th) {
  if (in.bearings_deg.size() < 2)
    throw TooFewBearings("avoid needs >= 2 bearing samples");
  AvoidFlags f;
  const double last = in.bearings_deg[in.bearings_deg.size() - 1];
  const double prev = in.bearings_deg[in.bearings_deg.size() - 2];
  f.maway = circular_diff_deg(last, prev) > th.maway_deg;
  f.safe = in.serving_rsrp_dbm > th.theta_rsrp_dbm;
  f.unnec = (in.y_p_s < th.theta_tos_s || f.maway) && f.safe;
  f.decision = (in.is_pp || f.unnec) ? Decision::SUPPRESS : Decision::EXECUTE;
  return f;
}

struct AvoidanceResult {
  std::vector<AvoidFlags> flags;
  std::size_t n_avd = 0;    // suppressed handovers
  std::size_t n_maway = 0;  // moving-away detections
};

// ---------------------------------------------------------------------------
// counterfactual replay

struct DecisionRow {
  int index = 0;
  std::int64_t trigger_ts_ms = 0;
  int source = 0, target = 0;
  double y_p_s = 0;
  bool short_stay = false, osc = false, maway = false, safe = false, is_pp = false;
  Decision decision = Decision::EXECUTE;
  bool no_window = false;  // fail-open: not enough history to predict
};

struct ReplayResult {
  ho::HandoverLog log;  // executed and suppressed events, trigger order
  DetectionResult detection;
  AvoidanceResult avoidance;
  std::vector<DecisionRow> decisions;
};

// Runs the A3 state machine with the trained predictor in the loop. At every
// trigger expiry a causal window ending at the trigger sample is built and
// normalized with the training-fitted spec; the detection and avoidance
// rules then decide. SUPPRESS keeps the serving cell and disarms the
// triggering neighbor until its A3 condition breaks once (a fresh TTT must
// then elapse), which keeps one suppression per condition episode. Events
// without enough history fail open and execute, annotated no_window.
//
// n_cor needs ground truth, which a counterfactual trigger does not have;
// detections are matched against `baseline` by (trigger_ts, source, target)
// and only matched events contribute to n_cor.
inline ReplayResult replay_with_avoidance(
    const DriveTrace& trace, const ho::A3Params& a3, const nn::PredictorParams& model,
    const feat::FeatureSpec& spec, const ControlThresholds& th,
    const feat::ClassWeights& weights, const ho::HandoverLog& baseline,
    WeightMode mode = WeightMode::RULE) {
  if (trace.empty()) throw EmptyTrace("replay on empty trace");

  std::map<std::tuple<std::int64_t, int, int>, bool> baseline_pp;
  for (const auto& e : baseline.events)
    baseline_pp[{e.trigger_ts_ms, e.source_cell_id, e.target_cell_id}] = e.pp;

  ReplayResult out;
  out.log.trace_duration_s = trace.duration_s();

  const auto session_start = feat::session_starts(trace);

  // initial serving as in run_a3
  {
    const auto& r0 = trace.records.front();
    int best = r0.serving.cell_id;
    double best_rsrp = r0.serving.rsrp_dbm.value_or(-1e300);
    for (const auto& n : r0.neighbors) {
      const double v = n.rsrp_dbm.value_or(-1e300);
      if (v > best_rsrp || (v == best_rsrp && n.cell_id < best)) {
        best = n.cell_id;
        best_rsrp = v;
      }
    }
    out.log.initial_cell_id = best;
  }

  int serving = out.log.initial_cell_id;
  std::map<int, std::int64_t> hold_start;
  std::set<int> disarmed;  // suppressed neighbors, re-armed when the condition breaks
  std::int64_t last_exec_ts = trace.records.front().ts_ms;
  nn::Tape tape;

  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& rec = trace.records[i];
    const auto serving_rsrp = rec.rsrp_of(serving);
    if (!serving_rsrp) {
      hold_start.clear();
      continue;
    }

    std::vector<std::pair<double, int>> expired;
    auto consider = [&](const CellMeasurement& m) {
      if (m.cell_id == serving || !m.rsrp_dbm) return;
      if (*m.rsrp_dbm > *serving_rsrp + a3.hysteresis_db) {
        if (disarmed.count(m.cell_id)) return;
        auto [it, inserted] = hold_start.try_emplace(m.cell_id, rec.ts_ms);
        const std::int64_t held = rec.ts_ms - it->second + trace.sample_period_ms;
        if (held >= a3.ttt_ms) expired.emplace_back(*m.rsrp_dbm, m.cell_id);
      } else {
        hold_start.erase(m.cell_id);
        disarmed.erase(m.cell_id);
      }
    };
    consider(rec.serving);
    for (const auto& n : rec.neighbors) consider(n);
    for (auto it = hold_start.begin(); it != hold_start.end();) {
      if (!rec.rsrp_of(it->first))
        it = hold_start.erase(it);
      else
        ++it;
    }
    // an unmeasured cell also loses its disarm latch
    for (auto it = disarmed.begin(); it != disarmed.end();) {
      if (!rec.rsrp_of(*it))
        it = disarmed.erase(it);
      else
        ++it;
    }

    if (expired.empty()) continue;
    auto best = expired.front();
    for (const auto& e : expired)
      if (e.first > best.first || (e.first == best.first && e.second < best.second))
        best = e;
    const int target = best.second;

    DecisionRow row;
    row.index = static_cast<int>(out.log.events.size());
    row.trigger_ts_ms = rec.ts_ms;
    row.source = serving;
    row.target = target;

    const auto window =
        feat::build_window_at(trace, session_start, serving, i, last_exec_ts, spec);
    Decision decision = Decision::EXECUTE;
    if (!window) {
      row.no_window = true;  // fail-open
    } else {
      feat::SequenceWindow w = *window;
      feat::apply_minmax(spec, std::span<feat::SequenceWindow>(&w, 1));
      const nn::ForwardOut pred = nn::forward(model, w.features, tape);

      DetectInput din;
      din.y_p_s = pred.tos_seconds();
      din.rsrp_slope_db_s = window->rsrp_slope_last;
      din.snr_slope_db_s = window->snr_slope_last;
      din.pp_prob = pred.pp_prob();
      if (const auto it = baseline_pp.find({rec.ts_ms, serving, target});
          it != baseline_pp.end())
        din.truth_pp = it->second;
      // a diverged chain has no ground truth; the rule stands alone there
      const WeightMode event_mode =
          (mode == WeightMode::ORACLE && !din.truth_pp) ? WeightMode::RULE : mode;
      const DetectFlags df = detect_one(din, th, weights, event_mode);
      if (df.is_pp) {
        ++out.detection.n_pp;
        if (din.truth_pp && *din.truth_pp) ++out.detection.n_cor;
      }
      out.detection.flags.push_back(df);

      AvoidInput ain;
      ain.y_p_s = din.y_p_s;
      ain.bearings_deg = {window->bearing_prev_deg, window->bearing_last_deg};
      ain.serving_rsrp_dbm = window->serving_rsrp_dbm;
      ain.is_pp = df.is_pp;
      const AvoidFlags af = avoid_one(ain, th);
      out.avoidance.flags.push_back(af);
      if (af.maway) ++out.avoidance.n_maway;
      decision = af.decision;

      row.y_p_s = din.y_p_s;
      row.short_stay = df.short_stay;
      row.osc = df.osc;
      row.maway = af.maway;
      row.safe = af.safe;
      row.is_pp = df.is_pp;
    }
    row.decision = decision;
    out.decisions.push_back(row);

    ho::HandoverEvent ev;
    ev.index = row.index;
    ev.trigger_ts_ms = rec.ts_ms;
    ev.source_cell_id = serving;
    ev.target_cell_id = target;
    ev.executed = decision == Decision::EXECUTE;
    out.log.events.push_back(ev);

    if (decision == Decision::EXECUTE) {
      serving = target;
      hold_start.clear();
      disarmed.clear();
      last_exec_ts = rec.ts_ms;
    } else {
      ++out.avoidance.n_avd;
      disarmed.insert(target);
      hold_start.erase(target);
    }
  }

  out.log = ho::label_ping_pong(ho::compute_tos(std::move(out.log)), a3.t_pp_s);
  return out;
}

inline std::string decisions_to_csv(std::span<const DecisionRow> rows) {
  std::string out = "i,trigger_ts_ms,source,target,y_p,short,osc,maway,safe,is_pp,decision\n";
  for (const auto& r : rows) {
    out += csv::fmt(static_cast<std::int64_t>(r.index));
    out += ',';
    out += csv::fmt(r.trigger_ts_ms);
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(r.source));
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(r.target));
    out += ',';
    out += csv::fmt(r.y_p_s);
    out += ',';
    out += r.short_stay ? '1' : '0';
    out += ',';
    out += r.osc ? '1' : '0';
    out += ',';
    out += r.maway ? '1' : '0';
    out += ',';
    out += r.safe ? '1' : '0';
    out += ',';
    out += r.is_pp ? '1' : '0';
    out += ',';
    if (r.decision == Decision::SUPPRESS)
      out += "suppress";
    else
      out += r.no_window ? "execute(no_window)" : "execute";
    out += '\n';
  }
  return out;
}

}  // namespace hoseq::ctrl
