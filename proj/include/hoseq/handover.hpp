#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"
#include "hoseq/trace.hpp"

namespace hoseq::ho {

struct A3Params {
  double hysteresis_db = 3.0;
  int ttt_ms = 320;
  double t_pp_s = 5.0;  // ping-pong window
};

struct HandoverEvent {
  int index = 0;
  std::int64_t trigger_ts_ms = 0;
  int source_cell_id = 0;
  int target_cell_id = 0;
  std::optional<double> tos_s;  // missing when censored by trace end
  bool pp = false;
  bool executed = true;
};

struct HandoverLog {
  int initial_cell_id = 0;
  std::vector<HandoverEvent> events;
  double trace_duration_s = 0;

  std::size_t executed_count() const {
    std::size_t n = 0;
    for (const auto& e : events) n += e.executed;
    return n;
  }
  std::size_t suppressed_count() const { return events.size() - executed_count(); }
};

// 3GPP Event-A3 baseline. The condition
//     neighbor_rsrp > serving_rsrp + hysteresis_db
// must hold continuously before the handover executes at the expiry sample.
// Each observation certifies one sample period, so a condition first seen at
// ts0 and still holding at ts expires when ts - ts0 + sample_period >= ttt_ms
// (a TTT of zero fires at the first holding sample). Timers are per
// neighbor and reset whenever the condition breaks for even one sample or
// the cell goes unmeasured; after a handover every timer resets. When two
// neighbors expire at the same sample the higher RSRP wins, ties to the
// lower cell_id. A sample where the serving cell is unmeasured evaluates no
// conditions and clears all timers.
inline HandoverLog run_a3(const DriveTrace& trace, const A3Params& params) {
  if (trace.empty()) throw EmptyTrace("run_a3 on empty trace");

  HandoverLog log;
  log.trace_duration_s = trace.duration_s();

  // initial serving: strongest measured cell at t=0
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
    log.initial_cell_id = best;
  }

  int serving = log.initial_cell_id;
  std::map<int, std::int64_t> hold_start;  // cell -> ts of first holding sample

  for (const auto& rec : trace.records) {
    const auto serving_rsrp = rec.rsrp_of(serving);
    if (!serving_rsrp) {
      hold_start.clear();
      continue;
    }

    std::vector<std::pair<double, int>> expired;  // (rsrp, cell)
    auto consider = [&](const CellMeasurement& m) {
      if (m.cell_id == serving || !m.rsrp_dbm) return;
      if (*m.rsrp_dbm > *serving_rsrp + params.hysteresis_db) {
        auto [it, inserted] = hold_start.try_emplace(m.cell_id, rec.ts_ms);
        const std::int64_t held =
            rec.ts_ms - it->second + trace.sample_period_ms;
        if (held >= params.ttt_ms) expired.emplace_back(*m.rsrp_dbm, m.cell_id);
      } else {
        hold_start.erase(m.cell_id);
      }
    };
    consider(rec.serving);
    for (const auto& n : rec.neighbors) consider(n);

    // cells not measured this sample lose their timers
    for (auto it = hold_start.begin(); it != hold_start.end();) {
      if (!rec.rsrp_of(it->first))
        it = hold_start.erase(it);
      else
        ++it;
    }

    if (!expired.empty()) {
      auto best = expired.front();
      for (const auto& e : expired)
        if (e.first > best.first || (e.first == best.first && e.second < best.second))
          best = e;
      HandoverEvent ev;
      ev.index = static_cast<int>(log.events.size());
      ev.trigger_ts_ms = rec.ts_ms;
      ev.source_cell_id = serving;
      ev.target_cell_id = best.second;
      log.events.push_back(ev);
      serving = best.second;
      hold_start.clear();
    }
  }
  return log;
}

// tos_s of event k = seconds until the next executed event; the last
// executed event's stay is censored by the trace end.
inline HandoverLog compute_tos(HandoverLog log) {
  for (std::size_t k = 0; k < log.events.size(); ++k) {
    log.events[k].tos_s.reset();
    for (std::size_t j = k + 1; j < log.events.size(); ++j) {
      if (log.events[j].executed) {
        log.events[k].tos_s =
            static_cast<double>(log.events[j].trigger_ts_ms - log.events[k].trigger_ts_ms) / 1000.0;
        break;
      }
    }
  }
  return log;
}

// Event k (A -> B) is a ping-pong iff the next executed transition returns
// to A and k's stay was shorter than t_pp_s. The flag attaches to the
// outbound handover. Only the executed chain can ping-pong; suppressed
// events keep p = false.
inline HandoverLog label_ping_pong(HandoverLog log, double t_pp_s) {
  std::vector<std::size_t> exec;
  for (std::size_t k = 0; k < log.events.size(); ++k) {
    log.events[k].pp = false;
    if (log.events[k].executed) exec.push_back(k);
  }
  for (std::size_t i = 0; i + 1 < exec.size(); ++i) {
    auto& cur = log.events[exec[i]];
    const auto& next = log.events[exec[i + 1]];
    if (next.target_cell_id == cur.source_cell_id && cur.tos_s && *cur.tos_s < t_pp_s)
      cur.pp = true;
  }
  return log;
}

inline HandoverLog label_log(const DriveTrace& trace, const A3Params& params) {
  return label_ping_pong(compute_tos(run_a3(trace, params)), params.t_pp_s);
}

inline std::string log_to_csv(const HandoverLog& log) {
  std::string out = "i,trigger_ts_ms,source,target,tos_s,pp,executed\n";
  for (const auto& e : log.events) {
    out += csv::fmt(static_cast<std::int64_t>(e.index));
    out += ',';
    out += csv::fmt(e.trigger_ts_ms);
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(e.source_cell_id));
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(e.target_cell_id));
    out += ',';
    if (e.tos_s) out += csv::fmt(*e.tos_s);
    out += ',';
    out += e.pp ? '1' : '0';
    out += ',';
    out += e.executed ? '1' : '0';
    out += '\n';
  }
  return out;
}

}  // namespace hoseq::ho
