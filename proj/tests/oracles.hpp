#pragma once

// Independent reference implementations used only by tests. These follow the
// stated semantics through different computation paths than the library
// (backward scans instead of incremental timers, pairwise scans instead of
// chained lookups) so agreement is meaningful.

#include <algorithm>
#include <optional>
#include <vector>

#include "hoseq/handover.hpp"
#include "hoseq/rng.hpp"
#include "hoseq/trace.hpp"

namespace oracle {

using namespace hoseq;

// Brute-force Event-A3 reference: serving evolution is simulated, but the
// hold duration of every (sample, cell) pair is recomputed from scratch by
// scanning backwards for the uninterrupted condition streak.
inline ho::HandoverLog reference_a3(const DriveTrace& trace, const ho::A3Params& p) {
  ho::HandoverLog log;
  log.trace_duration_s = trace.duration_s();
  const auto& recs = trace.records;

  auto cond = [&](std::size_t i, int cell, int serving) {
    const auto cr = recs[i].rsrp_of(cell);
    const auto sr = recs[i].rsrp_of(serving);
    return cr && sr && *cr > *sr + p.hysteresis_db;
  };

  {
    const auto& r0 = recs.front();
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
  // streaks cannot extend to or before this sample (handover / reset point)
  std::ptrdiff_t barrier = -1;

  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (!recs[i].rsrp_of(serving)) {
      barrier = static_cast<std::ptrdiff_t>(i);
      continue;
    }
    std::vector<std::pair<double, int>> winners;
    auto try_cell = [&](const CellMeasurement& m) {
      if (m.cell_id == serving || !m.rsrp_dbm) return;
      if (!cond(i, m.cell_id, serving)) return;
      std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i);
      while (j - 1 > barrier && cond(static_cast<std::size_t>(j - 1), m.cell_id, serving))
        --j;
      const std::int64_t held =
          recs[i].ts_ms - recs[static_cast<std::size_t>(j)].ts_ms + trace.sample_period_ms;
      if (held >= p.ttt_ms) winners.emplace_back(*m.rsrp_dbm, m.cell_id);
    };
    try_cell(recs[i].serving);
    for (const auto& n : recs[i].neighbors) try_cell(n);

    if (winners.empty()) continue;
    std::sort(winners.begin(), winners.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    ho::HandoverEvent ev;
    ev.index = static_cast<int>(log.events.size());
    ev.trigger_ts_ms = recs[i].ts_ms;
    ev.source_cell_id = serving;
    ev.target_cell_id = winners.front().second;
    log.events.push_back(ev);
    serving = winners.front().second;
    barrier = static_cast<std::ptrdiff_t>(i);
  }
  return log;
}

// O(n^2) pairwise ping-pong oracle: event k (A -> B) is a ping-pong iff some
// executed event j > k with no executed event between them returns to A
// within the window.
inline std::vector<bool> reference_ping_pong(const ho::HandoverLog& log, double t_pp_s) {
  const auto& ev = log.events;
  std::vector<bool> pp(ev.size(), false);
  for (std::size_t k = 0; k < ev.size(); ++k) {
    if (!ev[k].executed) continue;
    for (std::size_t j = k + 1; j < ev.size(); ++j) {
      if (!ev[j].executed) continue;
      bool intermediate = false;
      for (std::size_t m = k + 1; m < j; ++m)
        if (ev[m].executed) intermediate = true;
      if (!intermediate) {
        const double tos =
            static_cast<double>(ev[j].trigger_ts_ms - ev[k].trigger_ts_ms) / 1000.0;
        pp[k] = ev[j].target_cell_id == ev[k].source_cell_id && tos < t_pp_s;
      }
      if (!intermediate) break;
    }
  }
  return pp;
}

// Random-walk synthetic trace: K cells, the strongest five measured per
// sample, all radio values inside the 3GPP ranges.
inline DriveTrace random_trace(Rng& rng, int max_samples = 2000, int max_cells = 6) {
  const int n = static_cast<int>(rng.uniform_int(40, max_samples));
  const int n_cells = static_cast<int>(rng.uniform_int(2, max_cells));
  const int periods[3] = {200, 500, 1000};
  const int period = periods[rng.uniform_int(0, 2)];

  std::vector<double> rsrp(n_cells);
  for (auto& v : rsrp) v = rng.uniform(-120.0, -70.0);

  DriveTrace trace;
  trace.sample_period_ms = period;
  for (int i = 0; i < n; ++i) {
    for (auto& v : rsrp) v = std::clamp(v + rng.gauss(0.0, 2.0), kRsrpMin, kRsrpMax);
    std::vector<std::pair<double, int>> order;
    for (int c = 0; c < n_cells; ++c) order.emplace_back(rsrp[c], c + 1);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });

    MeasurementRecord r;
    r.ts_ms = static_cast<std::int64_t>(i) * period;
    r.op = Operator::A;
    r.lat_deg = 3.07;
    r.lon_deg = 101.6;
    r.speed_mps = rng.uniform(0.0, 20.0);
    r.bearing_deg = rng.uniform(0.0, 359.99);
    r.session = Session::FTP;
    r.mobility = Mobility::WALK;
    auto fill = [&](const std::pair<double, int>& e) {
      CellMeasurement m;
      m.cell_id = e.second;
      m.rsrp_dbm = e.first;
      m.rsrq_db = std::clamp(rng.uniform(-19.5, -3.0), kRsrqMin, kRsrqMax);
      m.snr_db = std::clamp(rng.uniform(-20.0, 30.0), kSnrMin, kSnrMax);
      return m;
    };
    r.serving = fill(order[0]);
    for (std::size_t k = 1; k < order.size() && k <= kMaxNeighbors; ++k)
      r.neighbors.push_back(fill(order[k]));
    trace.records.push_back(std::move(r));
  }
  return trace;
}

// Random handover log (for labelling tests): a chain of executed events over
// a few cells with random gaps, plus occasional suppressed events.
inline ho::HandoverLog random_log(Rng& rng) {
  ho::HandoverLog log;
  const int n_cells = static_cast<int>(rng.uniform_int(2, 5));
  const int n_events = static_cast<int>(rng.uniform_int(0, 40));
  int cur = 1;
  std::int64_t ts = 0;
  log.initial_cell_id = cur;
  for (int k = 0; k < n_events; ++k) {
    ts += rng.uniform_int(200, 12000);
    ho::HandoverEvent ev;
    ev.index = k;
    ev.trigger_ts_ms = ts;
    ev.source_cell_id = cur;
    ev.executed = rng.uniform() > 0.15;
    int target = cur;
    while (target == cur) target = static_cast<int>(rng.uniform_int(1, n_cells));
    ev.target_cell_id = target;
    if (ev.executed) cur = target;
    log.events.push_back(ev);
  }
  log.trace_duration_s = static_cast<double>(ts) / 1000.0 + 10.0;
  return log;
}

}  // namespace oracle
