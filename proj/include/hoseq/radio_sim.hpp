#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "hoseq/error.hpp"
#include "hoseq/rng.hpp"
#include "hoseq/trace.hpp"

namespace hoseq::sim {

struct Cell {
  int cell_id = 0;
  double x_m = 0, y_m = 0;
  double tx_power_dbm = 30.0;
};

struct Waypoint {
  double x_m = 0, y_m = 0;
  double dwell_s = 0;
};

struct PathLoss {
  double pl0_db = 30.0;  // at d0
  double d0_m = 1.0;
  double exponent = 3.0;  // n in [1.5, 6]
};

struct Scenario {
  std::vector<Cell> cells;
  std::vector<Waypoint> trajectory;
  double ue_speed_mps = 1.5;
  int sample_period_ms = 1000;
  double shadowing_sigma_db = 4.0;
  double shadowing_corr_m = 20.0;
  double noise_floor_dbm = -120.0;
  PathLoss pathloss;
  Session session = Session::HTTP;
  Mobility mobility = Mobility::WALK;

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ULL;
    };
    auto feed_d = [&](double d) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(d));
      __builtin_memcpy(&bits, &d, sizeof(bits));
      feed(bits);
    };
    for (const auto& c : cells) {
      feed(static_cast<std::uint64_t>(c.cell_id));
      feed_d(c.x_m);
      feed_d(c.y_m);
      feed_d(c.tx_power_dbm);
    }
    for (const auto& w : trajectory) {
      feed_d(w.x_m);
      feed_d(w.y_m);
      feed_d(w.dwell_s);
    }
    feed_d(ue_speed_mps);
    feed(static_cast<std::uint64_t>(sample_period_ms));
    feed_d(shadowing_sigma_db);
    feed_d(shadowing_corr_m);
    feed_d(noise_floor_dbm);
    feed_d(pathloss.pl0_db);
    feed_d(pathloss.d0_m);
    feed_d(pathloss.exponent);
    return h;
  }
};

enum class Preset { GRID, CORRIDOR_OSCILLATION, STREET_CANYON };

inline std::optional<Preset> preset_from_string(std::string_view s) {
  if (s == "grid" || s == "GRID") return Preset::GRID;
  if (s == "corridor" || s == "CORRIDOR_OSCILLATION") return Preset::CORRIDOR_OSCILLATION;
  if (s == "street" || s == "STREET_CANYON") return Preset::STREET_CANYON;
  return std::nullopt;
}

// Deterministic scenario construction. CORRIDOR_OSCILLATION is the ping-pong
// pathology: two cells at the ends of a 200 m corridor and a shuttle that
// reverses around their midline. Leg depth is bimodal (shallow legs flip
// back within the ping-pong window, deep legs dwell), and depths arrive in
// runs so the previous stay predicts the next one.
inline Scenario generate_scenario(Preset preset, std::uint64_t seed) {
  Rng rng(seed, 0x5ce7a210u ^ static_cast<std::uint64_t>(preset));
  Scenario sc;
  switch (preset) {
    case Preset::GRID: {
      sc.session = Session::HTTP;
      sc.mobility = Mobility::WALK;
      sc.ue_speed_mps = 1.5;
      sc.sample_period_ms = 500;
      sc.shadowing_sigma_db = 4.0;
      sc.shadowing_corr_m = 20.0;
      int id = 1;
      for (int gy = 0; gy < 3; ++gy)
        for (int gx = 0; gx < 3; ++gx)
          sc.cells.push_back({id++, gx * 180.0 + rng.uniform(-8.0, 8.0),
                              gy * 180.0 + rng.uniform(-8.0, 8.0), 30.0});
      sc.trajectory = {{20, 20, 0}, {340, 20, 5}, {340, 340, 5}, {20, 340, 0}};
      break;
    }
    case Preset::CORRIDOR_OSCILLATION: {
      sc.session = Session::FTP;  // re-labelled in thirds when sampling
      sc.mobility = Mobility::SHUTTLE;
      sc.ue_speed_mps = 12.0;
      sc.sample_period_ms = 200;
      sc.shadowing_sigma_db = 1.0;
      sc.shadowing_corr_m = 25.0;
      sc.cells = {{1, 0.0, 0.0, 30.0}, {2, 200.0, 0.0, 30.0}};
      const double mid = 100.0;
      sc.trajectory.push_back({mid - 70.0, 0.0, 0.0});
      bool deep_run = true;
      double side = 1.0;
      const int total_legs = 512;
      int legs = 0;
      while (legs < total_legs) {
        const int run_len = static_cast<int>(rng.uniform_int(8, 16));
        for (int i = 0; i < run_len && legs < total_legs; ++i, ++legs) {
          const double depth =
              deep_run ? rng.uniform(62.0, 82.0) : rng.uniform(19.0, 24.0);
          sc.trajectory.push_back({mid + side * depth, 0.0, 0.0});
          side = -side;
        }
        deep_run = !deep_run;
      }
      break;
    }
    case Preset::STREET_CANYON: {
      sc.session = Session::VIDEO;
      sc.mobility = Mobility::BRT;
      sc.ue_speed_mps = 10.0;
      sc.sample_period_ms = 200;
      sc.shadowing_sigma_db = 3.0;
      sc.shadowing_corr_m = 20.0;
      for (int k = 0; k < 6; ++k)
        sc.cells.push_back({k + 1, (k % 2 == 0 ? -18.0 : 18.0) + rng.uniform(-2.0, 2.0),
                            k * 150.0 + rng.uniform(-5.0, 5.0), 30.0});
      sc.trajectory = {{0, -40, 0}, {0, 820, 0}};
      break;
    }
  }
  return sc;
}

// Log-distance mean with spatially correlated shadowing per cell.
// RSRP = tx - [pl0 + 10 n log10(d/d0)] - shadow; distance floored at 1 m.
inline double mean_rsrp_dbm(const Cell& cell, const PathLoss& pl, double x, double y) {
  const double dx = x - cell.x_m, dy = y - cell.y_m;
  const double d = std::max(1.0, std::sqrt(dx * dx + dy * dy));
  return cell.tx_power_dbm - (pl.pl0_db + 10.0 * pl.exponent * std::log10(d / pl.d0_m));
}

namespace detail {

struct PathSampler {
  const std::vector<Waypoint>& wp;
  double speed;
  std::size_t leg = 0;      // current segment index (leg -> leg+1)
  double leg_pos = 0;       // metres into the segment
  double dwell_left = 0;    // seconds left to dwell at wp[leg]

  explicit PathSampler(const std::vector<Waypoint>& w, double v) : wp(w), speed(v) {
    dwell_left = wp.empty() ? 0 : wp[0].dwell_s;
  }

  bool done() const { return leg + 1 >= wp.size() && dwell_left <= 0; }

  // Advances dt seconds; returns the new position.
  std::pair<double, double> advance(double dt) {
    while (dt > 0 && !done()) {
      if (dwell_left > 0) {
        const double t = std::min(dwell_left, dt);
        dwell_left -= t;
        dt -= t;
        continue;
      }
      const auto& a = wp[leg];
      const auto& b = wp[leg + 1];
      const double len = std::hypot(b.x_m - a.x_m, b.y_m - a.y_m);
      const double remain = len - leg_pos;
      const double step = speed * dt;
      if (step < remain || len <= 0) {
        leg_pos += step;
        dt = 0;
      } else {
        dt -= remain / speed;
        ++leg;
        leg_pos = 0;
        dwell_left = wp[leg].dwell_s;
        if (leg + 1 >= wp.size()) break;
      }
    }
    return position();
  }

  std::pair<double, double> position() const {
    if (wp.empty()) return {0, 0};
    if (leg + 1 >= wp.size()) return {wp.back().x_m, wp.back().y_m};
    const auto& a = wp[leg];
    const auto& b = wp[leg + 1];
    const double len = std::hypot(b.x_m - a.x_m, b.y_m - a.y_m);
    const double t = len > 0 ? leg_pos / len : 0;
    return {a.x_m + t * (b.x_m - a.x_m), a.y_m + t * (b.y_m - a.y_m)};
  }
};

inline double lin_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double dbm_from_mw(double mw) { return 10.0 * std::log10(mw); }

}  // namespace detail

// Samples a DriveTrace from a scenario. Deterministic for a given
// (scenario, seed): each cell owns a shadowing stream seeded from
// (seed, scenario hash, cell id) with exponential spatial correlation.
// Radio values are clamped into the 3GPP ranges before the trace is
// returned, so the output always validates.
inline DriveTrace sample_trace(const Scenario& scenario, std::uint64_t seed) {
  if (scenario.cells.size() < 2 || scenario.trajectory.size() < 2)
    throw Error("scenario needs >= 2 cells and >= 2 waypoints");
  if (scenario.sample_period_ms <= 0) throw Error("sample_period_ms must be > 0");
  if (scenario.pathloss.exponent < 1.5 || scenario.pathloss.exponent > 6.0)
    throw Error("pathloss exponent must be in [1.5, 6]");
  if (scenario.shadowing_sigma_db < 0 || scenario.shadowing_corr_m < 0)
    throw Error("shadowing parameters must be >= 0");

  const std::uint64_t sc_hash = scenario.hash();
  std::vector<Rng> shadow_rng;
  std::vector<double> shadow;
  shadow_rng.reserve(scenario.cells.size());
  for (const auto& c : scenario.cells) {
    shadow_rng.emplace_back(mix64(seed, sc_hash), static_cast<std::uint64_t>(c.cell_id));
    shadow.push_back(0.0);
  }
  for (std::size_t c = 0; c < shadow.size(); ++c)
    shadow[c] = shadow_rng[c].gauss(0.0, scenario.shadowing_sigma_db);

  detail::PathSampler path(scenario.trajectory, scenario.ue_speed_mps);
  const double dt = scenario.sample_period_ms / 1000.0;

  // Total path length bounds the sample count.
  double total_len = 0;
  double total_dwell = scenario.trajectory[0].dwell_s;
  for (std::size_t i = 1; i < scenario.trajectory.size(); ++i) {
    total_len += std::hypot(scenario.trajectory[i].x_m - scenario.trajectory[i - 1].x_m,
                            scenario.trajectory[i].y_m - scenario.trajectory[i - 1].y_m);
    total_dwell += scenario.trajectory[i].dwell_s;
  }
  const std::size_t n_samples = static_cast<std::size_t>(
      std::floor((total_len / scenario.ue_speed_mps + total_dwell) / dt)) + 1;

  DriveTrace trace;
  trace.sample_period_ms = scenario.sample_period_ms;
  trace.records.reserve(n_samples);

  double px = scenario.trajectory[0].x_m, py = scenario.trajectory[0].y_m;
  double bearing = 0.0;
  // local ENU -> degrees anchor for the lat/lon columns
  const double lat0 = 3.07, lon0 = 101.60;
  const double m_per_deg_lat = 111320.0;
  const double m_per_deg_lon = m_per_deg_lat * std::cos(lat0 * 3.14159265358979323846 / 180.0);

  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::int64_t ts = static_cast<std::int64_t>(i) * scenario.sample_period_ms;
    const auto [x, y] = i == 0 ? path.position() : path.advance(dt);
    const double step = std::hypot(x - px, y - py);
    if (step > 1e-9) {
      bearing = std::fmod(std::atan2(x - px, y - py) * 180.0 / 3.14159265358979323846 + 360.0, 360.0);
      // correlated shadowing evolves with distance travelled
      const double rho = std::exp(-step / std::max(1e-9, scenario.shadowing_corr_m));
      for (std::size_t c = 0; c < shadow.size(); ++c)
        shadow[c] = rho * shadow[c] +
                    std::sqrt(std::max(0.0, 1.0 - rho * rho)) *
                        shadow_rng[c].gauss(0.0, scenario.shadowing_sigma_db);
    }
    const double speed = step / dt;

    std::vector<std::pair<double, std::size_t>> by_rsrp;  // (rsrp, cell index)
    for (std::size_t c = 0; c < scenario.cells.size(); ++c) {
      const double rsrp = mean_rsrp_dbm(scenario.cells[c], scenario.pathloss, x, y) - shadow[c];
      by_rsrp.emplace_back(rsrp, c);
    }
    std::sort(by_rsrp.begin(), by_rsrp.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });

    const double noise_mw = detail::lin_mw(scenario.noise_floor_dbm);
    double total_mw = noise_mw;
    for (const auto& [rsrp, c] : by_rsrp) total_mw += detail::lin_mw(rsrp);

    auto measure = [&](std::size_t rank) {
      const auto [rsrp, c] = by_rsrp[rank];
      CellMeasurement m;
      m.cell_id = scenario.cells[c].cell_id;
      // interference-limited SNR proxy: everything else plus the noise floor
      const double interf_mw = total_mw - detail::lin_mw(rsrp);
      const double snr = rsrp - detail::dbm_from_mw(interf_mw);
      const double rsrq = rsrp - detail::dbm_from_mw(total_mw);
      m.rsrp_dbm = std::clamp(rsrp, kRsrpMin, kRsrpMax);
      m.snr_db = std::clamp(snr, kSnrMin, kSnrMax);
      m.rsrq_db = std::clamp(rsrq, kRsrqMin, kRsrqMax);
      return m;
    };

    MeasurementRecord r;
    r.ts_ms = ts;
    r.op = Operator::A;
    r.lat_deg = lat0 + y / m_per_deg_lat;
    r.lon_deg = lon0 + x / m_per_deg_lon;
    r.speed_mps = speed;
    r.bearing_deg = bearing;
    // sessions rotate in one-minute blocks so session-level elapsed time has
    // structure and every part of the trace sees every session type
    const std::size_t block = static_cast<std::size_t>(ts / 60000);
    r.session = static_cast<Session>((static_cast<int>(scenario.session) + block) % 3);
    r.mobility = scenario.mobility;
    r.serving = measure(0);
    const std::size_t n_neigh = std::min<std::size_t>(kMaxNeighbors, by_rsrp.size() - 1);
    for (std::size_t k = 1; k <= n_neigh; ++k) r.neighbors.push_back(measure(k));

    trace.records.push_back(std::move(r));
    px = x;
    py = y;
  }
  return trace;
}

}  // namespace hoseq::sim
