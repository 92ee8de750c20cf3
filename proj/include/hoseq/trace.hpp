#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"

namespace hoseq {

// 3GPP measurement ranges used for validation and clamping.
inline constexpr double kRsrpMin = -140.0, kRsrpMax = -44.0;
inline constexpr double kRsrqMin = -19.5, kRsrqMax = -3.0;
inline constexpr double kSnrMin = -20.0, kSnrMax = 30.0;

inline constexpr int kMaxNeighbors = 4;

enum class Operator { A, B, C };
enum class Session { FTP, VIDEO, HTTP };
enum class Mobility { WALK, SHUTTLE, BRT };

inline const char* to_string(Operator o) {
  switch (o) {
    case Operator::A: return "A";
    case Operator::B: return "B";
    default: return "C";
  }
}
inline const char* to_string(Session s) {
  switch (s) {
    case Session::FTP: return "FTP";
    case Session::VIDEO: return "VIDEO";
    default: return "HTTP";
  }
}
inline const char* to_string(Mobility m) {
  switch (m) {
    case Mobility::WALK: return "WALK";
    case Mobility::SHUTTLE: return "SHUTTLE";
    default: return "BRT";
  }
}

// One cell's radio measurements. Fields are optional until missing-value
// repair has run.
struct CellMeasurement {
  int cell_id = 0;
  std::optional<double> rsrp_dbm;
  std::optional<double> rsrq_db;
  std::optional<double> snr_db;
};

struct MeasurementRecord {
  std::int64_t ts_ms = 0;
  Operator op = Operator::A;
  std::optional<double> lat_deg, lon_deg;
  std::optional<double> speed_mps;
  std::optional<double> bearing_deg;  // [0, 360), clockwise from north
  Session session = Session::FTP;
  Mobility mobility = Mobility::WALK;
  CellMeasurement serving;
  std::vector<CellMeasurement> neighbors;  // 0..4, strongest first by convention

  // cell_id -> rsrp over serving + neighbors; cells absent from the record
  // are simply not measured at this sample.
  std::optional<double> rsrp_of(int cell_id) const {
    if (serving.cell_id == cell_id) return serving.rsrp_dbm;
    for (const auto& n : neighbors)
      if (n.cell_id == cell_id) return n.rsrp_dbm;
    return std::nullopt;
  }
  std::optional<double> snr_of(int cell_id) const {
    if (serving.cell_id == cell_id) return serving.snr_db;
    for (const auto& n : neighbors)
      if (n.cell_id == cell_id) return n.snr_db;
    return std::nullopt;
  }
};

struct DriveTrace {
  std::vector<MeasurementRecord> records;
  int sample_period_ms = 1000;  // nominal spacing

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
  double duration_s() const {
    if (records.empty()) return 0.0;
    return static_cast<double>(records.back().ts_ms - records.front().ts_ms) / 1000.0;
  }
};

class MalformedHeader : public Error {
 public:
  using Error::Error;
};

class MalformedRow : public Error {
 public:
  MalformedRow(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class EmptyTrace : public Error {
 public:
  using Error::Error;
};

class AllMissingChannel : public Error {
 public:
  using Error::Error;
};

// Canonical CSV schema. A ColumnMapping renames canonical columns onto a
// foreign file's actual headers; identity when a column is not mapped.
struct ColumnMapping {
  std::map<std::string, std::string> canonical_to_actual;

  std::string actual(const std::string& canonical) const {
    const auto it = canonical_to_actual.find(canonical);
    return it == canonical_to_actual.end() ? canonical : it->second;
  }
};

inline std::vector<std::string> canonical_columns() {
  std::vector<std::string> cols = {
      "ts_ms", "operator", "lat_deg", "lon_deg", "speed_mps", "bearing_deg",
      "session", "mobility", "serving_id", "serving_rsrp", "serving_rsrq",
      "serving_snr"};
  for (int k = 1; k <= kMaxNeighbors; ++k) {
    const std::string p = "n" + std::to_string(k) + "_";
    cols.push_back(p + "id");
    cols.push_back(p + "rsrp");
    cols.push_back(p + "rsrq");
    cols.push_back(p + "snr");
  }
  return cols;
}

namespace detail {

inline std::optional<Operator> parse_operator(std::string_view f) {
  if (f == "A") return Operator::A;
  if (f == "B") return Operator::B;
  if (f == "C") return Operator::C;
  return std::nullopt;
}
inline std::optional<Session> parse_session(std::string_view f) {
  if (f == "FTP") return Session::FTP;
  if (f == "VIDEO") return Session::VIDEO;
  if (f == "HTTP") return Session::HTTP;
  return std::nullopt;
}
inline std::optional<Mobility> parse_mobility(std::string_view f) {
  if (f == "WALK") return Mobility::WALK;
  if (f == "SHUTTLE") return Mobility::SHUTTLE;
  if (f == "BRT") return Mobility::BRT;
  return std::nullopt;
}

}  // namespace detail

// Parses the canonical CSV (possibly renamed via `mapping`). One record per
// data row, in file order; empty numeric fields are recorded as missing.
// Unknown columns beyond the schema are ignored; n5_* style extras produce a
// warning.
inline DriveTrace parse_trace(std::string_view csv_text, const ColumnMapping& mapping = {},
                              std::vector<std::string>* warnings = nullptr) {
  const auto lines = csv::split_lines(csv_text);
  if (lines.empty()) throw MalformedHeader("missing header line");

  const auto header = csv::split_fields(lines[0]);
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < header.size(); ++i) index.emplace(std::string(header[i]), i);

  const auto cols = canonical_columns();
  std::map<std::string, std::size_t> col_idx;
  // Neighbor column groups are optional as whole blocks; base columns are not.
  for (const auto& c : cols) {
    const std::string actual = mapping.actual(c);
    const auto it = index.find(actual);
    const bool neighbor_col = c[0] == 'n' && c.find('_') != std::string::npos && c[1] >= '1' && c[1] <= '9';
    if (it == index.end()) {
      if (!neighbor_col) throw MalformedHeader("missing required column '" + actual + "'");
      continue;
    }
    col_idx[c] = it->second;
  }
  if (warnings) {
    for (const auto& [name, pos] : index) {
      (void)pos;
      if (name.size() > 2 && name[0] == 'n' && name[1] > '4' && name[1] <= '9' && name.find('_') != std::string::npos)
        warnings->push_back("ignoring extra neighbor column '" + name + "' (max " +
                            std::to_string(kMaxNeighbors) + " neighbors)");
    }
  }

  auto field = [&](const std::vector<std::string_view>& f, const std::string& c)
      -> std::optional<std::string_view> {
    const auto it = col_idx.find(c);
    if (it == col_idx.end() || it->second >= f.size()) return std::nullopt;
    return f[it->second];
  };

  DriveTrace trace;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const std::size_t row = li - 1;  // 0-based data row index
    const auto f = csv::split_fields(lines[li]);
    MeasurementRecord r;

    const auto ts_f = field(f, "ts_ms");
    if (!ts_f || ts_f->empty()) throw MalformedRow(row, "ts_ms is required");
    const auto ts = csv::parse_int(*ts_f);
    if (!ts) throw MalformedRow(row, "ts_ms is not an integer");
    r.ts_ms = *ts;
    if (!trace.records.empty() && r.ts_ms <= trace.records.back().ts_ms)
      throw MalformedRow(row, "ts_ms not strictly increasing");

    const auto op_f = field(f, "operator");
    if (!op_f) throw MalformedRow(row, "operator is required");
    const auto op = detail::parse_operator(*op_f);
    if (!op) throw MalformedRow(row, "unknown operator");
    r.op = *op;
    if (!trace.records.empty() && trace.records.front().op != r.op)
      throw MalformedRow(row, "operator differs from the trace's operator");

    auto numeric = [&](const std::string& c) -> std::optional<double> {
      const auto v = field(f, c);
      if (!v || v->empty()) return std::nullopt;
      const auto d = csv::parse_double(*v);
      if (!d) throw MalformedRow(row, c + " is not numeric");
      return d;
    };

    r.lat_deg = numeric("lat_deg");
    r.lon_deg = numeric("lon_deg");
    r.speed_mps = numeric("speed_mps");
    if (r.speed_mps && *r.speed_mps < 0) throw MalformedRow(row, "speed_mps < 0");
    r.bearing_deg = numeric("bearing_deg");
    if (r.bearing_deg && (*r.bearing_deg < 0 || *r.bearing_deg >= 360))
      throw MalformedRow(row, "bearing_deg outside [0, 360)");

    const auto sess_f = field(f, "session");
    const auto sess = sess_f ? detail::parse_session(*sess_f) : std::nullopt;
    if (!sess) throw MalformedRow(row, "unknown session");
    r.session = *sess;
    const auto mob_f = field(f, "mobility");
    const auto mob = mob_f ? detail::parse_mobility(*mob_f) : std::nullopt;
    if (!mob) throw MalformedRow(row, "unknown mobility");
    r.mobility = *mob;

    const auto sid_f = field(f, "serving_id");
    if (!sid_f || sid_f->empty()) throw MalformedRow(row, "serving_id is required");
    const auto sid = csv::parse_int(*sid_f);
    if (!sid || *sid < 0) throw MalformedRow(row, "serving_id must be a non-negative integer");
    r.serving.cell_id = static_cast<int>(*sid);
    r.serving.rsrp_dbm = numeric("serving_rsrp");
    r.serving.rsrq_db = numeric("serving_rsrq");
    r.serving.snr_db = numeric("serving_snr");

    for (int k = 1; k <= kMaxNeighbors; ++k) {
      const std::string p = "n" + std::to_string(k) + "_";
      const auto id_f = field(f, p + "id");
      if (!id_f || id_f->empty()) continue;  // slot absent
      const auto id = csv::parse_int(*id_f);
      if (!id || *id < 0) throw MalformedRow(row, p + "id must be a non-negative integer");
      CellMeasurement n;
      n.cell_id = static_cast<int>(*id);
      n.rsrp_dbm = numeric(p + "rsrp");
      n.rsrq_db = numeric(p + "rsrq");
      n.snr_db = numeric(p + "snr");
      r.neighbors.push_back(n);
    }

    trace.records.push_back(std::move(r));
  }

  if (trace.records.empty()) throw EmptyTrace("no data rows");

  // Nominal spacing: modal consecutive delta (smallest wins a tie).
  if (trace.records.size() >= 2) {
    std::map<std::int64_t, int> deltas;
    for (std::size_t i = 1; i < trace.records.size(); ++i)
      ++deltas[trace.records[i].ts_ms - trace.records[i - 1].ts_ms];
    const auto best = std::max_element(
        deltas.begin(), deltas.end(),
        [](const auto& a, const auto& b) { return a.second < b.second; });
    trace.sample_period_ms = static_cast<int>(best->first);
  }
  return trace;
}

inline std::string serialize_trace(const DriveTrace& trace) {
  std::string out;
  const auto cols = canonical_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) out += ',';
    out += cols[i];
  }
  out += '\n';
  auto put = [&out](const std::optional<double>& v) {
    if (v) out += csv::fmt(*v);
  };
  for (const auto& r : trace.records) {
    out += csv::fmt(r.ts_ms);
    out += ',';
    out += to_string(r.op);
    out += ',';
    put(r.lat_deg);
    out += ',';
    put(r.lon_deg);
    out += ',';
    put(r.speed_mps);
    out += ',';
    put(r.bearing_deg);
    out += ',';
    out += to_string(r.session);
    out += ',';
    out += to_string(r.mobility);
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(r.serving.cell_id));
    out += ',';
    put(r.serving.rsrp_dbm);
    out += ',';
    put(r.serving.rsrq_db);
    out += ',';
    put(r.serving.snr_db);
    for (int k = 0; k < kMaxNeighbors; ++k) {
      if (k < static_cast<int>(r.neighbors.size())) {
        const auto& n = r.neighbors[k];
        out += ',';
        out += csv::fmt(static_cast<std::int64_t>(n.cell_id));
        out += ',';
        put(n.rsrp_dbm);
        out += ',';
        put(n.rsrq_db);
        out += ',';
        put(n.snr_db);
      } else {
        out += ",,,,";
      }
    }
    out += '\n';
  }
  return out;
}

struct RangeViolation {
  std::size_t row;
  std::string field;
  double value;
  double lo, hi;
};

struct ValidationReport {
  std::vector<RangeViolation> violations;

  std::size_t count() const { return violations.size(); }

  std::string to_csv() const {
    std::string out = "row,field,value,lo,hi\n";
    for (const auto& v : violations) {
      out += csv::fmt(static_cast<std::int64_t>(v.row));
      out += ',';
      out += v.field;
      out += ',';
      out += csv::fmt(v.value);
      out += ',';
      out += csv::fmt(v.lo);
      out += ',';
      out += csv::fmt(v.hi);
      out += '\n';
    }
    return out;
  }
};

// Pure report of values outside the 3GPP ranges; closed intervals, missing
// values are not judged.
inline ValidationReport validate_ranges(const DriveTrace& trace) {
  ValidationReport rep;
  auto check = [&rep](std::size_t row, const std::string& field,
                      const std::optional<double>& v, double lo, double hi) {
    if (v && (*v < lo || *v > hi)) rep.violations.push_back({row, field, *v, lo, hi});
  };
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    check(i, "serving_rsrp", r.serving.rsrp_dbm, kRsrpMin, kRsrpMax);
    check(i, "serving_rsrq", r.serving.rsrq_db, kRsrqMin, kRsrqMax);
    check(i, "serving_snr", r.serving.snr_db, kSnrMin, kSnrMax);
    for (std::size_t k = 0; k < r.neighbors.size(); ++k) {
      const std::string p = "n" + std::to_string(k + 1) + "_";
      check(i, p + "rsrp", r.neighbors[k].rsrp_dbm, kRsrpMin, kRsrpMax);
      check(i, p + "rsrq", r.neighbors[k].rsrq_db, kRsrqMin, kRsrqMax);
      check(i, p + "snr", r.neighbors[k].snr_db, kSnrMin, kSnrMax);
    }
  }
  return rep;
}

enum class RepairMode { CLAMP, DROP };

// Clamps out-of-range radio values into their 3GPP interval, or drops the
// offending rows entirely.
inline DriveTrace repair_ranges(const DriveTrace& trace, RepairMode mode) {
  DriveTrace out;
  out.sample_period_ms = trace.sample_period_ms;
  auto clamp_field = [](std::optional<double>& v, double lo, double hi) {
    if (v) *v = std::clamp(*v, lo, hi);
  };
  auto in_range = [](const std::optional<double>& v, double lo, double hi) {
    return !v || (*v >= lo && *v <= hi);
  };
  for (const auto& rec : trace.records) {
    if (mode == RepairMode::CLAMP) {
      MeasurementRecord r = rec;
      clamp_field(r.serving.rsrp_dbm, kRsrpMin, kRsrpMax);
      clamp_field(r.serving.rsrq_db, kRsrqMin, kRsrqMax);
      clamp_field(r.serving.snr_db, kSnrMin, kSnrMax);
      for (auto& n : r.neighbors) {
        clamp_field(n.rsrp_dbm, kRsrpMin, kRsrpMax);
        clamp_field(n.rsrq_db, kRsrqMin, kRsrqMax);
        clamp_field(n.snr_db, kSnrMin, kSnrMax);
      }
      out.records.push_back(std::move(r));
    } else {
      bool ok = in_range(rec.serving.rsrp_dbm, kRsrpMin, kRsrpMax) &&
                in_range(rec.serving.rsrq_db, kRsrqMin, kRsrqMax) &&
                in_range(rec.serving.snr_db, kSnrMin, kSnrMax);
      for (const auto& n : rec.neighbors)
        ok = ok && in_range(n.rsrp_dbm, kRsrpMin, kRsrpMax) &&
             in_range(n.rsrq_db, kRsrqMin, kRsrqMax) && in_range(n.snr_db, kSnrMin, kSnrMax);
      if (ok) out.records.push_back(rec);
    }
  }
  if (out.records.empty()) throw EmptyTrace("all rows dropped during range repair");
  return out;
}

namespace detail {

// A numeric channel is one column of the trace viewed as (ts, value) points.
// Neighbor channels are positional over the neighbor list; a record without
// slot k simply contributes no point.
struct Channel {
  std::string name;
  std::function<std::optional<double>*(MeasurementRecord&)> get;
};

inline std::vector<Channel> numeric_channels() {
  std::vector<Channel> ch;
  ch.push_back({"lat_deg", [](MeasurementRecord& r) { return &r.lat_deg; }});
  ch.push_back({"lon_deg", [](MeasurementRecord& r) { return &r.lon_deg; }});
  ch.push_back({"speed_mps", [](MeasurementRecord& r) { return &r.speed_mps; }});
  ch.push_back({"bearing_deg", [](MeasurementRecord& r) { return &r.bearing_deg; }});
  ch.push_back({"serving_rsrp", [](MeasurementRecord& r) { return &r.serving.rsrp_dbm; }});
  ch.push_back({"serving_rsrq", [](MeasurementRecord& r) { return &r.serving.rsrq_db; }});
  ch.push_back({"serving_snr", [](MeasurementRecord& r) { return &r.serving.snr_db; }});
  for (int k = 0; k < kMaxNeighbors; ++k) {
    const std::string p = "n" + std::to_string(k + 1) + "_";
    ch.push_back({p + "rsrp", [k](MeasurementRecord& r) -> std::optional<double>* {
                    return k < static_cast<int>(r.neighbors.size()) ? &r.neighbors[k].rsrp_dbm : nullptr;
                  }});
    ch.push_back({p + "rsrq", [k](MeasurementRecord& r) -> std::optional<double>* {
                    return k < static_cast<int>(r.neighbors.size()) ? &r.neighbors[k].rsrq_db : nullptr;
                  }});
    ch.push_back({p + "snr", [k](MeasurementRecord& r) -> std::optional<double>* {
                    return k < static_cast<int>(r.neighbors.size()) ? &r.neighbors[k].snr_db : nullptr;
                  }});
  }
  return ch;
}

}  // namespace detail

// Linear interpolation against ts_ms for interior gaps; nearest observed
// value for leading/trailing gaps. Observed values are preserved exactly, so
// the operation is idempotent.
inline DriveTrace interpolate_missing(const DriveTrace& trace) {
  DriveTrace out = trace;
  for (const auto& ch : detail::numeric_channels()) {
    std::vector<std::pair<std::int64_t, std::optional<double>*>> pts;
    bool any_missing = false;
    for (auto& r : out.records) {
      std::optional<double>* slot = ch.get(r);
      if (!slot) continue;
      if (!slot->has_value()) any_missing = true;
      pts.emplace_back(r.ts_ms, slot);
    }
    if (!any_missing) continue;

    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (pts[i].second->has_value()) observed.push_back(i);
    if (observed.empty())
      throw AllMissingChannel("channel '" + ch.name + "' has no observed value");

    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].second->has_value()) continue;
      const auto next = std::lower_bound(observed.begin(), observed.end(), i);
      if (next == observed.begin()) {
        *pts[i].second = **pts[*next].second;  // leading gap: nearest fill
      } else if (next == observed.end()) {
        *pts[i].second = **pts[observed.back()].second;  // trailing gap
      } else {
        const std::size_t hi = *next, lo = *(next - 1);
        const double t = static_cast<double>(pts[i].first - pts[lo].first) /
                         static_cast<double>(pts[hi].first - pts[lo].first);
        *pts[i].second = **pts[lo].second + t * (**pts[hi].second - **pts[lo].second);
      }
    }
  }
  return out;
}

// session -> 3-dim one-hot, mobility -> 3-dim one-hot, concatenated.
inline std::array<double, 6> encode_categoricals(const MeasurementRecord& r) {
  std::array<double, 6> v{};
  v[static_cast<int>(r.session)] = 1.0;
  v[3 + static_cast<int>(r.mobility)] = 1.0;
  return v;
}

inline std::vector<std::array<double, 6>> encode_categoricals(const DriveTrace& trace) {
  std::vector<std::array<double, 6>> out;
  out.reserve(trace.records.size());
  for (const auto& r : trace.records) out.push_back(encode_categoricals(r));
  return out;
}

}  // namespace hoseq
