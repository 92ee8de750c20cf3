#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hoseq/control.hpp"
#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"
#include "hoseq/features.hpp"
#include "hoseq/handover.hpp"
#include "hoseq/models.hpp"
#include "hoseq/train.hpp"

namespace hoseq::cfg {

// Flat run configuration: every tunable default in one place, file format is
// line-oriented `key = value` with `#` comments. Unknown keys are rejected.
struct RunConfig {
  ho::A3Params a3;
  ctrl::ControlThresholds ctrl;
  feat::FeatureMode feat_mode = feat::FeatureMode::ALL;
  bool feat_mode_both = false;  // feat.mode = both
  int feat_seq_len = 10;
  nn::ModelKind model_kind = nn::ModelKind::GRU;
  int model_hidden_dim = 16;
  nn::TrainConfig train;
  feat::SplitRatios split;
  std::uint64_t seed = 1;
  bool seed_explicit = false;  // whether the file set `seed`

  // grid-search axes (gridsearch subcommand only)
  std::vector<nn::ModelKind> grid_kinds = {nn::ModelKind::GRU, nn::ModelKind::LSTM,
                                           nn::ModelKind::TRANSFORMER};
  nn::GridSpace grid;

  void validate() const {
    if (a3.hysteresis_db < 0) throw ConfigError("a3.hysteresis_db must be >= 0");
    if (a3.ttt_ms < 0) throw ConfigError("a3.ttt_ms must be >= 0");
    if (!(a3.t_pp_s > 0)) throw ConfigError("a3.t_pp_s must be > 0");
    if (!(ctrl.tos_th_s > 0)) throw ConfigError("ctrl.tos_th_s must be > 0");
    if (!(ctrl.osc_th_s > 0)) throw ConfigError("ctrl.osc_th_s must be > 0");
    if (!(ctrl.theta_tos_s > 0)) throw ConfigError("ctrl.theta_tos_s must be > 0");
    if (feat_seq_len < 2) throw ConfigError("feat.seq_len must be >= 2");
    if (model_hidden_dim < 2 || model_hidden_dim % 2 != 0)
      throw ConfigError("model.hidden_dim must be an even number >= 2");
    train.validate();
    const double sum = split.train + split.val + split.test;
    if (split.train <= 0 || split.val <= 0 || split.test <= 0 ||
        sum < 0.999 || sum > 1.001)
      throw ConfigError("split.ratios must be three positive numbers summing to 1");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, e - b + 1));
}

inline double want_double(const std::string& key, const std::string& v) {
  const auto d = csv::parse_double(v);
  if (!d) throw ConfigError(key + ": '" + v + "' is not a number");
  return *d;
}

inline std::int64_t want_int(const std::string& key, const std::string& v) {
  const auto i = csv::parse_int(v);
  if (!i) throw ConfigError(key + ": '" + v + "' is not an integer");
  return *i;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  for (const auto part : csv::split_fields(v)) {
    const auto t = trim(part);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace detail

inline void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::want_double;
  using detail::want_int;
  if (key == "a3.hysteresis_db") c.a3.hysteresis_db = want_double(key, value);
  else if (key == "a3.ttt_ms") c.a3.ttt_ms = static_cast<int>(want_int(key, value));
  else if (key == "a3.t_pp_s") c.a3.t_pp_s = want_double(key, value);
  else if (key == "ctrl.tos_th_s") c.ctrl.tos_th_s = want_double(key, value);
  else if (key == "ctrl.rsrp_slope_th") c.ctrl.rsrp_slope_th_db_s = want_double(key, value);
  else if (key == "ctrl.snr_slope_th") c.ctrl.snr_slope_th_db_s = want_double(key, value);
  else if (key == "ctrl.osc_th_s") c.ctrl.osc_th_s = want_double(key, value);
  else if (key == "ctrl.theta_rsrp_dbm") c.ctrl.theta_rsrp_dbm = want_double(key, value);
  else if (key == "ctrl.theta_tos_s") c.ctrl.theta_tos_s = want_double(key, value);
  else if (key == "feat.mode") {
    if (value == "rsrp") { c.feat_mode = feat::FeatureMode::RSRP_ONLY; c.feat_mode_both = false; }
    else if (value == "all") { c.feat_mode = feat::FeatureMode::ALL; c.feat_mode_both = false; }
    else if (value == "both") { c.feat_mode = feat::FeatureMode::ALL; c.feat_mode_both = true; }
    else throw ConfigError("feat.mode must be rsrp, all or both");
  } else if (key == "feat.seq_len") c.feat_seq_len = static_cast<int>(want_int(key, value));
  else if (key == "model.kind") {
    const auto k = nn::kind_from_string(value);
    if (!k) throw ConfigError("model.kind must be gru, lstm or transformer");
    c.model_kind = *k;
  } else if (key == "model.hidden_dim") c.model_hidden_dim = static_cast<int>(want_int(key, value));
  else if (key == "train.lr") c.train.learning_rate = want_double(key, value);
  else if (key == "train.dropout") c.train.dropout_prob = want_double(key, value);
  else if (key == "train.max_epochs") c.train.max_epochs = static_cast<int>(want_int(key, value));
  else if (key == "train.patience") c.train.patience = static_cast<int>(want_int(key, value));
  else if (key == "train.lambda_pp") c.train.lambda_pp = want_double(key, value);
  else if (key == "split.ratios") {
    const auto parts = detail::split_list(value);
    if (parts.size() != 3) throw ConfigError("split.ratios needs three comma-separated numbers");
    c.split.train = want_double(key, parts[0]);
    c.split.val = want_double(key, parts[1]);
    c.split.test = want_double(key, parts[2]);
  } else if (key == "seed") {
    c.seed = static_cast<std::uint64_t>(want_int(key, value));
    c.seed_explicit = true;
  }
  else if (key == "grid.kinds") {
    c.grid_kinds.clear();
    for (const auto& s : detail::split_list(value)) {
      const auto k = nn::kind_from_string(s);
      if (!k) throw ConfigError("grid.kinds: unknown kind '" + s + "'");
      c.grid_kinds.push_back(*k);
    }
  } else if (key == "grid.seq_len") {
    c.grid.seq_len.clear();
    for (const auto& s : detail::split_list(value))
      c.grid.seq_len.push_back(static_cast<int>(want_int(key, s)));
  } else if (key == "grid.hidden_dim") {
    c.grid.hidden_dim.clear();
    for (const auto& s : detail::split_list(value))
      c.grid.hidden_dim.push_back(static_cast<int>(want_int(key, s)));
  } else if (key == "grid.lr") {
    c.grid.learning_rate.clear();
    for (const auto& s : detail::split_list(value))
      c.grid.learning_rate.push_back(want_double(key, s));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline RunConfig parse_config(std::string_view text) {
  RunConfig c;
  std::size_t line_no = 0;
  for (const auto raw : csv::split_lines(text)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    apply_key(c, detail::trim(std::string_view(stripped).substr(0, eq)),
              detail::trim(std::string_view(stripped).substr(eq + 1)));
  }
  return c;
}

inline std::string config_to_string(const RunConfig& c) {
  std::string out;
  auto kv = [&out](const std::string& k, const std::string& v) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  };
  kv("a3.hysteresis_db", csv::fmt(c.a3.hysteresis_db));
  kv("a3.ttt_ms", csv::fmt(static_cast<std::int64_t>(c.a3.ttt_ms)));
  kv("a3.t_pp_s", csv::fmt(c.a3.t_pp_s));
  kv("ctrl.tos_th_s", csv::fmt(c.ctrl.tos_th_s));
  kv("ctrl.rsrp_slope_th", csv::fmt(c.ctrl.rsrp_slope_th_db_s));
  kv("ctrl.snr_slope_th", csv::fmt(c.ctrl.snr_slope_th_db_s));
  kv("ctrl.osc_th_s", csv::fmt(c.ctrl.osc_th_s));
  kv("ctrl.theta_rsrp_dbm", csv::fmt(c.ctrl.theta_rsrp_dbm));
  kv("ctrl.theta_tos_s", csv::fmt(c.ctrl.theta_tos_s));
  kv("feat.mode", c.feat_mode_both ? "both" : feat::to_string(c.feat_mode));
  kv("feat.seq_len", csv::fmt(static_cast<std::int64_t>(c.feat_seq_len)));
  kv("model.kind", nn::to_string(c.model_kind));
  kv("model.hidden_dim", csv::fmt(static_cast<std::int64_t>(c.model_hidden_dim)));
  kv("train.lr", csv::fmt(c.train.learning_rate));
  kv("train.dropout", csv::fmt(c.train.dropout_prob));
  kv("train.max_epochs", csv::fmt(static_cast<std::int64_t>(c.train.max_epochs)));
  kv("train.patience", csv::fmt(static_cast<std::int64_t>(c.train.patience)));
  kv("train.lambda_pp", csv::fmt(c.train.lambda_pp));
  kv("split.ratios", csv::fmt(c.split.train) + "," + csv::fmt(c.split.val) + "," +
                         csv::fmt(c.split.test));
  kv("seed", csv::fmt(static_cast<std::int64_t>(c.seed)));
  return out;
}

}  // namespace hoseq::cfg
