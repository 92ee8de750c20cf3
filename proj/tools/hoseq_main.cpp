// hoseq - handover simulation and evaluation toolkit
//
// Subcommands: gen, ingest, label, pipeline, gridsearch, report.
// Exit codes: 0 ok, 2 usage/config error, 3 runtime/data error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hoseq/hoseq.hpp"

namespace fs = std::filesystem;
using namespace hoseq;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("short write to '" + path + "'");
}

// precedence: --seed flag > config file > HOSEQ_SEED env > default
void resolve_seed(cfg::RunConfig& config, const std::optional<std::uint64_t>& flag_seed,
                  bool config_had_seed) {
  if (flag_seed) {
    config.seed = *flag_seed;
    return;
  }
  if (config_had_seed) return;
  if (const char* env = std::getenv("HOSEQ_SEED")) {
    const auto v = csv::parse_int(env);
    if (!v) throw ConfigError("HOSEQ_SEED is not an integer");
    config.seed = static_cast<std::uint64_t>(*v);
  }
}

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool clamp = false;
  bool oracle_weights = false;
  bool wall_times = false;
};

cfg::RunConfig load_config(const CommonOpts& opts) {
  cfg::RunConfig config;
  if (!opts.config_path.empty()) config = cfg::parse_config(read_file(opts.config_path));
  resolve_seed(config, opts.seed, config.seed_explicit);
  config.validate();
  return config;
}

ColumnMapping load_mapping(const std::string& path) {
  ColumnMapping mapping;
  if (path.empty()) return mapping;
  const std::string text = read_file(path);  // views below borrow from it
  for (const auto line : csv::split_lines(text)) {
    std::string_view sv = line;
    if (const auto hash = sv.find('#'); hash != std::string_view::npos)
      sv = sv.substr(0, hash);
    const auto eq = sv.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string canonical = cfg::detail::trim(sv.substr(0, eq));
    const std::string actual = cfg::detail::trim(sv.substr(eq + 1));
    if (!canonical.empty() && !actual.empty())
      mapping.canonical_to_actual[canonical] = actual;
  }
  return mapping;
}

int run_gen(const std::string& preset_name, std::uint64_t seed, const std::string& out) {
  const auto preset = sim::preset_from_string(preset_name);
  if (!preset) throw ConfigError("unknown preset '" + preset_name +
                                 "' (grid, corridor, street)");
  const auto scenario = sim::generate_scenario(*preset, seed);
  const auto trace = sim::sample_trace(scenario, seed);
  write_file(out, serialize_trace(trace));
  std::cout << "wrote " << out << " (" << trace.size() << " samples, "
            << scenario.cells.size() << " cells)\n";
  return 0;
}

int run_ingest(const CommonOpts& opts, const std::string& in, const std::string& out,
               const std::string& map_path, const std::string& report_path) {
  const auto mapping = load_mapping(map_path);
  std::vector<std::string> warnings;
  const DriveTrace parsed = parse_trace(read_file(in), mapping, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  const auto report = validate_ranges(parsed);
  if (!report_path.empty()) write_file(report_path, report.to_csv());
  const DriveTrace repaired = interpolate_missing(
      repair_ranges(parsed, opts.clamp ? RepairMode::CLAMP : RepairMode::DROP));
  write_file(out, serialize_trace(repaired));
  std::cout << "wrote " << out << " (" << repaired.size() << " rows, "
            << report.count() << " range violations "
            << (opts.clamp ? "clamped" : "dropped") << ")\n";
  return 0;
}

int run_label(const CommonOpts& opts, const std::string& trace_path,
              const std::string& out) {
  const auto config = load_config(opts);
  const DriveTrace trace = interpolate_missing(repair_ranges(
      parse_trace(read_file(trace_path)), opts.clamp ? RepairMode::CLAMP : RepairMode::DROP));
  const auto log = ho::label_log(trace, config.a3);
  write_file(out, ho::log_to_csv(log));
  std::size_t pp = 0;
  for (const auto& e : log.events) pp += e.pp;
  std::cout << "wrote " << out << " (" << log.events.size() << " handovers, " << pp
            << " ping-pongs)\n";
  return 0;
}

int run_pipeline_cmd(const CommonOpts& opts, const std::string& trace_path,
                     const std::string& out_dir, const std::string& models,
                     const std::string& feature_modes) {
  const auto config = load_config(opts);
  pipeline::Options popt;
  popt.repair = opts.clamp ? RepairMode::CLAMP : RepairMode::DROP;
  popt.weight_mode = opts.oracle_weights ? ctrl::WeightMode::ORACLE : ctrl::WeightMode::RULE;
  popt.wall_times_in_summary = opts.wall_times;
  if (!models.empty())
    for (const auto& part : cfg::detail::split_list(models)) {
      const auto k = nn::kind_from_string(part);
      if (!k) throw ConfigError("unknown model kind '" + part + "'");
      popt.kinds.push_back(*k);
    }
  if (!feature_modes.empty())
    for (const auto& part : cfg::detail::split_list(feature_modes)) {
      if (part == "rsrp") popt.modes.push_back(feat::FeatureMode::RSRP_ONLY);
      else if (part == "all") popt.modes.push_back(feat::FeatureMode::ALL);
      else throw ConfigError("unknown feature mode '" + part + "' (rsrp, all)");
    }

  const DriveTrace trace = parse_trace(read_file(trace_path));
  const auto res = pipeline::run(config, trace, out_dir, popt);
  std::cout << metrics::summary_txt(res.summaries);
  std::cout << "wrote " << res.written.size() << " files to " << out_dir << "\n";
  return 0;
}

int run_gridsearch(const CommonOpts& opts, const std::string& trace_path,
                   const std::string& out_dir) {
  auto config = load_config(opts);
  const DriveTrace trace = interpolate_missing(repair_ranges(
      parse_trace(read_file(trace_path)), opts.clamp ? RepairMode::CLAMP : RepairMode::DROP));
  const auto baseline = ho::label_log(trace, config.a3);

  auto make_split = [&](int seq_len) {
    feat::FeatureSpec spec;
    spec.mode = config.feat_mode;
    spec.seq_len = seq_len;
    auto ws = feat::build_windows(trace, baseline, spec);
    auto split = feat::chronological_split(std::move(ws.windows), config.split);
    const auto fitted = feat::fit_minmax(split.train, config.feat_mode, seq_len);
    feat::apply_minmax(fitted, split.train);
    feat::apply_minmax(fitted, split.val);
    return std::make_pair(std::move(split.train), std::move(split.val));
  };

  nn::TrainConfig tc = config.train;
  tc.seed = config.seed;
  const auto result = nn::grid_search(config.grid_kinds, config.grid, make_split, tc,
                                      opts.jobs);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "'");
  write_file((fs::path(out_dir) / "sweep.csv").string(), nn::grid_to_csv(result));

  const auto& best = result.best();
  cfg::RunConfig best_config = config;
  best_config.model_kind = best.kind;
  best_config.feat_seq_len = best.seq_len;
  best_config.model_hidden_dim = best.hidden_dim;
  best_config.train.learning_rate = best.learning_rate;
  write_file((fs::path(out_dir) / "best.cfg").string(),
             cfg::config_to_string(best_config));
  std::cout << "best: " << nn::to_string(best.kind) << " L=" << best.seq_len
            << " H=" << best.hidden_dim << " lr=" << best.learning_rate
            << " val_loss=" << best.val_loss << "\n";
  return 0;
}

int run_report(const std::string& dir) {
  // re-renders summary.txt and the charts from an existing summary.csv
  const auto csv_path = fs::path(dir) / "summary.csv";
  const std::string text = read_file(csv_path.string());
  const auto lines = csv::split_lines(text);
  if (lines.size() < 2) throw Error("summary.csv has no data rows");
  std::vector<metrics::MetricsSummary> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = csv::split_fields(lines[i]);
    if (f.size() != 9) throw Error("summary.csv row " + std::to_string(i) + " malformed");
    metrics::MetricsSummary s;
    s.kind = std::string(f[0]);
    s.mode = std::string(f[1]);
    if (f[2] != "na") s.reductions.pp_reduction_pct = csv::parse_double(f[2]);
    s.detection.f1_pct = csv::parse_double(f[3]).value_or(0);
    s.reductions.ho_reduction_pct = csv::parse_double(f[4]).value_or(0);
    s.reductions.tos_gain_pct = csv::parse_double(f[5]).value_or(0);
    if (f[6] != "na" && f[7] != "na") {
      s.timing.wall_train_s = csv::parse_double(f[6]).value_or(0);
      s.timing.wall_infer_s = csv::parse_double(f[7]).value_or(0);
      s.report_wall_times = true;
    }
    s.timing.param_count = static_cast<std::size_t>(csv::parse_int(f[8]).value_or(0));
    rows.push_back(std::move(s));
  }
  metrics::emit_report(rows, dir);
  std::cout << "re-rendered report in " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"handover simulation and sequence-model evaluation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "run configuration file (key = value)");
  std::uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag, "seed override (or HOSEQ_SEED)");
  app.add_option("--jobs", opts.jobs, "parallel grid-search cells")->check(CLI::Range(1, 256));
  app.add_flag("--clamp", opts.clamp, "clamp out-of-range values instead of dropping rows");
  app.add_flag("--oracle-weights", opts.oracle_weights,
               "label-dependent detection counting (non-causal, offline studies only)");
  app.add_flag("--timings", opts.wall_times,
               "put wall-clock timings into summary.csv (breaks byte determinism)");

  auto* gen = app.add_subcommand("gen", "generate a synthetic drive trace");
  std::string preset, out_path, in_path, out_dir, map_path, report_path, models, fmodes;
  std::uint64_t gen_seed = 0;
  gen->add_option("preset", preset, "grid | corridor | street")->required();
  gen->add_option("seed", gen_seed, "scenario seed")->required();
  gen->add_option("out", out_path, "output CSV path")->required();

  auto* ingest = app.add_subcommand("ingest", "parse, validate and repair a trace CSV");
  ingest->add_option("in", in_path, "input CSV")->required();
  ingest->add_option("out", out_path, "canonical CSV output")->required();
  ingest->add_option("--map", map_path, "column mapping file (canonical = actual)");
  ingest->add_option("--report", report_path, "write the range-violation report CSV here");

  auto* label = app.add_subcommand("label", "run the A3 baseline and label ping-pongs");
  label->add_option("trace", in_path, "canonical trace CSV")->required();
  label->add_option("out", out_path, "handover log CSV")->required();

  auto* pipe = app.add_subcommand("pipeline", "full run: label, train, replay, report");
  pipe->add_option("trace", in_path, "canonical trace CSV")->required();
  pipe->add_option("out_dir", out_dir, "output directory")->required();
  pipe->add_option("--models", models, "comma list: gru,lstm,transformer");
  pipe->add_option("--modes", fmodes, "comma list: rsrp,all");

  auto* gs = app.add_subcommand("gridsearch", "hyperparameter sweep, writes sweep.csv + best.cfg");
  gs->add_option("trace", in_path, "canonical trace CSV")->required();
  gs->add_option("out_dir", out_dir, "output directory")->required();

  auto* rep = app.add_subcommand("report", "re-render summary.txt and charts from summary.csv");
  rep->add_option("dir", out_dir, "directory containing summary.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*seed_opt) opts.seed = seed_flag;

  try {
    if (gen->parsed()) return run_gen(preset, gen_seed, out_path);
    if (ingest->parsed()) return run_ingest(opts, in_path, out_path, map_path, report_path);
    if (label->parsed()) return run_label(opts, in_path, out_path);
    if (pipe->parsed()) return run_pipeline_cmd(opts, in_path, out_dir, models, fmodes);
    if (gs->parsed()) return run_gridsearch(opts, in_path, out_dir);
    if (rep->parsed()) return run_report(out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
