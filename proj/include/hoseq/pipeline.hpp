#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "hoseq/config.hpp"
#include "hoseq/control.hpp"
#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"
#include "hoseq/features.hpp"
#include "hoseq/handover.hpp"
#include "hoseq/metrics.hpp"
#include "hoseq/models.hpp"
#include "hoseq/trace.hpp"
#include "hoseq/train.hpp"
#include "hoseq/version.hpp"

namespace hoseq::pipeline {

struct Options {
  std::vector<nn::ModelKind> kinds;        // empty: use config's model.kind
  std::vector<feat::FeatureMode> modes;    // empty: from config (both expands)
  ctrl::WeightMode weight_mode = ctrl::WeightMode::RULE;
  RepairMode repair = RepairMode::DROP;    // --clamp switches to CLAMP
  bool wall_times_in_summary = false;      // --timings wall; breaks byte determinism
  bool save_models = true;
  int restarts = 3;  // independent inits per cell, best validation loss wins
};

struct CellArtifacts {
  std::string kind, mode;
  nn::TrainHistory history;
  metrics::MetricsSummary summary;
  std::size_t skipped_short = 0, skipped_censored = 0;
};

struct Result {
  ho::HandoverLog baseline;
  std::vector<CellArtifacts> cells;
  std::vector<metrics::MetricsSummary> summaries;
  std::vector<std::filesystem::path> written;
};

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& content,
                       std::vector<std::filesystem::path>& written) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("short write to '" + p.string() + "'");
  written.push_back(p);
}

}  // namespace detail

// Full batch run over one trace: repair -> baseline A3 labelling -> per
// (kind x mode): windows, chronological split, min-max fit, training,
// detection evaluation on the test split, counterfactual replay, reduction
// metrics -> Table-1-shaped report. Deterministic for fixed (config, trace,
// seed); wall-clock measurements go to run_meta.txt, the one file allowed to
// differ between identical runs. Partial outputs are removed on failure.
inline Result run(const cfg::RunConfig& config, const DriveTrace& raw_trace,
                  const std::filesystem::path& out_dir, const Options& opt = {}) {
  config.validate();

  std::vector<nn::ModelKind> kinds = opt.kinds;
  if (kinds.empty()) kinds = {config.model_kind};
  std::vector<feat::FeatureMode> modes = opt.modes;
  if (modes.empty()) {
    if (config.feat_mode_both)
      modes = {feat::FeatureMode::RSRP_ONLY, feat::FeatureMode::ALL};
    else
      modes = {config.feat_mode};
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  Result res;
  try {
    const DriveTrace repaired = interpolate_missing(repair_ranges(raw_trace, opt.repair));
    res.baseline = ho::label_log(repaired, config.a3);
    detail::write_file(out_dir / "baseline_log.csv", ho::log_to_csv(res.baseline),
                       res.written);

    for (const auto mode : modes) {
      for (const auto kind : kinds) {
        CellArtifacts cell;
        cell.kind = nn::to_string(kind);
        cell.mode = feat::to_string(mode);

        feat::FeatureSpec spec;
        spec.mode = mode;
        spec.seq_len = config.feat_seq_len;

        auto ws = feat::build_windows(repaired, res.baseline, spec);
        cell.skipped_short = ws.skipped_short;
        cell.skipped_censored = ws.skipped_censored;
        auto split = feat::chronological_split(std::move(ws.windows), config.split);
        spec = feat::fit_minmax(split.train, mode, config.feat_seq_len);
        feat::apply_minmax(spec, split.train);
        feat::apply_minmax(spec, split.val);
        feat::apply_minmax(spec, split.test);

        // small nets land in bad basins now and then; train a few
        // independent inits and keep the best validation loss
        nn::TrainConfig tc = config.train;
        const std::uint64_t cell_seed =
            mix64(config.seed, static_cast<std::uint64_t>(kind) * 16 +
                                   static_cast<std::uint64_t>(mode));
        nn::PredictorParams params;
        nn::TrainHistory history;
        bool have_model = false;
        std::string last_error;
        for (int restart = 0; restart < std::max(1, opt.restarts); ++restart) {
          tc.seed = mix64(cell_seed, static_cast<std::uint64_t>(restart));
          try {
            auto [p, h] = nn::train(kind, config.model_hidden_dim, split.train,
                                    split.val, tc);
            if (!have_model || h.best_val_loss < history.best_val_loss) {
              params = std::move(p);
              h.wall_train_s += history.wall_train_s;  // accumulate across restarts
              history = std::move(h);
            } else {
              history.wall_train_s += h.wall_train_s;
            }
            have_model = true;
          } catch (const nn::NonFiniteLoss& e) {
            last_error = e.what();
          }
        }
        if (!have_model)
          throw nn::NonFiniteLoss("every restart diverged: " + last_error, history);
        const feat::ClassWeights weights = nn::weights_from_windows(split.train);

        // detection evaluation on the held-out test windows
        std::vector<ctrl::DetectInput> dins;
        std::vector<bool> truth, pred;
        const auto t0 = std::chrono::steady_clock::now();
        nn::Tape tape;
        for (const auto& w : split.test) {
          const auto out = nn::forward(params, w.features, tape);
          ctrl::DetectInput din;
          din.y_p_s = out.tos_seconds();
          din.rsrp_slope_db_s = w.rsrp_slope_last;
          din.snr_slope_db_s = w.snr_slope_last;
          din.pp_prob = out.pp_prob();
          din.truth_pp = w.target_pp;
          dins.push_back(din);
        }
        const double wall_infer =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto det = ctrl::detect(dins, config.ctrl, weights, opt.weight_mode);
        for (std::size_t i = 0; i < dins.size(); ++i) {
          truth.push_back(*dins[i].truth_pp);
          pred.push_back(det.flags[i].is_pp);
        }

        const auto replay = ctrl::replay_with_avoidance(
            repaired, config.a3, params, spec, config.ctrl, weights, res.baseline,
            opt.weight_mode);

        metrics::MetricsSummary sum;
        sum.kind = cell.kind;
        sum.mode = cell.mode;
        sum.detection = truth.empty() ? metrics::Classification{}
                                      : metrics::classification_metrics(truth, pred);
        sum.reductions = metrics::reduction_metrics(res.baseline, replay.log);
        sum.timing = metrics::timing_capture(history.wall_train_s, wall_infer,
                                             split.test.size(), params.param_count());
        sum.report_wall_times = opt.wall_times_in_summary;
        history.wall_infer_s = wall_infer;
        history.param_count = params.param_count();
        cell.history = history;
        cell.summary = sum;

        const std::string tag = cell.kind + "_" + cell.mode;
        detail::write_file(out_dir / ("replay_" + tag + ".csv"),
                           ho::log_to_csv(replay.log), res.written);
        detail::write_file(out_dir / ("decisions_" + tag + ".csv"),
                           ctrl::decisions_to_csv(replay.decisions), res.written);
        detail::write_file(out_dir / ("history_" + tag + ".csv"), history.to_csv(),
                           res.written);
        if (opt.save_models) {
          const auto mp = out_dir / ("model_" + tag + ".bin");
          nn::save_params(params, mp.string());
          res.written.push_back(mp);
        }

        res.summaries.push_back(sum);
        res.cells.push_back(std::move(cell));
      }
    }

    for (const auto& p : metrics::emit_report(res.summaries, out_dir))
      res.written.push_back(p);

    // the single metadata file that may differ between identical runs
    {
      std::string meta;
      meta += "tool_version = ";
      meta += kVersion;
      meta += '\n';
      const std::time_t now = std::time(nullptr);
      char buf[64];
      std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
      meta += "generated_at = ";
      meta += buf;
      meta += "  # wall-clock values live here and are excluded from determinism\n\n";
      meta += cfg::config_to_string(config);
      meta += "\ntrace_rows = " + std::to_string(raw_trace.size());
      meta += "\nbaseline_events = " + std::to_string(res.baseline.events.size());
      meta += "\n\nkind,mode,train_s,infer_s,infer_per_event_s,stopped_epoch,skipped_short,skipped_censored\n";
      for (const auto& c : res.cells) {
        meta += c.kind + "," + c.mode + "," + csv::fmt_fixed(c.history.wall_train_s, 3) +
                "," + csv::fmt_fixed(c.history.wall_infer_s, 4) + ",";
        meta += c.summary.timing.infer_per_event_s
                    ? csv::fmt(*c.summary.timing.infer_per_event_s)
                    : std::string("na");
        meta += "," + std::to_string(c.history.stopped_epoch) + "," +
                std::to_string(c.skipped_short) + "," + std::to_string(c.skipped_censored) +
                "\n";
      }
      detail::write_file(out_dir / "run_meta.txt", meta, res.written);
    }
  } catch (...) {
    for (const auto& p : res.written) {
      std::error_code rm_ec;
      std::filesystem::remove(p, rm_ec);
    }
    throw;
  }
  return res;
}

}  // namespace hoseq::pipeline
