#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hoseq/metrics.hpp"
#include "hoseq/rng.hpp"

using namespace hoseq;
using namespace hoseq::metrics;

namespace {

ho::HandoverLog make_log(std::size_t executed, std::size_t pp, std::size_t suppressed,
                         double tos_each_s) {
  ho::HandoverLog log;
  std::int64_t ts = 0;
  int idx = 0;
  for (std::size_t i = 0; i < executed; ++i) {
    ho::HandoverEvent e;
    e.index = idx++;
    e.trigger_ts_ms = ts;
    e.source_cell_id = 1 + (i % 2);
    e.target_cell_id = 2 - (i % 2);
    e.executed = true;
    e.pp = i < pp;
    if (i + 1 < executed) e.tos_s = tos_each_s;
    log.events.push_back(e);
    ts += static_cast<std::int64_t>(tos_each_s * 1000);
  }
  for (std::size_t i = 0; i < suppressed; ++i) {
    ho::HandoverEvent e;
    e.index = idx++;
    e.trigger_ts_ms = ts += 500;
    e.source_cell_id = 1;
    e.target_cell_id = 2;
    e.executed = false;
    log.events.push_back(e);
  }
  return log;
}

}  // namespace

TEST_CASE("classification metrics: stated examples") {
  SECTION("perfect") {
    const auto c = classification_metrics({1, 0, 1, 0}, {1, 0, 1, 0});
    CHECK(c.accuracy_pct == 100.0);
    CHECK(c.precision_pct == 100.0);
    CHECK(c.recall_pct == 100.0);
    CHECK(c.f1_pct == 100.0);
  }
  SECTION("half precision, full recall") {
    const auto c = classification_metrics({1, 0, 0, 0}, {1, 1, 0, 0});
    CHECK(c.precision_pct == 50.0);
    CHECK(c.recall_pct == 100.0);
    CHECK(c.f1_pct == Catch::Approx(200.0 / 3.0));
  }
  SECTION("all-negative predictions on a positive truth") {
    const auto c = classification_metrics({1, 1, 0}, {0, 0, 0});
    CHECK(c.recall_pct == 0.0);
    CHECK(c.precision_pct == 0.0);
    CHECK(c.f1_pct == 0.0);
  }
  SECTION("length mismatch") {
    REQUIRE_THROWS_AS(classification_metrics({1, 0}, {1}), LengthMismatch);
    REQUIRE_THROWS_AS(classification_metrics({}, {}), LengthMismatch);
  }
}

TEST_CASE("classification metrics match a confusion-matrix oracle") {
  Rng rng(13);
  for (int iter = 0; iter < 200; ++iter) {
    const int n = static_cast<int>(rng.uniform_int(1, 200));
    std::vector<bool> truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = rng.uniform() < 0.3;
      pred[i] = rng.uniform() < 0.4;
    }
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (int i = 0; i < n; ++i) {
      tp += truth[i] && pred[i];
      tn += !truth[i] && !pred[i];
      fp += !truth[i] && pred[i];
      fn += truth[i] && !pred[i];
    }
    const auto c = classification_metrics(truth, pred);
    CHECK(std::abs(c.accuracy_pct - 100.0 * (tp + tn) / n) <= 1e-12);
    const double p = tp + fp > 0 ? 100.0 * tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? 100.0 * tp / (tp + fn) : 0.0;
    CHECK(std::abs(c.precision_pct - p) <= 1e-12);
    CHECK(std::abs(c.recall_pct - r) <= 1e-12);
    const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    CHECK(std::abs(c.f1_pct - f1) <= 1e-12);
  }
}

TEST_CASE("reduction metrics") {
  SECTION("suppression ratio") {
    const auto base = make_log(100, 10, 0, 8.0);
    const auto rep = make_log(80, 5, 20, 8.0);
    const auto r = reduction_metrics(base, rep);
    CHECK(r.ho_reduction_pct == Catch::Approx(20.0));
  }
  SECTION("54 ping-pongs down to 1 prints as 98.15") {
    const auto base = make_log(100, 54, 0, 8.0);
    const auto rep = make_log(100, 1, 0, 8.0);
    const auto r = reduction_metrics(base, rep);
    REQUIRE(r.pp_reduction_pct);
    CHECK(*r.pp_reduction_pct == Catch::Approx(100.0 * 53.0 / 54.0));
    CHECK(csv::fmt_fixed(*r.pp_reduction_pct, 2) == "98.15");
  }
  SECTION("identical logs give zeros") {
    const auto log = make_log(40, 8, 0, 6.0);
    const auto r = reduction_metrics(log, log);
    REQUIRE(r.pp_reduction_pct);
    CHECK(*r.pp_reduction_pct == 0.0);
    CHECK(r.ho_reduction_pct == 0.0);
    CHECK(r.tos_gain_pct == 0.0);
  }
  SECTION("no baseline ping-pongs reports not-applicable") {
    const auto base = make_log(10, 0, 0, 8.0);
    const auto r = reduction_metrics(base, base);
    CHECK(!r.pp_reduction_pct);
  }
  SECTION("no baseline handovers is an error") {
    ho::HandoverLog empty;
    REQUIRE_THROWS_AS(reduction_metrics(empty, empty), NoBaselineHandovers);
  }
  SECTION("suppressed events never count as ping-pongs") {
    const auto base = make_log(10, 4, 0, 3.0);
    auto rep = make_log(10, 4, 5, 3.0);
    // marking suppressed events pp must not change the result
    auto rep2 = rep;
    for (auto& e : rep2.events)
      if (!e.executed) e.pp = true;
    const auto a = reduction_metrics(base, rep);
    const auto b = reduction_metrics(base, rep2);
    CHECK(*a.pp_reduction_pct == *b.pp_reduction_pct);
  }
  SECTION("tos gain") {
    const auto base = make_log(10, 0, 0, 5.0);
    const auto rep = make_log(10, 0, 0, 7.5);
    const auto r = reduction_metrics(base, rep);
    CHECK(r.tos_gain_pct == Catch::Approx(50.0));
  }
}

TEST_CASE("timing capture") {
  const auto t = timing_capture(12.5, 0.8, 40, 1234);
  CHECK(t.wall_train_s == 12.5);
  REQUIRE(t.infer_per_event_s);
  CHECK(*t.infer_per_event_s == Catch::Approx(0.02));
  CHECK(t.param_count == 1234);
  const auto z = timing_capture(1.0, 0.1, 0, 10);
  CHECK(!z.infer_per_event_s);  // per-event undefined with zero test events
}

namespace {

MetricsSummary sample_summary(const std::string& kind, const std::string& mode) {
  MetricsSummary s;
  s.kind = kind;
  s.mode = mode;
  s.detection.f1_pct = 45.1;
  s.reductions.pp_reduction_pct = 98.148148;
  s.reductions.ho_reduction_pct = 46.25;
  s.reductions.tos_gain_pct = 32.53;
  s.timing.param_count = 777;
  return s;
}

}  // namespace

TEST_CASE("summary csv has the exact header and Table-1 shape") {
  std::vector<MetricsSummary> rows;
  for (const auto* kind : {"gru", "lstm", "transformer"})
    for (const auto* mode : {"rsrp", "all"}) rows.push_back(sample_summary(kind, mode));
  const auto text = summary_csv(rows);
  const auto lines = csv::split_lines(text);
  REQUIRE(lines.size() == 7);  // header + 6 data rows
  CHECK(lines[0] == "kind,mode,pp_reduction,pp_f1,ho_reduction,tos_gain,train_s,infer_s,params");
  CHECK(lines[1] == "gru,rsrp,98.15,45.10,46.25,32.53,na,na,777");
}

TEST_CASE("emit_report writes deterministic bytes") {
  namespace fs = std::filesystem;
  const fs::path dir1 = fs::temp_directory_path() / "hoseq_report_a";
  const fs::path dir2 = fs::temp_directory_path() / "hoseq_report_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  std::vector<MetricsSummary> rows{sample_summary("gru", "all"),
                                   sample_summary("lstm", "all")};
  const auto w1 = emit_report(rows, dir1);
  const auto w2 = emit_report(rows, dir2);
  REQUIRE(w1.size() == w2.size());
  CHECK(w1.size() == 6);  // csv, txt, 4 charts
  for (std::size_t i = 0; i < w1.size(); ++i) {
    std::ifstream a(w1[i], std::ios::binary), b(w2[i], std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(!sa.str().empty());
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("emit_report creates the output directory") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "hoseq_report_nested" / "deep";
  fs::remove_all(dir.parent_path());
  std::vector<MetricsSummary> rows{sample_summary("gru", "all")};
  emit_report(rows, dir);
  CHECK(fs::exists(dir / "summary.csv"));
  fs::remove_all(dir.parent_path());
}
