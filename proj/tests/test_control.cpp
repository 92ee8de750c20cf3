#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hoseq/control.hpp"
#include "hoseq/handover.hpp"
#include "hoseq/pipeline.hpp"
#include "hoseq/radio_sim.hpp"

using namespace hoseq;
using namespace hoseq::ctrl;

namespace {

const ControlThresholds kTh;  // defaults: tos 5, rsrp 5, snr 3, osc 2, -110, 5

DetectInput din(double y_p, double rsrp_slope, double snr_slope) {
  DetectInput d;
  d.y_p_s = y_p;
  d.rsrp_slope_db_s = rsrp_slope;
  d.snr_slope_db_s = snr_slope;
  return d;
}

}  // namespace

TEST_CASE("detect: stated examples") {
  const feat::ClassWeights w{1.0, 1.0};
  SECTION("short and oscillating") {
    const auto f = detect_one(din(2.0, 6.0, 0.0), kTh, w, WeightMode::RULE);
    CHECK(f.short_stay);
    CHECK(f.osc);
    CHECK(f.is_pp);
  }
  SECTION("long stay is never flagged") {
    const auto f = detect_one(din(10.0, 100.0, 100.0), kTh, w, WeightMode::RULE);
    CHECK(!f.short_stay);
    CHECK(!f.is_pp);
  }
  SECTION("very short stay flags without oscillation") {
    const auto f = detect_one(din(1.0, 0.0, 0.0), kTh, w, WeightMode::RULE);
    CHECK(f.short_stay);
    CHECK(!f.osc);
    CHECK(f.is_pp);  // y_p < osc_th branch
  }
}

TEST_CASE("detect: exhaustive truth table with unit weights") {
  const feat::ClassWeights w{1.0, 1.0};
  // axes: short, osc-by-rsrp, osc-by-snr, y_p < osc_th
  for (int mask = 0; mask < 16; ++mask) {
    const bool want_short = mask & 1;
    const bool osc_rsrp = mask & 2;
    const bool osc_snr = mask & 4;
    const bool below_osc_th = mask & 8;
    // y_p must realize both "short" and "y_p < osc_th" consistently:
    // below_osc_th implies short (osc_th < tos_th), so skip contradictions.
    if (below_osc_th && !want_short) continue;
    const double y_p = below_osc_th ? 1.0 : (want_short ? 3.0 : 10.0);
    const double rsrp_slope = osc_rsrp ? 7.0 : 1.0;
    const double snr_slope = osc_snr ? 4.0 : 0.5;
    const auto f = detect_one(din(y_p, rsrp_slope, snr_slope), kTh, w, WeightMode::RULE);
    const bool expect = want_short && (osc_rsrp || osc_snr || below_osc_th);
    INFO("mask=" << mask);
    CHECK(f.short_stay == want_short);
    CHECK(f.osc == (osc_rsrp || osc_snr));
    CHECK(f.is_pp == expect);
  }
}

TEST_CASE("detect: threshold boundaries are strict") {
  const feat::ClassWeights w{1.0, 1.0};
  SECTION("y_p equal to the ToS threshold is not short") {
    const auto f = detect_one(din(5.0, 100.0, 0.0), kTh, w, WeightMode::RULE);
    CHECK(!f.short_stay);
    CHECK(!f.is_pp);
  }
  SECTION("slope equal to its threshold does not oscillate") {
    const auto f = detect_one(din(3.0, 5.0, 3.0), kTh, w, WeightMode::RULE);
    CHECK(!f.osc);
  }
  SECTION("y_p equal to osc_th does not take the second branch") {
    const auto f = detect_one(din(2.0, 0.0, 0.0), kTh, w, WeightMode::RULE);
    CHECK(f.short_stay);
    CHECK(!f.is_pp);
  }
}

TEST_CASE("detect: counting over a batch") {
  const feat::ClassWeights w{1.0, 1.0};
  std::vector<DetectInput> events;
  auto add = [&](double y_p, double slope, bool truth) {
    auto d = din(y_p, slope, 0.0);
    d.truth_pp = truth;
    events.push_back(d);
  };
  add(2.0, 6.0, true);    // detected, correct
  add(2.0, 6.0, false);   // detected, false positive
  add(10.0, 6.0, true);   // missed
  add(10.0, 0.0, false);  // true negative
  const auto r = detect(events, kTh, w, WeightMode::RULE);
  CHECK(r.n_pp == 2);
  CHECK(r.n_cor == 1);
  CHECK(r.n_cor <= r.n_pp);
}

TEST_CASE("detect: oracle weight mode keeps only label-favoured detections") {
  // minority positives: w1 > 1 > w0: the label-driven counting mode
  const feat::ClassWeights w{0.625, 2.5};
  auto pos = din(2.0, 6.0, 0.0);
  pos.truth_pp = true;
  auto neg = pos;
  neg.truth_pp = false;
  CHECK(detect_one(pos, kTh, w, WeightMode::ORACLE).is_pp);
  CHECK(!detect_one(neg, kTh, w, WeightMode::ORACLE).is_pp);
  REQUIRE_THROWS_AS(detect_one(din(2.0, 6.0, 0.0), kTh, w, WeightMode::ORACLE),
                    MissingPrediction);
}

TEST_CASE("detect: gated mode applies the weighted classifier score") {
  const feat::ClassWeights w{1.0, 1.0};  // gate passes iff pp_prob >= 1.0
  REQUIRE_THROWS_AS(detect_one(din(2.0, 6.0, 0.0), kTh, w, WeightMode::GATED),
                    MissingPrediction);
  auto d = din(2.0, 6.0, 0.0);
  d.pp_prob = 0.9;
  CHECK(!detect_one(d, kTh, w, WeightMode::GATED).is_pp);
  const feat::ClassWeights skewed{0.5, 4.5};  // w1/(w0+w1) = 0.9
  d.pp_prob = 0.6;
  CHECK(detect_one(d, kTh, skewed, WeightMode::GATED).is_pp);
}

namespace {

AvoidInput ain(double y_p, double b_prev, double b_last, double rsrp, bool is_pp) {
  AvoidInput a;
  a.y_p_s = y_p;
  a.bearings_deg = {b_prev, b_last};
  a.serving_rsrp_dbm = rsrp;
  a.is_pp = is_pp;
  return a;
}

}  // namespace

TEST_CASE("avoid: stated examples") {
  SECTION("sharp turn while safe suppresses") {
    const auto f = avoid_one(ain(10.0, 40.0, 100.0, -90.0, false), kTh);
    CHECK(f.maway);
    CHECK(f.safe);
    CHECK(f.unnec);
    CHECK(f.decision == Decision::SUPPRESS);
  }
  SECTION("unsafe serving signal fails open") {
    const auto f = avoid_one(ain(1.0, 40.0, 100.0, -115.0, false), kTh);
    CHECK(!f.safe);
    CHECK(!f.unnec);
    CHECK(f.decision == Decision::EXECUTE);
  }
  SECTION("bearing wrap: 350 to 10 is a 20 degree turn") {
    const auto f = avoid_one(ain(10.0, 350.0, 10.0, -90.0, false), kTh);
    CHECK(!f.maway);
    CHECK(f.decision == Decision::EXECUTE);
  }
}

TEST_CASE("avoid: exhaustive truth table") {
  // axes: is_pp, maway, safe, y_p < theta_tos
  for (int mask = 0; mask < 16; ++mask) {
    const bool is_pp = mask & 1;
    const bool maway = mask & 2;
    const bool safe = mask & 4;
    const bool short_pred = mask & 8;
    const auto f = avoid_one(ain(short_pred ? 2.0 : 10.0, 0.0, maway ? 90.0 : 10.0,
                                 safe ? -90.0 : -120.0, is_pp),
                             kTh);
    const bool unnec = (short_pred || maway) && safe;
    INFO("mask=" << mask);
    CHECK(f.maway == maway);
    CHECK(f.safe == safe);
    CHECK(f.unnec == unnec);
    CHECK(f.decision == ((is_pp || unnec) ? Decision::SUPPRESS : Decision::EXECUTE));
  }
}

TEST_CASE("avoid: a 45 degree turn exactly is not moving away") {
  const auto f = avoid_one(ain(10.0, 0.0, 45.0, -90.0, false), kTh);
  CHECK(!f.maway);
}

TEST_CASE("avoid: fewer than two bearings is an error") {
  AvoidInput a;
  a.bearings_deg = {90.0};
  REQUIRE_THROWS_AS(avoid_one(a, kTh), TooFewBearings);
}

TEST_CASE("circular bearing difference") {
  CHECK(circular_diff_deg(350.0, 10.0) == Catch::Approx(20.0));
  CHECK(circular_diff_deg(0.0, 180.0) == Catch::Approx(180.0));
  CHECK(circular_diff_deg(90.0, 90.0) == 0.0);
  CHECK(circular_diff_deg(10.0, 350.0) == Catch::Approx(20.0));
}

namespace {

struct ReplayFixture {
  DriveTrace trace;
  ho::HandoverLog baseline;
  nn::PredictorParams model;
  feat::FeatureSpec spec;
  feat::ClassWeights weights{1.0, 1.0};
  ho::A3Params a3;

  explicit ReplayFixture(const sim::Scenario& scenario, std::uint64_t seed = 7) {
    trace = sim::sample_trace(scenario, seed);
    baseline = ho::label_log(trace, a3);
    spec.mode = feat::FeatureMode::ALL;
    spec.seq_len = 6;
    auto ws = feat::build_windows(trace, baseline, spec);
    spec = feat::fit_minmax(ws.windows, feat::FeatureMode::ALL, 6);
    // all-zero weights with a large ToS head bias: the model deterministically
    // predicts a very long stay, so only the configured rules can suppress
    model = nn::make_params(nn::ModelKind::GRU, feat::feature_count(feat::FeatureMode::ALL),
                            8, 6);
    for (std::size_t i = 0; i < model.block.tensors.size(); ++i)
      if (model.block.tensors[i].name == "head_b") model.block.view(i).p[0] = 10.0;
  }
};

// four cells in a line, no shadowing: monotone handover chain, every cell
// measured at every sample
sim::Scenario straight_line_scenario() {
  sim::Scenario sc;
  for (int k = 0; k < 4; ++k)
    sc.cells.push_back({k + 1, k % 2 == 0 ? -18.0 : 18.0, k * 150.0, 30.0});
  sc.trajectory = {{0.0, -40.0, 0.0}, {0.0, 520.0, 0.0}};
  sc.ue_speed_mps = 10.0;
  sc.sample_period_ms = 200;
  sc.shadowing_sigma_db = 0.0;
  sc.mobility = Mobility::BRT;
  sc.session = Session::VIDEO;
  return sc;
}

}  // namespace

TEST_CASE("replay with nothing detected reproduces the baseline exactly") {
  ReplayFixture fx(sim::generate_scenario(sim::Preset::CORRIDOR_OSCILLATION, 7));
  ControlThresholds none;
  none.tos_th_s = 1e-9;       // short never (y_p >= 0 isn't < 1e-9 in practice)
  none.osc_th_s = 1e-9;
  none.rsrp_slope_th_db_s = 1e18;
  none.snr_slope_th_db_s = 1e18;
  none.theta_tos_s = 1e-9;
  none.maway_deg = 400.0;     // circular diff <= 180, never moving away
  none.theta_rsrp_dbm = 1e9;  // never "safe", so unnec can never fire
  const auto rep = ctrl::replay_with_avoidance(fx.trace, fx.a3, fx.model, fx.spec, none,
                                               fx.weights, fx.baseline);
  REQUIRE(rep.log.events.size() == fx.baseline.events.size());
  CHECK(rep.avoidance.n_avd == 0);
  for (std::size_t i = 0; i < rep.log.events.size(); ++i) {
    CHECK(rep.log.events[i].trigger_ts_ms == fx.baseline.events[i].trigger_ts_ms);
    CHECK(rep.log.events[i].source_cell_id == fx.baseline.events[i].source_cell_id);
    CHECK(rep.log.events[i].target_cell_id == fx.baseline.events[i].target_cell_id);
    CHECK(rep.log.events[i].executed);
    CHECK(rep.log.events[i].pp == fx.baseline.events[i].pp);
    REQUIRE(rep.log.events[i].tos_s.has_value() == fx.baseline.events[i].tos_s.has_value());
    if (rep.log.events[i].tos_s)
      CHECK(*rep.log.events[i].tos_s == *fx.baseline.events[i].tos_s);
  }
}

TEST_CASE("replay with everything suppressed executes nothing") {
  // noise-free monotone multi-cell drive: each baseline event corresponds to
  // exactly one suppressed condition episode against the pinned serving cell
  ReplayFixture fx(straight_line_scenario());
  ControlThresholds all;
  all.tos_th_s = 1e18;
  all.osc_th_s = 1e18;  // short always, second branch always
  all.theta_rsrp_dbm = -1e9;  // always safe
  all.theta_tos_s = 1e18;
  const auto rep = ctrl::replay_with_avoidance(fx.trace, fx.a3, fx.model, fx.spec, all,
                                               fx.weights, fx.baseline);
  CHECK(rep.log.executed_count() == 0);
  CHECK(rep.avoidance.n_avd == fx.baseline.events.size());
  CHECK(rep.avoidance.n_avd == rep.log.events.size());
}

TEST_CASE("suppression never happens via unnec when the serving signal is weak") {
  ReplayFixture fx(sim::generate_scenario(sim::Preset::CORRIDOR_OSCILLATION, 7));
  ControlThresholds th;
  th.theta_rsrp_dbm = -20.0;  // corridor RSRP peaks at the -44 clamp: never safe
  th.theta_tos_s = 1e18;      // y_p < theta_tos always: unnec wants to fire
  const auto rep = ctrl::replay_with_avoidance(fx.trace, fx.a3, fx.model, fx.spec, th,
                                               fx.weights, fx.baseline);
  CHECK(rep.avoidance.n_avd == 0);
  for (const auto& f : rep.avoidance.flags) {
    CHECK(!f.safe);
    CHECK(!f.unnec);
  }
  for (const auto& row : rep.decisions)
    if (row.decision == Decision::SUPPRESS) CHECK(row.is_pp);
}

TEST_CASE("decision log csv shape") {
  DecisionRow r;
  r.index = 0;
  r.trigger_ts_ms = 800;
  r.source = 1;
  r.target = 2;
  r.y_p_s = 3.25;
  r.short_stay = true;
  r.is_pp = true;
  r.safe = true;
  r.decision = Decision::SUPPRESS;
  const auto text = decisions_to_csv(std::vector<DecisionRow>{r});
  CHECK(text ==
        "i,trigger_ts_ms,source,target,y_p,short,osc,maway,safe,is_pp,decision\n"
        "0,800,1,2,3.25,1,0,0,1,1,suppress\n");
}
