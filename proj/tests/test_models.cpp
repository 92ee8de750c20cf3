#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hoseq/models.hpp"
#include "hoseq/train.hpp"

using namespace hoseq;
using namespace hoseq::nn;

namespace {

la::Mat random_input(int L, int F, std::uint64_t seed) {
  Rng rng(seed);
  la::Mat x(L, F);
  for (auto& v : x.a) v = rng.uniform();
  return x;
}

void set_tensor(PredictorParams& p, const std::string& name, double value) {
  for (std::size_t i = 0; i < p.block.tensors.size(); ++i)
    if (p.block.tensors[i].name == name) {
      auto v = p.block.view(i);
      for (int r = 0; r < v.rows; ++r)
        for (int c = 0; c < v.cols; ++c) v(r, c) = value;
    }
}

}  // namespace

TEST_CASE("gru with all-zero weights outputs the head bias") {
  auto p = make_params(ModelKind::GRU, 4, 8, 6);  // zero-initialized
  set_tensor(p, "head_b", 0.0);
  for (std::size_t i = 0; i < p.block.tensors.size(); ++i)
    if (p.block.tensors[i].name == "head_b") {
      auto v = p.block.view(i);
      v.p[0] = 1.25;
      v.p[1] = -0.5;
    }
  const auto out = forward(p, random_input(6, 4, 1));
  CHECK(out.tos_log1p == 1.25);
  CHECK(out.pp_logit == -0.5);
}

TEST_CASE("lstm with all-zero weights outputs the head bias") {
  auto p = make_params(ModelKind::LSTM, 4, 8, 6);
  for (std::size_t i = 0; i < p.block.tensors.size(); ++i)
    if (p.block.tensors[i].name == "head_b") {
      auto v = p.block.view(i);
      v.p[0] = 0.75;
      v.p[1] = 2.0;
    }
  const auto out = forward(p, random_input(6, 4, 2));
  CHECK(out.tos_log1p == 0.75);
  CHECK(out.pp_logit == 2.0);
}

TEST_CASE("transformer with zero query/key weights attends uniformly") {
  auto p = make_params(ModelKind::TRANSFORMER, 4, 8, 6);
  init_params(p, 3);
  set_tensor(p, "Wq", 0.0);
  set_tensor(p, "Wk", 0.0);
  Tape tape;
  forward(p, random_input(6, 4, 3), tape);
  for (const auto& A : tape.A)
    for (int t = 0; t < A.rows; ++t)
      for (int u = 0; u < A.cols; ++u)
        CHECK(A(t, u) == Catch::Approx(1.0 / 6.0).margin(1e-12));
}

TEST_CASE("attention rows sum to one") {
  auto p = make_params(ModelKind::TRANSFORMER, 5, 8, 7);
  init_params(p, 11);
  Tape tape;
  forward(p, random_input(7, 5, 12), tape);
  for (const auto& A : tape.A)
    for (int t = 0; t < A.rows; ++t) {
      double s = 0;
      for (int u = 0; u < A.cols; ++u) s += A(t, u);
      CHECK(s == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("gru hidden state stays inside the unit box") {
  auto p = make_params(ModelKind::GRU, 6, 8, 20);
  init_params(p, 5);
  for (auto& v : p.block.data) v *= 10.0;  // exaggerate
  Tape tape;
  forward(p, random_input(20, 6, 9), tape);
  for (const auto& h : tape.h)
    for (const double v : h) CHECK(std::abs(v) <= 1.0 + 1e-12);
}

TEST_CASE("forward is side-effect free") {
  auto p = make_params(ModelKind::LSTM, 4, 8, 6);
  init_params(p, 21);
  const auto x = random_input(6, 4, 22);
  const auto a = forward(p, x);
  const auto b = forward(p, x);
  CHECK(a.tos_log1p == b.tos_log1p);
  CHECK(a.pp_logit == b.pp_logit);
}

TEST_CASE("dimension mismatch is rejected") {
  auto p = make_params(ModelKind::GRU, 4, 8, 6);
  REQUIRE_THROWS_AS(forward(p, random_input(6, 5, 1)), DimensionMismatch);
  auto tp = make_params(ModelKind::TRANSFORMER, 4, 8, 6);
  REQUIRE_THROWS_AS(forward(tp, random_input(5, 4, 1)), DimensionMismatch);
}

TEST_CASE("loss values") {
  feat::ClassWeights w{1.0, 1.0};
  SECTION("perfect predictions with lambda zero") {
    ForwardOut out;
    out.tos_log1p = std::log1p(4.0);
    out.pp_logit = 3.0;
    CHECK(window_loss(out, 4.0, true, w, 0.0) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("bce at an even logit is ln 2") {
    ForwardOut out;
    out.tos_log1p = std::log1p(4.0);
    out.pp_logit = 0.0;  // pp_prob = 0.5
    const double l0 = window_loss(out, 4.0, false, w, 1.0);
    const double l1 = window_loss(out, 4.0, true, w, 1.0);
    CHECK((l0 + l1) / 2.0 == Catch::Approx(std::log(2.0)).margin(1e-12));
  }
  SECTION("doubling the class weights doubles the bce term") {
    ForwardOut out;
    out.tos_log1p = 0.4;
    out.pp_logit = 1.3;
    const double base = window_loss(out, 2.0, true, {1.0, 1.0}, 1.0) -
                        window_loss(out, 2.0, true, {1.0, 1.0}, 0.0);
    const double doubled = window_loss(out, 2.0, true, {2.0, 2.0}, 1.0) -
                           window_loss(out, 2.0, true, {2.0, 2.0}, 0.0);
    CHECK(doubled == Catch::Approx(2.0 * base).epsilon(1e-12));
  }
}

TEST_CASE("gradient check: all kinds pass the finite-difference bound") {
  for (const auto kind : {ModelKind::GRU, ModelKind::LSTM, ModelKind::TRANSFORMER}) {
    const double err = grad_check(kind, 4, 8, 6, 1);
    INFO(to_string(kind));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("params serialize and load back bit-exact") {
  auto p = make_params(ModelKind::TRANSFORMER, 5, 8, 9);
  init_params(p, 77);
  const std::string path = "/tmp/hoseq_test_params.bin";
  save_params(p, path);
  const auto q = load_params(path);
  CHECK(q.kind == p.kind);
  CHECK(q.input_dim == p.input_dim);
  CHECK(q.hidden_dim == p.hidden_dim);
  CHECK(q.seq_len == p.seq_len);
  REQUIRE(q.block.data.size() == p.block.data.size());
  for (std::size_t i = 0; i < p.block.data.size(); ++i)
    CHECK(q.block.data[i] == p.block.data[i]);
  const auto x = random_input(9, 5, 6);
  CHECK(forward(p, x).tos_log1p == forward(q, x).tos_log1p);
}

namespace {

// ToS is an affine function of the last-row slope feature plus noise; the
// ping-pong label follows the same feature.
std::vector<feat::SequenceWindow> synthetic_task(std::size_t n, int L, int F,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<feat::SequenceWindow> ws(n);
  for (auto& w : ws) {
    w.features = la::Mat(L, F);
    for (auto& v : w.features.a) v = rng.uniform();
    const double s = w.features(L - 1, 0);
    w.target_tos_s = std::expm1(0.5 + 1.2 * s + rng.gauss(0.0, 0.05));
    w.target_pp = s > 0.5;
  }
  return ws;
}

}  // namespace

TEST_CASE("training halves the validation loss on a learnable task") {
  const auto all = synthetic_task(600, 6, 4, 42);
  const std::vector<feat::SequenceWindow> train_ws(all.begin(), all.begin() + 480);
  const std::vector<feat::SequenceWindow> val_ws(all.begin() + 480, all.end());
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.dropout_prob = 0.0;
  cfg.batch_size = 96;
  cfg.seed = 3;
  const auto [params, hist] = train(ModelKind::GRU, 8, train_ws, val_ws, cfg);
  REQUIRE(hist.epochs.size() >= 2);
  CHECK(hist.epochs.front().epoch == 0);
  CHECK(hist.best_val_loss <= 0.5 * hist.epochs.front().val_loss);
}

TEST_CASE("a frozen validation stream stops at exactly patience + 1") {
  const auto all = synthetic_task(60, 4, 3, 9);
  const std::vector<feat::SequenceWindow> train_ws(all.begin(), all.begin() + 40);
  const std::vector<feat::SequenceWindow> val_ws(all.begin() + 40, all.end());
  TrainConfig cfg;
  cfg.learning_rate = 1e-30;  // params effectively frozen
  cfg.max_epochs = 50;
  cfg.patience = 6;
  cfg.dropout_prob = 0.0;
  cfg.seed = 4;
  const auto [params, hist] = train(ModelKind::GRU, 8, train_ws, val_ws, cfg);
  CHECK(hist.stopped_epoch == 7);
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
  const auto all = synthetic_task(80, 5, 4, 15);
  const std::vector<feat::SequenceWindow> train_ws(all.begin(), all.begin() + 64);
  const std::vector<feat::SequenceWindow> val_ws(all.begin() + 64, all.end());
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.patience = 12;
  cfg.dropout_prob = 0.2;
  cfg.seed = 31;
  const auto [p1, h1] = train(ModelKind::LSTM, 8, train_ws, val_ws, cfg);
  const auto [p2, h2] = train(ModelKind::LSTM, 8, train_ws, val_ws, cfg);
  REQUIRE(p1.block.data.size() == p2.block.data.size());
  for (std::size_t i = 0; i < p1.block.data.size(); ++i)
    CHECK(p1.block.data[i] == p2.block.data[i]);
  for (std::size_t i = 0; i < h1.epochs.size(); ++i)
    CHECK(h1.epochs[i].val_loss == h2.epochs[i].val_loss);
}

TEST_CASE("full-batch training is invariant to window order") {
  auto all = synthetic_task(50, 4, 3, 19);
  for (std::size_t i = 0; i < all.size(); ++i) all[i].target_pp = i % 2 == 0;
  const std::vector<feat::SequenceWindow> val_ws(all.begin() + 40, all.end());
  std::vector<feat::SequenceWindow> train_a(all.begin(), all.begin() + 40);
  std::vector<feat::SequenceWindow> train_b(train_a.rbegin(), train_a.rend());
  TrainConfig cfg;
  cfg.max_epochs = 8;
  cfg.patience = 8;
  cfg.dropout_prob = 0.0;
  cfg.batch_size = 4000;  // full batch
  cfg.seed = 23;
  const auto [pa, ha] = train(ModelKind::GRU, 8, train_a, val_ws, cfg);
  const auto [pb, hb] = train(ModelKind::GRU, 8, train_b, val_ws, cfg);
  for (std::size_t i = 0; i < ha.epochs.size(); ++i)
    CHECK(ha.epochs[i].val_loss == Catch::Approx(hb.epochs[i].val_loss).margin(1e-9));
}

TEST_CASE("a diverging run aborts with its history attached") {
  const auto all = synthetic_task(40, 4, 3, 27);
  const std::vector<feat::SequenceWindow> train_ws(all.begin(), all.begin() + 30);
  const std::vector<feat::SequenceWindow> val_ws(all.begin() + 30, all.end());
  TrainConfig cfg;
  cfg.learning_rate = 1e200;
  cfg.max_epochs = 20;
  cfg.patience = 20;
  cfg.dropout_prob = 0.0;
  try {
    train(ModelKind::GRU, 8, train_ws, val_ws, cfg);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.history.epochs.size() >= 2);  // epoch 0 plus the diverged epoch
  }
}

TEST_CASE("training with a single label class is rejected") {
  auto all = synthetic_task(40, 4, 3, 25);
  for (auto& w : all) w.target_pp = false;
  const std::vector<feat::SequenceWindow> train_ws(all.begin(), all.begin() + 30);
  const std::vector<feat::SequenceWindow> val_ws(all.begin() + 30, all.end());
  TrainConfig cfg;
  REQUIRE_THROWS_AS(train(ModelKind::GRU, 8, train_ws, val_ws, cfg), SingleClass);
}

TEST_CASE("grid search: single point, cardinality, failed-cell isolation") {
  const auto all = synthetic_task(60, 4, 3, 33);
  auto make_split = [&all](int L) {
    std::vector<feat::SequenceWindow> tr, va;
    for (std::size_t i = 0; i < all.size(); ++i) {
      feat::SequenceWindow w = all[i];
      la::Mat m(L, w.features.cols);
      for (int r = 0; r < L; ++r)
        for (int c = 0; c < w.features.cols; ++c)
          m(r, c) = w.features(std::min(r, w.features.rows - 1), c);
      w.features = std::move(m);
      (i < 45 ? tr : va).push_back(std::move(w));
    }
    return std::make_pair(tr, va);
  };
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.dropout_prob = 0.0;

  SECTION("one-point space returns it") {
    GridSpace space;
    space.seq_len = {4};
    space.hidden_dim = {8};
    space.learning_rate = {1e-3};
    const ModelKind kinds[] = {ModelKind::GRU};
    const auto r = grid_search(kinds, space, make_split, cfg);
    REQUIRE(r.cells.size() == 1);
    CHECK(r.best().seq_len == 4);
  }
  SECTION("2x2x2 space yields 8 rows per kind") {
    GridSpace space;
    space.seq_len = {3, 4};
    space.hidden_dim = {4, 8};
    space.learning_rate = {1e-3, 3e-4};
    const ModelKind kinds[] = {ModelKind::GRU, ModelKind::LSTM};
    const auto r = grid_search(kinds, space, make_split, cfg, 2);
    CHECK(r.cells.size() == 16);
  }
  SECTION("a failing cell is recorded and the sweep completes") {
    GridSpace space;
    space.seq_len = {4};
    space.hidden_dim = {8, 7};  // 7 breaks the two-head transformer split
    space.learning_rate = {1e-3};
    const ModelKind kinds[] = {ModelKind::TRANSFORMER};
    const auto r = grid_search(kinds, space, make_split, cfg);
    REQUIRE(r.cells.size() == 2);
    CHECK(!r.cells[0].failed);
    CHECK(r.cells[1].failed);
    CHECK(r.best_index == 0);
    const auto text = grid_to_csv(r);
    CHECK(text.find("failed") != std::string::npos);
  }
}
