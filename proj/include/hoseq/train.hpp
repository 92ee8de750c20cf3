#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "hoseq/csv.hpp"
#include "hoseq/error.hpp"
#include "hoseq/features.hpp"
#include "hoseq/models.hpp"
#include "hoseq/rng.hpp"

namespace hoseq::nn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double dropout_prob = 0.1;
  int max_epochs = 500;
  int patience = 150;
  int batch_size = 64;
  double lambda_pp = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (dropout_prob < 0 || dropout_prob >= 1) throw ConfigError("dropout must be in [0,1)");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lambda_pp < 0) throw ConfigError("lambda_pp must be >= 0");
  }
};

struct EpochStat {
  int epoch = 0;  // epoch 0 is the pre-training evaluation
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainHistory {
  std::vector<EpochStat> epochs;
  int stopped_epoch = 0;
  double best_val_loss = 0;
  double wall_train_s = 0;
  double wall_infer_s = 0;  // filled by the evaluation pass, not by train()
  std::size_t param_count = 0;

  std::string to_csv() const {
    std::string out = "epoch,train_loss,val_loss\n";
    for (const auto& e : epochs) {
      out += csv::fmt(static_cast<std::int64_t>(e.epoch));
      out += ',';
      out += csv::fmt(e.train_loss);
      out += ',';
      out += csv::fmt(e.val_loss);
      out += '\n';
    }
    return out;
  }
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& what, TrainHistory h)
      : Error(what), history(std::move(h)) {}
  TrainHistory history;
};

class SingleClass : public Error {
 public:
  using Error::Error;
};

struct Adam {
  double lr;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;

  Adam(double lr_, std::size_t n) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& theta, const std::vector<double>& grad) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

inline feat::ClassWeights weights_from_windows(std::span<const feat::SequenceWindow> ws) {
  std::size_t pos = 0;
  for (const auto& w : ws) pos += w.target_pp;
  if (pos == 0 || pos == ws.size())
    throw SingleClass("training labels contain a single class");
  const double n = static_cast<double>(ws.size());
  return {n / (2.0 * static_cast<double>(ws.size() - pos)),
          n / (2.0 * static_cast<double>(pos))};
}

// Adam + dropout + early stopping. Deterministic for a given cfg.seed: init,
// batch order and dropout masks all derive from it. Stops once the
// validation loss has failed to improve by >= 1e-6 for `patience`
// consecutive epochs (the best starts at +inf, so a frozen validation
// stream stops at exactly patience + 1). The returned parameters are the
// best-validation snapshot.
inline std::pair<PredictorParams, TrainHistory> train(
    ModelKind kind, int hidden_dim, std::span<const feat::SequenceWindow> train_ws,
    std::span<const feat::SequenceWindow> val_ws, const TrainConfig& cfg) {
  cfg.validate();
  if (train_ws.empty() || val_ws.empty()) throw Error("train/val split is empty");

  const feat::ClassWeights weights = weights_from_windows(train_ws);
  const int F = train_ws.front().features.cols;
  const int L = train_ws.front().features.rows;

  PredictorParams params = make_params(kind, F, hidden_dim, L);
  init_params(params, cfg.seed);

  TrainHistory hist;
  hist.param_count = params.param_count();

  const auto t_start = std::chrono::steady_clock::now();

  const double init_train = batch_loss(params, train_ws, weights, cfg.lambda_pp);
  const double init_val = batch_loss(params, val_ws, weights, cfg.lambda_pp);
  hist.epochs.push_back({0, init_train, init_val});

  Adam adam(cfg.learning_rate, params.param_count());
  Rng order_rng(cfg.seed, 0x0bdeULL);
  Rng drop_rng(cfg.seed, 0xd20bULL);

  std::vector<std::size_t> idx(train_ws.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});

  std::vector<double> best_params = params.block.data;
  double best_val = std::numeric_limits<double>::infinity();
  hist.best_val_loss = best_val;
  int bad_epochs = 0;

  ParamBlock grads = params.block;  // same layout, zeroed per batch
  Tape tape;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // deterministic Fisher-Yates from the seed
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    double epoch_loss = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(idx.size(), start + cfg.batch_size);
      const double bsz = static_cast<double>(stop - start);
      std::fill(grads.data.begin(), grads.data.end(), 0.0);
      double loss_sum = 0;
      for (std::size_t k = start; k < stop; ++k) {
        const auto& w = train_ws[idx[k]];
        DropoutMask mask;
        const DropoutMask* mp = nullptr;
        if (cfg.dropout_prob > 0) {
          mask = DropoutMask::sample(params, w.features.rows, cfg.dropout_prob, drop_rng);
          mp = &mask;
        }
        const ForwardOut out = forward(params, w.features, tape, mp);
        loss_sum += window_loss(out, w.target_tos_s, w.target_pp, weights, cfg.lambda_pp);
        const LossGrad lg =
            window_loss_grad(out, w.target_tos_s, w.target_pp, weights, cfg.lambda_pp);
        backward(params, w.features, tape, lg.d_tos / bsz, lg.d_logit / bsz, mp, grads);
      }
      adam.step(params.block.data, grads.data);
      epoch_loss += loss_sum;
      seen += stop - start;
    }
    const double train_loss = epoch_loss / static_cast<double>(seen);
    const double val_loss = batch_loss(params, val_ws, weights, cfg.lambda_pp);
    hist.epochs.push_back({epoch, train_loss, val_loss});
    hist.stopped_epoch = epoch;

    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      hist.wall_train_s = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t_start).count();
      throw NonFiniteLoss("training diverged at epoch " + std::to_string(epoch), hist);
    }

    if (best_val - val_loss >= 1e-6) {
      best_val = val_loss;
      best_params = params.block.data;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      break;
    }
  }

  params.block.data = best_params;
  hist.best_val_loss = best_val;
  hist.wall_train_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(params), std::move(hist)};
}

// ---------------------------------------------------------------------------
// grid search

struct GridSpace {
  std::vector<int> seq_len = {5, 10, 20};
  std::vector<int> hidden_dim = {16, 32, 64};
  std::vector<double> learning_rate = {1e-3, 3e-4};
};

struct GridCell {
  ModelKind kind = ModelKind::GRU;
  int seq_len = 0;
  int hidden_dim = 0;
  double learning_rate = 0;
  bool failed = false;
  std::string error;
  double val_loss = 0;
  std::size_t param_count = 0;
  int stopped_epoch = 0;
};

struct GridResult {
  std::vector<GridCell> cells;  // enumeration order: kind, L, H, lr
  std::size_t best_index = 0;

  const GridCell& best() const { return cells[best_index]; }
};

// Every combination trains under the same seed discipline; a failing cell is
// recorded and the sweep continues. Ties break toward fewer parameters, then
// the lexicographically smaller (L, H, lr).
//
// `make_split` builds (train, val) windows for a requested sequence length;
// window construction depends on L, so the sweep owns that loop.
template <class MakeSplit>
inline GridResult grid_search(std::span<const ModelKind> kinds, const GridSpace& space,
                              MakeSplit&& make_split, const TrainConfig& base_cfg,
                              int jobs = 1) {
  if (kinds.empty() || space.seq_len.empty() || space.hidden_dim.empty() ||
      space.learning_rate.empty())
    throw ConfigError("grid space is empty");

  GridResult result;
  for (const ModelKind kind : kinds)
    for (const int L : space.seq_len)
      for (const int H : space.hidden_dim)
        for (const double lr : space.learning_rate) {
          GridCell c;
          c.kind = kind;
          c.seq_len = L;
          c.hidden_dim = H;
          c.learning_rate = lr;
          result.cells.push_back(c);
        }

  auto run_cell = [&](GridCell& c) {
    try {
      const auto [train_ws, val_ws] = make_split(c.seq_len);
      TrainConfig cfg = base_cfg;
      cfg.learning_rate = c.learning_rate;
      const auto [params, hist] = train(c.kind, c.hidden_dim, train_ws, val_ws, cfg);
      c.val_loss = hist.best_val_loss;
      c.param_count = params.param_count();
      c.stopped_epoch = hist.stopped_epoch;
    } catch (const Error& e) {
      c.failed = true;
      c.error = e.what();
    }
  };

  if (jobs <= 1) {
    for (auto& c : result.cells) run_cell(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= result.cells.size()) return;
          run_cell(result.cells[i]);
        }
      });
    for (auto& t : pool) t.join();
  }

  bool found = false;
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& c = result.cells[i];
    if (c.failed) continue;
    if (!found) {
      result.best_index = i;
      found = true;
      continue;
    }
    const auto& b = result.cells[result.best_index];
    const auto key = [](const GridCell& g) {
      return std::make_tuple(g.val_loss, g.param_count, g.seq_len, g.hidden_dim,
                             g.learning_rate);
    };
    if (key(c) < key(b)) result.best_index = i;
  }
  if (!found) throw Error("every grid cell failed");
  return result;
}

inline std::string grid_to_csv(const GridResult& r) {
  std::string out = "kind,seq_len,hidden_dim,lr,status,val_loss,param_count,stopped_epoch\n";
  for (const auto& c : r.cells) {
    out += to_string(c.kind);
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(c.seq_len));
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(c.hidden_dim));
    out += ',';
    out += csv::fmt(c.learning_rate);
    out += ',';
    out += c.failed ? "failed" : "ok";
    out += ',';
    if (!c.failed) out += csv::fmt(c.val_loss);
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(c.param_count));
    out += ',';
    out += csv::fmt(static_cast<std::int64_t>(c.stopped_epoch));
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// finite-difference verification

// Max over all parameters of |g_a - g_n| / max(1e-8, |g_a| + |g_n|), with
// g_n the central difference at eps = 1e-5. Dropout off.
inline double grad_check(ModelKind kind, int input_dim, int hidden_dim, int seq_len,
                         std::uint64_t seed) {
  PredictorParams params = make_params(kind, input_dim, hidden_dim, seq_len);
  init_params(params, seed);

  Rng rng(seed, 0x96adeULL);
  std::vector<feat::SequenceWindow> batch(3);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto& w = batch[k];
    w.features = la::Mat(seq_len, input_dim);
    for (auto& v : w.features.a) v = rng.uniform();
    w.target_tos_s = rng.uniform(0.5, 20.0);
    w.target_pp = k % 2 == 1;
  }
  const feat::ClassWeights weights{0.75, 1.5};
  const double lambda_pp = 1.0;

  ParamBlock grads = params.block;
  std::fill(grads.data.begin(), grads.data.end(), 0.0);
  Tape tape;
  const double bsz = static_cast<double>(batch.size());
  for (const auto& w : batch) {
    const ForwardOut out = forward(params, w.features, tape);
    const LossGrad lg = window_loss_grad(out, w.target_tos_s, w.target_pp, weights, lambda_pp);
    backward(params, w.features, tape, lg.d_tos / bsz, lg.d_logit / bsz, nullptr, grads);
  }

  const double eps = 1e-5;
  double max_rel = 0;
  for (std::size_t i = 0; i < params.block.data.size(); ++i) {
    const double saved = params.block.data[i];
    params.block.data[i] = saved + eps;
    const double lp = batch_loss(params, batch, weights, lambda_pp);
    params.block.data[i] = saved - eps;
    const double lm = batch_loss(params, batch, weights, lambda_pp);
    params.block.data[i] = saved;
    const double gn = (lp - lm) / (2.0 * eps);
    const double ga = grads.data[i];
    const double rel = std::abs(ga - gn) / std::max(1e-8, std::abs(ga) + std::abs(gn));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// serialization: magic HOSQ1, kind byte, dims, then row-major 64-bit
// little-endian tensors in the documented construction order.

inline void save_params(const PredictorParams& p, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write("HOSQ1", 5);
  const unsigned char kind = static_cast<unsigned char>(p.kind);
  f.write(reinterpret_cast<const char*>(&kind), 1);
  const std::int32_t dims[4] = {p.input_dim, p.hidden_dim, p.seq_len, p.n_heads};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  f.write(reinterpret_cast<const char*>(p.block.data.data()),
          static_cast<std::streamsize>(p.block.data.size() * sizeof(double)));
  if (!f) throw IoError("short write to '" + path + "'");
}

inline PredictorParams load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  char magic[5];
  f.read(magic, 5);
  if (!f || std::string_view(magic, 5) != "HOSQ1") throw IoError("bad magic in '" + path + "'");
  unsigned char kind_byte = 0;
  f.read(reinterpret_cast<char*>(&kind_byte), 1);
  if (kind_byte > 2) throw IoError("bad model kind in '" + path + "'");
  std::int32_t dims[4];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!f) throw IoError("truncated header in '" + path + "'");
  PredictorParams p = make_params(static_cast<ModelKind>(kind_byte), dims[0], dims[1], dims[2]);
  f.read(reinterpret_cast<char*>(p.block.data.data()),
         static_cast<std::streamsize>(p.block.data.size() * sizeof(double)));
  if (!f) throw IoError("truncated tensors in '" + path + "'");
  return p;
}

}  // namespace hoseq::nn
