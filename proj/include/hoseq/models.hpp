#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hoseq/error.hpp"
#include "hoseq/features.hpp"
#include "hoseq/linalg.hpp"
#include "hoseq/rng.hpp"

namespace hoseq::nn {

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

enum class ModelKind { GRU, LSTM, TRANSFORMER };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::GRU: return "gru";
    case ModelKind::LSTM: return "lstm";
    default: return "transformer";
  }
}

inline std::optional<ModelKind> kind_from_string(std::string_view s) {
  if (s == "gru" || s == "GRU") return ModelKind::GRU;
  if (s == "lstm" || s == "LSTM") return ModelKind::LSTM;
  if (s == "transformer" || s == "TRANSFORMER") return ModelKind::TRANSFORMER;
  return std::nullopt;
}

struct TensorInfo {
  std::string name;
  int rows = 0, cols = 0;
  std::size_t offset = 0;
};

// All weights of one model live in a single flat vector; named views keep
// the math readable and give Adam, the gradient checker, and the serializer
// one canonical tensor order.
struct ParamBlock {
  std::vector<TensorInfo> tensors;
  std::vector<double> data;

  void add(const std::string& name, int rows, int cols) {
    tensors.push_back({name, rows, cols, data.size()});
    data.resize(data.size() + static_cast<std::size_t>(rows) * cols, 0.0);
  }
  la::MatView view(std::size_t i) {
    auto& t = tensors[i];
    return {data.data() + t.offset, t.rows, t.cols};
  }
  la::MatView view(std::size_t i) const {
    auto& t = tensors[i];
    return {const_cast<double*>(data.data()) + t.offset, t.rows, t.cols};
  }
  std::size_t size() const { return data.size(); }
};

// Dual-head sequence predictor: a shared linear head maps the final (or
// pooled) hidden state to (ToS in log1p seconds, ping-pong logit).
//
// Serialized tensor order is the construction order below:
//   GRU:  Wz Uz bz  Wr Ur br  Wh Uh bh  head_W head_b
//   LSTM: Wi Ui bi  Wf Uf bf  Wo Uo bo  Wg Ug bg  head_W head_b
//   TRANSFORMER: We be pos  Wq Wk Wv Wo bo  W1 b1 W2 b2  head_W head_b
struct PredictorParams {
  ModelKind kind = ModelKind::GRU;
  int input_dim = 0;
  int hidden_dim = 0;
  int seq_len = 0;  // positional table size; recurrent kinds accept any L
  int n_heads = 2;
  int ff_dim = 0;
  ParamBlock block;

  std::size_t param_count() const { return block.size(); }
};

namespace detail {

// tensor indices per kind, matching construction order
enum GruT { gWz, gUz, gbz, gWr, gUr, gbr, gWh, gUh, gbh, gHeadW, gHeadB };
enum LstmT { lWi, lUi, lbi, lWf, lUf, lbf, lWo, lUo, lbo, lWg, lUg, lbg, lHeadW, lHeadB };
enum TrT { tWe, tbe, tPos, tWq, tWk, tWv, tWo, tbo, tW1, tb1, tW2, tb2, tHeadW, tHeadB };

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

inline PredictorParams make_params(ModelKind kind, int input_dim, int hidden_dim,
                                   int seq_len) {
  PredictorParams p;
  p.kind = kind;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.seq_len = seq_len;
  p.ff_dim = 2 * hidden_dim;
  const int F = input_dim, H = hidden_dim;
  auto& b = p.block;
  switch (kind) {
    case ModelKind::GRU:
      for (const char* g : {"z", "r", "h"}) {
        b.add(std::string("W") + g, H, F);
        b.add(std::string("U") + g, H, H);
        b.add(std::string("b") + g, H, 1);
      }
      break;
    case ModelKind::LSTM:
      for (const char* g : {"i", "f", "o", "g"}) {
        b.add(std::string("W") + g, H, F);
        b.add(std::string("U") + g, H, H);
        b.add(std::string("b") + g, H, 1);
      }
      break;
    case ModelKind::TRANSFORMER:
      if (H % p.n_heads != 0) throw DimensionMismatch("hidden_dim must be divisible by n_heads");
      b.add("We", H, F);
      b.add("be", H, 1);
      b.add("pos", seq_len, H);
      b.add("Wq", H, H);
      b.add("Wk", H, H);
      b.add("Wv", H, H);
      b.add("Wo", H, H);
      b.add("bo", H, 1);
      b.add("W1", p.ff_dim, H);
      b.add("b1", p.ff_dim, 1);
      b.add("W2", H, p.ff_dim);
      b.add("b2", H, 1);
      break;
  }
  b.add("head_W", 2, H);
  b.add("head_b", 2, 1);
  return p;
}

// uniform(-a, a) with a = 1/sqrt(H), seeded
inline void init_params(PredictorParams& p, std::uint64_t seed) {
  const double a = 1.0 / std::sqrt(static_cast<double>(p.hidden_dim));
  Rng rng(seed, 0x1417u);
  for (double& v : p.block.data) v = rng.uniform(-a, a);
}

struct ForwardOut {
  double tos_log1p = 0;  // regression head, log1p(seconds) domain
  double pp_logit = 0;

  double tos_seconds() const { return std::expm1(tos_log1p); }
  double pp_prob() const { return detail::sigmoid(pp_logit); }
};

// Per-window activation cache for backprop. Buffers are sized lazily so one
// tape can be reused across a batch.
struct Tape {
  // recurrent
  std::vector<std::vector<double>> h;      // L+1 entries, h[0] = 0
  std::vector<std::vector<double>> c;      // LSTM cell states, L+1
  std::vector<std::vector<double>> gate1;  // z / i
  std::vector<std::vector<double>> gate2;  // r / f
  std::vector<std::vector<double>> gate3;  // hc / o
  std::vector<std::vector<double>> gate4;  // rh / g
  // transformer
  la::Mat E, Q, K, V, O, attn, R1, ffact, R2;
  std::vector<la::Mat> A;  // per head, L x L
  std::vector<double> pooled;

  std::vector<double> head_in;  // state after dropout, what the head saw
};

// Dropout is applied to the state the head reads (final hidden for the
// recurrent kinds) and to the attention output inside the transformer
// block. Masks use inverted scaling so inference needs no correction.
struct DropoutMask {
  double keep_scale = 1.0;
  std::vector<double> state;     // H, for head input
  la::Mat attn;                  // L x H, transformer only

  static DropoutMask sample(const PredictorParams& p, int L, double prob, Rng& rng) {
    DropoutMask m;
    m.keep_scale = 1.0 / (1.0 - prob);
    m.state.resize(p.hidden_dim);
    for (auto& v : m.state) v = rng.uniform() < prob ? 0.0 : m.keep_scale;
    if (p.kind == ModelKind::TRANSFORMER) {
      m.attn = la::Mat(L, p.hidden_dim);
      for (auto& v : m.attn.a) v = rng.uniform() < prob ? 0.0 : m.keep_scale;
    }
    return m;
  }
};

namespace detail {

inline ForwardOut head_forward(const PredictorParams& p, const double* state, Tape& tape,
                               const DropoutMask* drop) {
  const int H = p.hidden_dim;
  tape.head_in.assign(state, state + H);
  if (drop)
    for (int i = 0; i < H; ++i) tape.head_in[i] *= drop->state[i];
  const auto W = p.block.view(p.block.tensors.size() - 2);
  const auto b = p.block.view(p.block.tensors.size() - 1);
  ForwardOut out;
  double y[2];
  la::matvec(W, tape.head_in.data(), y);
  out.tos_log1p = y[0] + b.p[0];
  out.pp_logit = y[1] + b.p[1];
  return out;
}

inline ForwardOut gru_forward(const PredictorParams& p, const la::Mat& x, Tape& tape,
                              const DropoutMask* drop) {
  const int H = p.hidden_dim, L = x.rows;
  const auto Wz = p.block.view(gWz), Uz = p.block.view(gUz), bz = p.block.view(gbz);
  const auto Wr = p.block.view(gWr), Ur = p.block.view(gUr), br = p.block.view(gbr);
  const auto Wh = p.block.view(gWh), Uh = p.block.view(gUh), bh = p.block.view(gbh);

  tape.h.assign(L + 1, std::vector<double>(H, 0.0));
  tape.gate1.assign(L, std::vector<double>(H));
  tape.gate2.assign(L, std::vector<double>(H));
  tape.gate3.assign(L, std::vector<double>(H));
  tape.gate4.assign(L, std::vector<double>(H));

  std::vector<double> az(H), ar(H), ah(H);
  for (int t = 0; t < L; ++t) {
    const double* xt = x.row(t);
    const double* hp = tape.h[t].data();
    la::matvec(Wz, xt, az.data());
    la::matvec(Uz, hp, az.data(), true);
    la::matvec(Wr, xt, ar.data());
    la::matvec(Ur, hp, ar.data(), true);
    auto& z = tape.gate1[t];
    auto& r = tape.gate2[t];
    auto& hc = tape.gate3[t];
    auto& rh = tape.gate4[t];
    for (int i = 0; i < H; ++i) {
      z[i] = sigmoid(az[i] + bz.p[i]);
      r[i] = sigmoid(ar[i] + br.p[i]);
      rh[i] = r[i] * hp[i];
    }
    la::matvec(Wh, xt, ah.data());
    la::matvec(Uh, rh.data(), ah.data(), true);
    auto& h = tape.h[t + 1];
    for (int i = 0; i < H; ++i) {
      hc[i] = std::tanh(ah[i] + bh.p[i]);
      h[i] = (1.0 - z[i]) * hp[i] + z[i] * hc[i];
    }
  }
  return head_forward(p, tape.h[L].data(), tape, drop);
}

inline ForwardOut lstm_forward(const PredictorParams& p, const la::Mat& x, Tape& tape,
                               const DropoutMask* drop) {
  const int H = p.hidden_dim, L = x.rows;
  const auto Wi = p.block.view(lWi), Ui = p.block.view(lUi), bi = p.block.view(lbi);
  const auto Wf = p.block.view(lWf), Uf = p.block.view(lUf), bf = p.block.view(lbf);
  const auto Wo = p.block.view(lWo), Uo = p.block.view(lUo), bo = p.block.view(lbo);
  const auto Wg = p.block.view(lWg), Ug = p.block.view(lUg), bg = p.block.view(lbg);

  tape.h.assign(L + 1, std::vector<double>(H, 0.0));
  tape.c.assign(L + 1, std::vector<double>(H, 0.0));
  tape.gate1.assign(L, std::vector<double>(H));
  tape.gate2.assign(L, std::vector<double>(H));
  tape.gate3.assign(L, std::vector<double>(H));
  tape.gate4.assign(L, std::vector<double>(H));

  std::vector<double> ai(H), af(H), ao(H), ag(H);
  for (int t = 0; t < L; ++t) {
    const double* xt = x.row(t);
    const double* hp = tape.h[t].data();
    const double* cp = tape.c[t].data();
    la::matvec(Wi, xt, ai.data());
    la::matvec(Ui, hp, ai.data(), true);
    la::matvec(Wf, xt, af.data());
    la::matvec(Uf, hp, af.data(), true);
    la::matvec(Wo, xt, ao.data());
    la::matvec(Uo, hp, ao.data(), true);
    la::matvec(Wg, xt, ag.data());
    la::matvec(Ug, hp, ag.data(), true);
    auto& ig = tape.gate1[t];
    auto& fg = tape.gate2[t];
    auto& og = tape.gate3[t];
    auto& gg = tape.gate4[t];
    auto& c = tape.c[t + 1];
    auto& h = tape.h[t + 1];
    for (int k = 0; k < H; ++k) {
      ig[k] = sigmoid(ai[k] + bi.p[k]);
      fg[k] = sigmoid(af[k] + bf.p[k]);
      og[k] = sigmoid(ao[k] + bo.p[k]);
      gg[k] = std::tanh(ag[k] + bg.p[k]);
      c[k] = fg[k] * cp[k] + ig[k] * gg[k];
      h[k] = og[k] * std::tanh(c[k]);
    }
  }
  return head_forward(p, tape.h[L].data(), tape, drop);
}

inline ForwardOut transformer_forward(const PredictorParams& p, const la::Mat& x, Tape& tape,
                                      const DropoutMask* drop) {
  const int H = p.hidden_dim, L = x.rows, nh = p.n_heads, dk = H / p.n_heads;
  if (L != p.seq_len) throw DimensionMismatch("window length does not match positional table");
  const auto We = p.block.view(tWe), be = p.block.view(tbe), pos = p.block.view(tPos);
  const auto Wq = p.block.view(tWq), Wk = p.block.view(tWk), Wv = p.block.view(tWv);
  const auto Wo = p.block.view(tWo), bo = p.block.view(tbo);
  const auto W1 = p.block.view(tW1), b1 = p.block.view(tb1);
  const auto W2 = p.block.view(tW2), b2 = p.block.view(tb2);

  tape.E = la::Mat(L, H);
  tape.Q = la::Mat(L, H);
  tape.K = la::Mat(L, H);
  tape.V = la::Mat(L, H);
  tape.O = la::Mat(L, H);
  tape.attn = la::Mat(L, H);
  tape.R1 = la::Mat(L, H);
  tape.ffact = la::Mat(L, p.ff_dim);
  tape.R2 = la::Mat(L, H);
  tape.A.assign(nh, la::Mat(L, L));

  for (int t = 0; t < L; ++t) {
    la::matvec(We, x.row(t), tape.E.row(t));
    for (int i = 0; i < H; ++i) tape.E(t, i) += be.p[i] + pos(t, i);
    la::matvec(Wq, tape.E.row(t), tape.Q.row(t));
    la::matvec(Wk, tape.E.row(t), tape.K.row(t));
    la::matvec(Wv, tape.E.row(t), tape.V.row(t));
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int h = 0; h < nh; ++h) {
    const int off = h * dk;
    auto& A = tape.A[h];
    for (int t = 0; t < L; ++t) {
      double mx = -1e300;
      for (int u = 0; u < L; ++u) {
        double s = 0;
        for (int d = 0; d < dk; ++d) s += tape.Q(t, off + d) * tape.K(u, off + d);
        A(t, u) = s * scale;
        mx = std::max(mx, A(t, u));
      }
      double sum = 0;
      for (int u = 0; u < L; ++u) {
        A(t, u) = std::exp(A(t, u) - mx);
        sum += A(t, u);
      }
      for (int u = 0; u < L; ++u) A(t, u) /= sum;
      for (int d = 0; d < dk; ++d) {
        double s = 0;
        for (int u = 0; u < L; ++u) s += A(t, u) * tape.V(u, off + d);
        tape.O(t, off + d) = s;
      }
    }
  }

  for (int t = 0; t < L; ++t) {
    la::matvec(Wo, tape.O.row(t), tape.attn.row(t));
    for (int i = 0; i < H; ++i) {
      double a = tape.attn(t, i) + bo.p[i];
      if (drop) a *= drop->attn(t, i);
      tape.attn(t, i) = a;  // cache post-dropout value
      tape.R1(t, i) = tape.E(t, i) + a;
    }
  }

  std::vector<double> pre(p.ff_dim), f2(H);
  for (int t = 0; t < L; ++t) {
    la::matvec(W1, tape.R1.row(t), pre.data());
    for (int j = 0; j < p.ff_dim; ++j) tape.ffact(t, j) = std::tanh(pre[j] + b1.p[j]);
    la::matvec(W2, tape.ffact.row(t), f2.data());
    for (int i = 0; i < H; ++i) tape.R2(t, i) = tape.R1(t, i) + f2[i] + b2.p[i];
  }

  tape.pooled.assign(H, 0.0);
  for (int t = 0; t < L; ++t)
    for (int i = 0; i < H; ++i) tape.pooled[i] += tape.R2(t, i) / L;

  return head_forward(p, tape.pooled.data(), tape, drop);
}

}  // namespace detail

// Forward pass; fills `tape` for a later backward() call. Pass no mask for
// inference.
inline ForwardOut forward(const PredictorParams& p, const la::Mat& x, Tape& tape,
                          const DropoutMask* drop = nullptr) {
  if (x.cols != p.input_dim) throw DimensionMismatch("feature count != model input_dim");
  switch (p.kind) {
    case ModelKind::GRU: return detail::gru_forward(p, x, tape, drop);
    case ModelKind::LSTM: return detail::lstm_forward(p, x, tape, drop);
    default: return detail::transformer_forward(p, x, tape, drop);
  }
}

inline ForwardOut forward(const PredictorParams& p, const la::Mat& x) {
  Tape tape;
  return forward(p, x, tape);
}

inline ForwardOut forward(const PredictorParams& p, const feat::SequenceWindow& w) {
  return forward(p, w.features);
}

namespace detail {

inline void head_backward(const PredictorParams& p, const Tape& tape, double d_tos,
                          double d_logit, const DropoutMask* drop, ParamBlock& g,
                          std::vector<double>& dstate) {
  const int H = p.hidden_dim;
  const auto W = p.block.view(p.block.tensors.size() - 2);
  auto gW = g.view(g.tensors.size() - 2);
  auto gb = g.view(g.tensors.size() - 1);
  const double dy[2] = {d_tos, d_logit};
  for (int j = 0; j < H; ++j) {
    gW(0, j) += dy[0] * tape.head_in[j];
    gW(1, j) += dy[1] * tape.head_in[j];
  }
  gb.p[0] += dy[0];
  gb.p[1] += dy[1];
  dstate.assign(H, 0.0);
  for (int j = 0; j < H; ++j) dstate[j] = W(0, j) * dy[0] + W(1, j) * dy[1];
  if (drop)
    for (int j = 0; j < H; ++j) dstate[j] *= drop->state[j];
}

inline void gru_backward(const PredictorParams& p, const la::Mat& x, const Tape& tape,
                         double d_tos, double d_logit, const DropoutMask* drop,
                         ParamBlock& g) {
  const int H = p.hidden_dim, L = x.rows;
  const auto Uz = p.block.view(gUz), Ur = p.block.view(gUr), Uh = p.block.view(gUh);
  auto gWzv = g.view(gWz), gUzv = g.view(gUz), gbzv = g.view(gbz);
  auto gWrv = g.view(gWr), gUrv = g.view(gUr), gbrv = g.view(gbr);
  auto gWhv = g.view(gWh), gUhv = g.view(gUh), gbhv = g.view(gbh);

  std::vector<double> dh;
  head_backward(p, tape, d_tos, d_logit, drop, g, dh);

  std::vector<double> dz(H), dhc(H), dr(H), dah(H), daz(H), dar(H), drh(H), dh_prev(H);
  for (int t = L - 1; t >= 0; --t) {
    const double* xt = x.row(t);
    const double* hp = tape.h[t].data();
    const auto& z = tape.gate1[t];
    const auto& r = tape.gate2[t];
    const auto& hc = tape.gate3[t];
    const auto& rh = tape.gate4[t];
    for (int i = 0; i < H; ++i) {
      dz[i] = dh[i] * (hc[i] - hp[i]);
      dhc[i] = dh[i] * z[i];
      dh_prev[i] = dh[i] * (1.0 - z[i]);
      dah[i] = dhc[i] * (1.0 - hc[i] * hc[i]);
    }
    la::add_outer(gWhv, dah.data(), xt);
    la::add_outer(gUhv, dah.data(), rh.data());
    la::add(gbhv.p, dah.data(), H);
    la::matvec_t(Uh, dah.data(), drh.data());
    for (int i = 0; i < H; ++i) {
      dr[i] = drh[i] * hp[i];
      dh_prev[i] += drh[i] * r[i];
      daz[i] = dz[i] * z[i] * (1.0 - z[i]);
      dar[i] = dr[i] * r[i] * (1.0 - r[i]);
    }
    la::add_outer(gWzv, daz.data(), xt);
    la::add_outer(gUzv, daz.data(), hp);
    la::add(gbzv.p, daz.data(), H);
    la::add_outer(gWrv, dar.data(), xt);
    la::add_outer(gUrv, dar.data(), hp);
    la::add(gbrv.p, dar.data(), H);
    la::matvec_t(Uz, daz.data(), dh_prev.data(), true);
    la::matvec_t(Ur, dar.data(), dh_prev.data(), true);
    dh = dh_prev;
  }
}

inline void lstm_backward(const PredictorParams& p, const la::Mat& x, const Tape& tape,
                          double d_tos, double d_logit, const DropoutMask* drop,
                          ParamBlock& g) {
  const int H = p.hidden_dim, L = x.rows;
  const auto Ui = p.block.view(lUi), Uf = p.block.view(lUf), Uo = p.block.view(lUo),
             Ug = p.block.view(lUg);
  auto gWiv = g.view(lWi), gUiv = g.view(lUi), gbiv = g.view(lbi);
  auto gWfv = g.view(lWf), gUfv = g.view(lUf), gbfv = g.view(lbf);
  auto gWov = g.view(lWo), gUov = g.view(lUo), gbov = g.view(lbo);
  auto gWgv = g.view(lWg), gUgv = g.view(lUg), gbgv = g.view(lbg);

  std::vector<double> dh;
  head_backward(p, tape, d_tos, d_logit, drop, g, dh);
  std::vector<double> dc(H, 0.0);

  std::vector<double> dai(H), daf(H), dao(H), dag(H), dh_prev(H), dc_prev(H);
  for (int t = L - 1; t >= 0; --t) {
    const double* xt = x.row(t);
    const double* hp = tape.h[t].data();
    const double* cp = tape.c[t].data();
    const auto& ig = tape.gate1[t];
    const auto& fg = tape.gate2[t];
    const auto& og = tape.gate3[t];
    const auto& gg = tape.gate4[t];
    const auto& c = tape.c[t + 1];
    for (int k = 0; k < H; ++k) {
      const double tc = std::tanh(c[k]);
      const double dck = dc[k] + dh[k] * og[k] * (1.0 - tc * tc);
      const double dok = dh[k] * tc;
      const double dik = dck * gg[k];
      const double dgk = dck * ig[k];
      const double dfk = dck * cp[k];
      dc_prev[k] = dck * fg[k];
      dai[k] = dik * ig[k] * (1.0 - ig[k]);
      daf[k] = dfk * fg[k] * (1.0 - fg[k]);
      dao[k] = dok * og[k] * (1.0 - og[k]);
      dag[k] = dgk * (1.0 - gg[k] * gg[k]);
    }
    la::add_outer(gWiv, dai.data(), xt);
    la::add_outer(gUiv, dai.data(), hp);
    la::add(gbiv.p, dai.data(), H);
    la::add_outer(gWfv, daf.data(), xt);
    la::add_outer(gUfv, daf.data(), hp);
    la::add(gbfv.p, daf.data(), H);
    la::add_outer(gWov, dao.data(), xt);
    la::add_outer(gUov, dao.data(), hp);
    la::add(gbov.p, dao.data(), H);
    la::add_outer(gWgv, dag.data(), xt);
    la::add_outer(gUgv, dag.data(), hp);
    la::add(gbgv.p, dag.data(), H);
    la::matvec_t(Ui, dai.data(), dh_prev.data());
    la::matvec_t(Uf, daf.data(), dh_prev.data(), true);
    la::matvec_t(Uo, dao.data(), dh_prev.data(), true);
    la::matvec_t(Ug, dag.data(), dh_prev.data(), true);
    dh = dh_prev;
    dc = dc_prev;
  }
}

inline void transformer_backward(const PredictorParams& p, const la::Mat& x,
                                 const Tape& tape, double d_tos, double d_logit,
                                 const DropoutMask* drop, ParamBlock& g) {
  const int H = p.hidden_dim, L = x.rows, nh = p.n_heads, dk = H / nh;
  const auto Wq = p.block.view(tWq), Wk = p.block.view(tWk), Wv = p.block.view(tWv),
             Wo = p.block.view(tWo), W1 = p.block.view(tW1), W2 = p.block.view(tW2);
  auto gWe = g.view(tWe), gbe = g.view(tbe), gpos = g.view(tPos);
  auto gWq = g.view(tWq), gWk = g.view(tWk), gWv = g.view(tWv);
  auto gWo = g.view(tWo), gbo = g.view(tbo);
  auto gW1 = g.view(tW1), gb1 = g.view(tb1), gW2 = g.view(tW2), gb2 = g.view(tb2);

  std::vector<double> dpooled;
  head_backward(p, tape, d_tos, d_logit, drop, g, dpooled);

  la::Mat dR1(L, H), dE(L, H), dQ(L, H), dK(L, H), dV(L, H), dO(L, H);
  std::vector<double> dF2(H), dact(p.ff_dim), dpre(p.ff_dim), dr1(H);

  // mean pool + feed-forward (with residual)
  for (int t = 0; t < L; ++t) {
    for (int i = 0; i < H; ++i) dF2[i] = dpooled[i] / L;
    la::add_outer(gW2, dF2.data(), tape.ffact.row(t));
    la::add(gb2.p, dF2.data(), H);
    la::matvec_t(W2, dF2.data(), dact.data());
    for (int j = 0; j < p.ff_dim; ++j) {
      const double a = tape.ffact(t, j);
      dpre[j] = dact[j] * (1.0 - a * a);
    }
    la::add_outer(gW1, dpre.data(), tape.R1.row(t));
    la::add(gb1.p, dpre.data(), p.ff_dim);
    la::matvec_t(W1, dpre.data(), dr1.data());
    for (int i = 0; i < H; ++i) dR1(t, i) = dF2[i] + dr1[i];
  }

  // attention output projection (with residual and dropout)
  std::vector<double> dattn(H), dOrow(H);
  for (int t = 0; t < L; ++t) {
    for (int i = 0; i < H; ++i) {
      double v = dR1(t, i);
      dE(t, i) = v;  // residual branch
      if (drop) v *= drop->attn(t, i);
      dattn[i] = v;
    }
    la::add_outer(gWo, dattn.data(), tape.O.row(t));
    la::add(gbo.p, dattn.data(), H);
    la::matvec_t(Wo, dattn.data(), dOrow.data());
    for (int i = 0; i < H; ++i) dO(t, i) = dOrow[i];
  }

  // attention core
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  la::Mat dA(L, L), dS(L, L);
  for (int h = 0; h < nh; ++h) {
    const int off = h * dk;
    const auto& A = tape.A[h];
    for (int t = 0; t < L; ++t)
      for (int u = 0; u < L; ++u) {
        double s = 0;
        for (int d = 0; d < dk; ++d) s += dO(t, off + d) * tape.V(u, off + d);
        dA(t, u) = s;
      }
    for (int t = 0; t < L; ++t)
      for (int u = 0; u < L; ++u)
        for (int d = 0; d < dk; ++d) dV(u, off + d) += A(t, u) * dO(t, off + d);
    for (int t = 0; t < L; ++t) {
      double dot = 0;
      for (int u = 0; u < L; ++u) dot += dA(t, u) * A(t, u);
      for (int u = 0; u < L; ++u) dS(t, u) = A(t, u) * (dA(t, u) - dot);
    }
    for (int t = 0; t < L; ++t)
      for (int u = 0; u < L; ++u) {
        const double w = dS(t, u) * scale;
        for (int d = 0; d < dk; ++d) {
          dQ(t, off + d) += w * tape.K(u, off + d);
          dK(u, off + d) += w * tape.Q(t, off + d);
        }
      }
  }

  // projections back to the embedded sequence
  std::vector<double> tmp(H);
  for (int t = 0; t < L; ++t) {
    la::add_outer(gWq, dQ.row(t), tape.E.row(t));
    la::matvec_t(Wq, dQ.row(t), tmp.data());
    la::add(dE.row(t), tmp.data(), H);
    la::add_outer(gWk, dK.row(t), tape.E.row(t));
    la::matvec_t(Wk, dK.row(t), tmp.data());
    la::add(dE.row(t), tmp.data(), H);
    la::add_outer(gWv, dV.row(t), tape.E.row(t));
    la::matvec_t(Wv, dV.row(t), tmp.data());
    la::add(dE.row(t), tmp.data(), H);
  }
  for (int t = 0; t < L; ++t) {
    la::add_outer(gWe, dE.row(t), x.row(t));
    la::add(gbe.p, dE.row(t), H);
    la::add(gpos.row(t), dE.row(t), H);
  }
}

}  // namespace detail

// Accumulates dL/dparams into `grads` for one window; `tape` must come from
// the matching forward() call.
inline void backward(const PredictorParams& p, const la::Mat& x, const Tape& tape,
                     double d_tos, double d_logit, const DropoutMask* drop,
                     ParamBlock& grads) {
  switch (p.kind) {
    case ModelKind::GRU: detail::gru_backward(p, x, tape, d_tos, d_logit, drop, grads); break;
    case ModelKind::LSTM: detail::lstm_backward(p, x, tape, d_tos, d_logit, drop, grads); break;
    default: detail::transformer_backward(p, x, tape, d_tos, d_logit, drop, grads); break;
  }
}

// mean over the batch of
//   (tos_pred - log1p(tos_true))^2 + lambda_pp * w[y] * BCE(pp_prob, y)
// BCE evaluated from the logit for stability.
inline double window_loss(const ForwardOut& out, double tos_true_s, bool pp_label,
                          const feat::ClassWeights& w, double lambda_pp) {
  const double t = std::log1p(tos_true_s);
  const double rt = out.tos_log1p - t;
  const double l = out.pp_logit;
  const double y = pp_label ? 1.0 : 0.0;
  const double bce = std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
  return rt * rt + lambda_pp * w.of(pp_label) * bce;
}

struct LossGrad {
  double d_tos = 0, d_logit = 0;
};

inline LossGrad window_loss_grad(const ForwardOut& out, double tos_true_s, bool pp_label,
                                 const feat::ClassWeights& w, double lambda_pp) {
  const double t = std::log1p(tos_true_s);
  const double y = pp_label ? 1.0 : 0.0;
  return {2.0 * (out.tos_log1p - t),
          lambda_pp * w.of(pp_label) * (detail::sigmoid(out.pp_logit) - y)};
}

inline double batch_loss(const PredictorParams& p, std::span<const feat::SequenceWindow> ws,
                         const feat::ClassWeights& w, double lambda_pp) {
  Tape tape;
  double total = 0;
  for (const auto& win : ws)
    total += window_loss(forward(p, win.features, tape), win.target_tos_s, win.target_pp,
                         w, lambda_pp);
  return total / static_cast<double>(ws.size());
}

}  // namespace hoseq::nn
