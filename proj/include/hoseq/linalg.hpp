#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace hoseq::la {

// Dense row-major matrix of doubles. Desk-scale sizes only; no BLAS.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

  double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
};

// Non-owning view over a tensor stored in a flat parameter block.
struct MatView {
  double* p = nullptr;
  int rows = 0, cols = 0;

  double& operator()(int i, int j) { return p[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return p[static_cast<std::size_t>(i) * cols + j]; }
  double* row(int i) { return p + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return p + static_cast<std::size_t>(i) * cols; }
};

// y (+)= W x
template <class M>
inline void matvec(const M& W, const double* x, double* y, bool accumulate = false) {
  for (int i = 0; i < W.rows; ++i) {
    double s = accumulate ? y[i] : 0.0;
    const double* wr = W.row(i);
    for (int j = 0; j < W.cols; ++j) s += wr[j] * x[j];
    y[i] = s;
  }
}

// y (+)= W^T x
template <class M>
inline void matvec_t(const M& W, const double* x, double* y, bool accumulate = false) {
  if (!accumulate)
    for (int j = 0; j < W.cols; ++j) y[j] = 0.0;
  for (int i = 0; i < W.rows; ++i) {
    const double* wr = W.row(i);
    const double xi = x[i];
    for (int j = 0; j < W.cols; ++j) y[j] += wr[j] * xi;
  }
}

// W += u v^T
template <class M>
inline void add_outer(M& W, const double* u, const double* v) {
  for (int i = 0; i < W.rows; ++i) {
    double* wr = W.row(i);
    const double ui = u[i];
    for (int j = 0; j < W.cols; ++j) wr[j] += ui * v[j];
  }
}

inline void add(double* y, const double* x, int n) {
  for (int i = 0; i < n; ++i) y[i] += x[i];
}

}  // namespace hoseq::la
