#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "condlab/matrix.h"
#include "condlab/rng.h"

namespace testutil {

using condlab::Matrix;
using condlab::Rng;

// Max-normalized relative deviation: max|a−b| / max(max|b|, tiny).
inline double rel_dev(const Matrix& a, const Matrix& b) {
  double scale = 1e-300;
  for (double v : b.data()) scale = std::max(scale, std::fabs(v));
  double worst = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i)
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst / scale;
}

inline double rel_dev(double a, double b) {
  return std::fabs(a - b) / std::max(std::fabs(b), 1e-300);
}

inline Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.gaussian();
  return m;
}

inline Matrix random_symmetric(int n, Rng& rng) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double v = rng.gaussian();
      m(i, j) = v;
      m(j, i) = v;
    }
  return m;
}

// Well-conditioned SPD: (1/n)·GᵀG + δ·I with a decent diagonal shift, so the
// smallest eigenvalue stays far above numerical-rank thresholds.
inline Matrix random_spd(int n, Rng& rng, double shift = 0.1) {
  Matrix g = random_matrix(n, n, rng);
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += g(k, i) * g(k, j);
      a(i, j) = s / n;
    }
  for (int i = 0; i < n; ++i) a(i, i) += shift;
  return a;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    int n = static_cast<int>(v.size());
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    int i = 0;
    while (i < n) {
      int j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = 0.5 * (i + j) + 1.0;
      for (int k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> rx = ranks(xs), ry = ranks(ys);
  int n = static_cast<int>(xs.size());
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace testutil
