#include "condlab/linalg.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "condlab/error.h"

namespace condlab {

namespace {

inline double pythag(double a, double b) {
  double absa = std::fabs(a), absb = std::fabs(b);
  if (absa > absb) {
    double r = absb / absa;
    return absa * std::sqrt(1.0 + r * r);
  }
  if (absb == 0.0) return 0.0;
  double r = absa / absb;
  return absb * std::sqrt(1.0 + r * r);
}

inline double sign_of(double a, double b) { return b >= 0.0 ? std::fabs(a) : -std::fabs(a); }

inline void rotate(Matrix& a, double s, double tau, int i, int j, int k, int l) {
  double g = a(i, j);
  double h = a(k, l);
  a(i, j) = g - s * (h + g * tau);
  a(k, l) = h + s * (g - h * tau);
}

// Cyclic Jacobi with the classic staged thresholding; quadratic convergence,
// plenty accurate at probe sizes. Destroys `a`; fills d and (optionally) the
// eigenvector columns of v.
void jacobi_eig(Matrix& a, std::vector<double>& d, Matrix* v) {
  const int n = a.rows();
  if (v) *v = Matrix::identity(n);
  std::vector<double> b(n), z(n, 0.0);
  d.resize(n);
  for (int ip = 0; ip < n; ++ip) b[ip] = d[ip] = a(ip, ip);
  for (int sweep = 1; sweep <= 100; ++sweep) {
    double sm = 0.0;
    for (int ip = 0; ip < n - 1; ++ip)
      for (int iq = ip + 1; iq < n; ++iq) sm += std::fabs(a(ip, iq));
    if (sm == 0.0) return;
    double tresh = (sweep < 4) ? 0.2 * sm / (n * n) : 0.0;
    for (int ip = 0; ip < n - 1; ++ip) {
      for (int iq = ip + 1; iq < n; ++iq) {
        double g = 100.0 * std::fabs(a(ip, iq));
        if (sweep > 4 && std::fabs(d[ip]) + g == std::fabs(d[ip]) &&
            std::fabs(d[iq]) + g == std::fabs(d[iq])) {
          a(ip, iq) = 0.0;
        } else if (std::fabs(a(ip, iq)) > tresh) {
          double h = d[iq] - d[ip];
          double t;
          if (std::fabs(h) + g == std::fabs(h)) {
            t = a(ip, iq) / h;
          } else {
            double theta = 0.5 * h / a(ip, iq);
            t = 1.0 / (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
            if (theta < 0.0) t = -t;
          }
          double c = 1.0 / std::sqrt(1.0 + t * t);
          double s = t * c;
          double tau = s / (1.0 + c);
          h = t * a(ip, iq);
          z[ip] -= h;
          z[iq] += h;
          d[ip] -= h;
          d[iq] += h;
          a(ip, iq) = 0.0;
          for (int j = 0; j < ip; ++j) rotate(a, s, tau, j, ip, j, iq);
          for (int j = ip + 1; j < iq; ++j) rotate(a, s, tau, ip, j, j, iq);
          for (int j = iq + 1; j < n; ++j) rotate(a, s, tau, ip, j, iq, j);
          if (v)
            for (int j = 0; j < n; ++j) rotate(*v, s, tau, j, ip, j, iq);
        }
      }
    }
    for (int ip = 0; ip < n; ++ip) {
      b[ip] += z[ip];
      d[ip] = b[ip];
      z[ip] = 0.0;
    }
  }
  throw ValueError("jacobi_eig: no convergence in 100 sweeps");
}

// Householder reduction of a symmetric matrix to tridiagonal form; when
// yesvecs, `a` is replaced by the accumulated orthogonal transform.
void tred2(Matrix& a, std::vector<double>& d, std::vector<double>& e, bool yesvecs) {
  const int n = a.rows();
  d.assign(n, 0.0);
  e.assign(n, 0.0);
  for (int i = n - 1; i > 0; --i) {
    int l = i - 1;
    double h = 0.0, scale = 0.0;
    if (l > 0) {
      for (int k = 0; k < i; ++k) scale += std::fabs(a(i, k));
      if (scale == 0.0) {
        e[i] = a(i, l);
      } else {
        for (int k = 0; k < i; ++k) {
          a(i, k) /= scale;
          h += a(i, k) * a(i, k);
        }
        double f = a(i, l);
        double g = (f >= 0.0 ? -std::sqrt(h) : std::sqrt(h));
        e[i] = scale * g;
        h -= f * g;
        a(i, l) = f - g;
        f = 0.0;
        for (int j = 0; j < i; ++j) {
          if (yesvecs) a(j, i) = a(i, j) / h;
          g = 0.0;
          for (int k = 0; k < j + 1; ++k) g += a(j, k) * a(i, k);
          for (int k = j + 1; k < i; ++k) g += a(k, j) * a(i, k);
          e[j] = g / h;
          f += e[j] * a(i, j);
        }
        double hh = f / (h + h);
        for (int j = 0; j < i; ++j) {
          f = a(i, j);
          e[j] = g = e[j] - hh * f;
          for (int k = 0; k < j + 1; ++k) a(j, k) -= f * e[k] + g * a(i, k);
        }
      }
    } else {
      e[i] = a(i, l);
    }
    d[i] = h;
  }
  if (yesvecs) d[0] = 0.0;
  e[0] = 0.0;
  for (int i = 0; i < n; ++i) {
    if (yesvecs) {
      if (d[i] != 0.0) {
        for (int j = 0; j < i; ++j) {
          double g = 0.0;
          for (int k = 0; k < i; ++k) g += a(i, k) * a(k, j);
          for (int k = 0; k < i; ++k) a(k, j) -= g * a(k, i);
        }
      }
      d[i] = a(i, i);
      a(i, i) = 1.0;
      for (int j = 0; j < i; ++j) a(j, i) = a(i, j) = 0.0;
    } else {
      d[i] = a(i, i);
    }
  }
}

// Implicit-shift QL on the tridiagonal (d, e); rotations optionally applied
// to the columns of z so they end up as eigenvectors.
void tqli(std::vector<double>& d, std::vector<double>& e, Matrix* z) {
  const int n = static_cast<int>(d.size());
  const double eps = std::numeric_limits<double>::epsilon();
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
        if (std::fabs(e[m]) <= eps * dd) break;
      }
      if (m != l) {
        if (iter++ == 50) throw ValueError("tqli: too many iterations");
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = pythag(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + sign_of(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        int i;
        for (i = m - 1; i >= l; --i) {
          double f = s * e[i];
          double b = c * e[i];
          r = pythag(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
          if (z) {
            for (int k = 0; k < n; ++k) {
              f = (*z)(k, i + 1);
              (*z)(k, i + 1) = s * (*z)(k, i) + c * f;
              (*z)(k, i) = c * (*z)(k, i) - s * f;
            }
          }
        }
        if (r == 0.0 && i >= l) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

}  // namespace

Spectrum make_spectrum(std::vector<double> values) {
  std::sort(values.begin(), values.end(), std::greater<double>());
  Spectrum s;
  s.dim = static_cast<int>(values.size());
  s.eigenvalues = std::move(values);
  double lmax = s.eigenvalues.empty() ? 0.0 : std::max(s.eigenvalues.front(), 0.0);
  s.rank_eps = s.dim * lmax * 1e-12;
  return s;
}

Spectrum sym_eig(const Matrix& a, Matrix* eigenvectors) {
  if (a.rows() != a.cols()) throw DimensionError("sym_eig: matrix is not square");
  if (a.rows() == 0) throw DimensionError("sym_eig: empty matrix");
  if (has_nan(a)) throw ValueError("sym_eig: NaN entry");

  const int n = a.rows();
  Matrix work(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) work(i, j) = 0.5 * (a(i, j) + a(j, i));

  std::vector<double> d;
  Matrix vecs;
  if (n <= 64) {
    jacobi_eig(work, d, eigenvectors ? &vecs : nullptr);
  } else {
    std::vector<double> e;
    tred2(work, d, e, eigenvectors != nullptr);
    tqli(d, e, eigenvectors ? &work : nullptr);
    if (eigenvectors) vecs = std::move(work);
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) { return d[x] > d[y]; });

  std::vector<double> sorted(n);
  for (int i = 0; i < n; ++i) sorted[i] = d[order[i]];
  if (eigenvectors) {
    *eigenvectors = Matrix(n, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) (*eigenvectors)(i, j) = vecs(i, order[j]);
  }

  Spectrum s;
  s.dim = n;
  s.eigenvalues = std::move(sorted);
  double lmax = std::max(s.eigenvalues.front(), 0.0);
  s.rank_eps = n * lmax * 1e-12;
  return s;
}

Matrix kron(const Matrix& a, const Matrix& b, std::int64_t entry_cap) {
  if (a.rows() != a.cols() || b.rows() != b.cols())
    throw DimensionError("kron: factors must be square");
  const std::int64_t m = a.rows(), n = b.rows();
  const std::int64_t dim = m * n;
  if (dim * dim > entry_cap) throw CapacityError("kron: result exceeds entry cap");
  Matrix out(static_cast<int>(dim), static_cast<int>(dim));
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < n; ++k) {
      double* orow = out.row(static_cast<int>(i * n + k));
      for (int j = 0; j < m; ++j) {
        const double aij = a(i, j);
        const double* brow = b.row(k);
        for (int l = 0; l < n; ++l) orow[j * n + l] = aij * brow[l];
      }
    }
  return out;
}

double spectral_norm(const Matrix& w) {
  const int rows = w.rows(), cols = w.cols();
  if (rows == 0 || cols == 0 || max_abs(w) == 0.0) return 0.0;

  std::vector<double> v(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  std::vector<double> u(rows), bv(cols);
  double lambda = 0.0;
  int restart = 0;
  for (int iter = 0; iter < 100000; ++iter) {
    // u = W v ; bv = Wᵀ u
    for (int i = 0; i < rows; ++i) {
      const double* wr = w.row(i);
      double s = 0.0;
      for (int j = 0; j < cols; ++j) s += wr[j] * v[j];
      u[i] = s;
    }
    double unorm2 = 0.0;
    for (double x : u) unorm2 += x * x;
    if (unorm2 == 0.0) {
      // start vector happened to be in the null space; restart on a basis vector
      if (restart >= cols) return 0.0;
      std::fill(v.begin(), v.end(), 0.0);
      v[restart++] = 1.0;
      continue;
    }
    std::fill(bv.begin(), bv.end(), 0.0);
    for (int i = 0; i < rows; ++i) {
      const double ui = u[i];
      const double* wr = w.row(i);
      for (int j = 0; j < cols; ++j) bv[j] += ui * wr[j];
    }
    double bnorm = 0.0;
    for (double x : bv) bnorm += x * x;
    bnorm = std::sqrt(bnorm);
    double lambda_new = unorm2;  // vᵀWᵀWv with ‖v‖ = 1
    for (int j = 0; j < cols; ++j) v[j] = bv[j] / bnorm;
    if (iter > 2 && std::fabs(lambda_new - lambda) <= 1e-13 * std::max(lambda_new, 1e-300)) {
      lambda = lambda_new;
      break;
    }
    lambda = lambda_new;
  }
  return std::sqrt(lambda);
}

double frobenius_norm(const Matrix& w) {
  double s = 0.0;
  for (double v : w.data()) s += v * v;
  return std::sqrt(s);
}

Matrix second_moment(const Matrix& rows) {
  const int n = rows.rows(), d = rows.cols();
  if (n < 1) throw DimensionError("second_moment: empty batch");
  Matrix out(d, d);
  for (int r = 0; r < n; ++r) {
    const double* x = rows.row(r);
    for (int i = 0; i < d; ++i) {
      const double xi = x[i];
      double* orow = out.row(i);
      for (int j = i; j < d; ++j) orow[j] += xi * x[j];
    }
  }
  const double inv = 1.0 / n;
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      out(i, j) *= inv;
      out(j, i) = out(i, j);  // mirrored, bit-equal across the diagonal
    }
  }
  return out;
}

}  // namespace condlab
