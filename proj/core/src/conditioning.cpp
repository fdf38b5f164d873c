#include "condlab/conditioning.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "condlab/error.h"
#include "condlab/rng.h"

namespace condlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Second moments are PSD; tiny negative eigenvalues are eigensolver noise.
Spectrum psd_spectrum(const Matrix& m) {
  Spectrum s = sym_eig(m);
  for (double& v : s.eigenvalues) v = std::max(v, 0.0);
  return s;
}

Spectrum product_multiset(const Spectrum& a, const Spectrum& b) {
  std::vector<double> prod;
  prod.reserve(static_cast<size_t>(a.dim) * b.dim);
  for (double x : a.eigenvalues)
    for (double y : b.eigenvalues) prod.push_back(x * y);
  return make_spectrum(prod);
}

// One categorical draw per example from the softmax of its output row.
std::vector<int> draw_softmax_labels(const Matrix& h, Rng& rng) {
  const int n = h.rows(), c = h.cols();
  std::vector<int> labels(n);
  std::vector<double> p(c);
  for (int e = 0; e < n; ++e) {
    const double* row = h.row(e);
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    const double u = rng.uniform() * z;
    double cum = 0.0;
    int lab = c - 1;
    for (int j = 0; j < c; ++j) {
      cum += p[j];
      if (u < cum) {
        lab = j;
        break;
      }
    }
    labels[e] = lab;
  }
  return labels;
}

// Shared accumulation for the per-layer and all-parameter curvature blocks:
// layers lists the 1-based Linear indices contributing consecutive vec(∇W)
// segments, row-major within each weight matrix.
Matrix fim_accumulate(const Network& net, const Matrix& x, const std::vector<int>& labels,
                      LossKind loss, const std::vector<int>& layers, const FimConfig& cfg) {
  std::int64_t total = 0;
  for (int k : layers) {
    const Op& op = net.ops[net.linear_op(k)];
    total += static_cast<std::int64_t>(op.in_dim) * op.out_dim;
  }
  if (total > cfg.max_params)
    throw CapacityError("curvature block has " + std::to_string(total) +
                        " parameters, cap is " + std::to_string(cfg.max_params));
  if (cfg.label_mode == LabelMode::Sampled) {
    if (loss != LossKind::SoftmaxCE)
      throw ConfigError("sampled labels need a softmax output model");
    if (cfg.samples < 1) throw ConfigError("sample count must be positive");
  }

  const int d = static_cast<int>(total);
  const int n = x.rows();
  BatchCache cache = forward(net, x);
  const Matrix out = cache.per_op.back().out;

  std::vector<std::vector<int>> draws;
  if (cfg.label_mode == LabelMode::Empirical) {
    draws.push_back(labels);
  } else {
    Rng rng(cfg.seed);
    for (int s = 0; s < cfg.samples; ++s) draws.push_back(draw_softmax_labels(out, rng));
  }

  Matrix f(d, d);
  std::vector<double> v(d);
  for (const std::vector<int>& ls : draws) {
    LossResult lr = loss_and_grad(out, ls, loss);
    backward(net, cache, lr.grad);
    for (int e = 0; e < n; ++e) {
      int pos = 0;
      for (int k : layers) {
        const Matrix& xin = cache.layer_input(k);
        const Matrix& g = cache.layer_grad(k);
        for (int o = 0; o < g.cols(); ++o)
          for (int i = 0; i < xin.cols(); ++i) v[pos++] = g(e, o) * xin(e, i);
      }
      for (int r = 0; r < d; ++r) {
        const double vr = v[r];
        double* row = f.row(r);
        for (int c = r; c < d; ++c) row[c] += vr * v[c];
      }
    }
  }
  const double inv = 1.0 / (static_cast<double>(n) * draws.size());
  for (int r = 0; r < d; ++r) {
    for (int c = r; c < d; ++c) f(r, c) *= inv;
    for (int c = 0; c < r; ++c) f(r, c) = f(c, r);
  }
  return f;
}

}  // namespace

double kappa_p(const Spectrum& spec, double p) {
  if (!(p > 0.0) || p > 1.0) throw ValueError("p must lie in (0, 1]");
  if (spec.dim <= 0 || spec.eigenvalues.empty()) throw ValueError("empty spectrum");
  const double lmax = spec.eigenvalues.front();
  if (!(lmax > spec.rank_eps)) return kInf;
  // ⌈p·d⌉ with a downward nudge so exact integer products never round up
  int idx = static_cast<int>(std::ceil(p * spec.dim - 1e-9));
  idx = std::clamp(idx, 1, spec.dim);
  const double lp = spec.eigenvalues[idx - 1];
  if (lp > spec.rank_eps) return lmax / lp;
  if (p < 1.0) return kInf;
  for (int i = spec.dim - 1; i >= 0; --i)
    if (spec.eigenvalues[i] > spec.rank_eps) return lmax / spec.eigenvalues[i];
  return kInf;
}

LayerCovariances layer_covariances(const BatchCache& cache, int k) {
  LayerCovariances cov;
  cov.sigma_x = second_moment(cache.layer_input(k));
  cov.sigma_gh = second_moment(cache.layer_grad(k));
  return cov;
}

KfacSpectrumResult kfac_spectrum(const Matrix& sigma_x, const Matrix& sigma_gh,
                                 const std::vector<double>& p_list) {
  Spectrum ex = psd_spectrum(sigma_x);
  Spectrum eg = psd_spectrum(sigma_gh);
  KfacSpectrumResult res;
  res.product_spectrum = product_multiset(ex, eg);
  res.lambda_max_f = ex.lambda_max() * eg.lambda_max();
  res.kappa_f = kappa_p(res.product_spectrum, 1.0);
  for (double p : p_list) res.kappa_p_f[p] = kappa_p(res.product_spectrum, p);
  return res;
}

Matrix sub_fim_exact(const Network& net, const Matrix& x, const std::vector<int>& labels,
                     LossKind loss, int k, const FimConfig& cfg) {
  if (k < 1 || k > net.num_linear) throw ValueError("linear layer index out of range");
  return fim_accumulate(net, x, labels, loss, {k}, cfg);
}

Matrix full_fim_exact(const Network& net, const Matrix& x, const std::vector<int>& labels,
                      LossKind loss, const FimConfig& cfg) {
  std::vector<int> layers(net.num_linear);
  for (int k = 1; k <= net.num_linear; ++k) layers[k - 1] = k;
  return fim_accumulate(net, x, labels, loss, layers, cfg);
}

Matrix second_moment_matrix(const Network& net, const Matrix& x, const std::vector<int>& labels,
                            LossKind loss, int k, const FimConfig& cfg) {
  FimConfig forced = cfg;
  forced.label_mode = LabelMode::Empirical;
  return k >= 1 ? sub_fim_exact(net, x, labels, loss, k, forced)
                : full_fim_exact(net, x, labels, loss, forced);
}

Matrix hessian_linear_regression(const Matrix& x, int out_dim) {
  if (out_dim < 1) throw ValueError("output dimension must be positive");
  return kron(second_moment(x), Matrix::identity(out_dim));
}

Matrix hessian_linear_classifier(const Matrix& x, int c) {
  if (c < 2) throw ValueError("classifier needs at least 2 classes");
  Matrix s(c, c);
  const double cc = static_cast<double>(c);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) s(i, j) = (i == j ? 1.0 / cc : 0.0) - 1.0 / (cc * cc);
  return kron(second_moment(x), s);
}

double weight_grad_second_moment(const BatchCache& cache, int k, SgwMode mode,
                                 std::int64_t max_params) {
  (void)max_params;  // both paths cost the same regardless of layer size
  if (mode == SgwMode::KfacApprox) {
    LayerCovariances cov = layer_covariances(cache, k);
    const double lx = std::max(sym_eig(cov.sigma_x).lambda_max(), 0.0);
    const double lg = std::max(sym_eig(cov.sigma_gh).lambda_max(), 0.0);
    return lx * lg;
  }
  const Matrix& x = cache.layer_input(k);
  const Matrix& g = cache.layer_grad(k);
  const int n = x.rows();
  Matrix kx = matmul_bt(x, x);
  Matrix kg = matmul_bt(g, g);
  Matrix gram(n, n);
  const double inv = 1.0 / n;
  for (size_t i = 0; i < gram.data().size(); ++i)
    gram.data()[i] = kx.data()[i] * kg.data()[i] * inv;
  return spectral_norm(gram);  // symmetric PSD: operator norm = λ_max
}

LayerConditioning layer_conditioning(const BatchCache& cache, const Network& net, int k,
                                     const std::vector<double>& p_list) {
  LayerConditioning lc;
  lc.layer = k;
  LayerCovariances cov = layer_covariances(cache, k);
  Spectrum ex = psd_spectrum(cov.sigma_x);
  Spectrum eg = psd_spectrum(cov.sigma_gh);
  lc.lambda_max_sx = ex.lambda_max();
  lc.lambda_max_sgh = eg.lambda_max();
  for (double p : p_list) {
    lc.kappa_sx[p] = kappa_p(ex, p);
    lc.kappa_sgh[p] = kappa_p(eg, p);
  }
  Spectrum prod = product_multiset(ex, eg);
  lc.lambda_max_f_approx = lc.lambda_max_sx * lc.lambda_max_sgh;
  lc.kappa_f_approx = kappa_p(prod, 1.0);
  for (double p : p_list) lc.kappa_f[p] = kappa_p(prod, p);
  lc.lambda_max_sgw = weight_grad_second_moment(cache, k, SgwMode::Exact);

  const Matrix& w = net.ops[net.linear_op(k)].w;
  lc.w_fro = frobenius_norm(w);
  lc.w_spec = spectral_norm(w);
  lc.g_spec = spectral_norm(cache.layer_grad_w(k));
  return lc;
}

}  // namespace condlab
