#include <cmath>
#include <limits>
#include <vector>

#include "condlab/conditioning.h"
#include "condlab/error.h"
#include "condlab/linalg.h"
#include "condlab/nn.h"
#include "condlab/rng.h"
#include "doctest.h"
#include "test_util.h"

using namespace condlab;
using testutil::rel_dev;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Straight four-loop Kronecker product, written independently of the library.
Matrix oracle_kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      for (int p = 0; p < b.rows(); ++p)
        for (int q = 0; q < b.cols(); ++q)
          out(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
  return out;
}

// Brute-force weight-gradient second moment: mean over examples of the outer
// product of row-major vec(∇W_k(i)) with itself.
Matrix oracle_sgw(const BatchCache& cache, int k) {
  const Matrix& x = cache.layer_input(k);
  const Matrix& g = cache.layer_grad(k);
  const int n = x.rows(), in = x.cols(), out = g.cols();
  Matrix m(in * out, in * out);
  for (int e = 0; e < n; ++e) {
    std::vector<double> v(in * out);
    for (int o = 0; o < out; ++o)
      for (int i = 0; i < in; ++i) v[o * in + i] = g(e, o) * x(e, i);
    for (int r = 0; r < in * out; ++r)
      for (int c = 0; c < in * out; ++c) m(r, c) += v[r] * v[c];
  }
  return scale(m, 1.0 / n);
}

Network small_class_net(std::uint64_t seed) {
  return build_network({LayerSpec::linear(4, 5), LayerSpec::relu(), LayerSpec::linear(5, 3),
                        LayerSpec::relu(), LayerSpec::linear(3, 3)},
                       false, Init::He, seed);
}

BatchCache run_with_grads(const Network& net, const Matrix& x, const std::vector<int>& labels) {
  BatchCache cache = forward(net, x);
  LossResult lr = loss_and_grad(cache.per_op.back().out, labels, LossKind::SoftmaxCE);
  backward(net, cache, lr.grad);
  return cache;
}

}  // namespace

TEST_CASE("kappa_p: index selection, rank handling, argument checks") {
  Spectrum s = make_spectrum({4.0, 2.0, 1.0});
  CHECK(kappa_p(s, 1.0) == 4.0);
  CHECK(kappa_p(s, 0.5) == 2.0);   // ⌈0.5·3⌉ = 2nd eigenvalue
  CHECK(kappa_p(s, 0.8) == 4.0);   // ⌈2.4⌉ = 3rd

  // rank-deficient: p=1 falls back to the smallest eigenvalue above threshold
  Spectrum r = make_spectrum({4.0, 2.0, 0.0});
  CHECK(kappa_p(r, 1.0) == 2.0);
  CHECK(kappa_p(r, 0.9) == kInf);  // ⌈2.7⌉ = 3rd sits below threshold, p < 1

  Spectrum z = make_spectrum({0.0, 0.0});
  CHECK(kappa_p(z, 1.0) == kInf);
  CHECK(kappa_p(z, 0.5) == kInf);

  // ⌈p·d⌉ must not round up across an exact integer product: 0.07·100 in
  // floating point lands a hair above 7
  std::vector<double> many(100);
  for (int i = 0; i < 100; ++i) many[i] = 101.0 - i;
  Spectrum big = make_spectrum(many);
  CHECK(kappa_p(big, 0.07) == doctest::Approx(101.0 / 95.0).epsilon(1e-15));

  CHECK_THROWS_AS(kappa_p(s, 0.0), ValueError);
  CHECK_THROWS_AS(kappa_p(s, 1.5), ValueError);
  CHECK_THROWS_AS(kappa_p(s, -0.2), ValueError);
}

TEST_CASE("kfac_spectrum: diagonal case, Kronecker oracle, factorization identities") {
  // diagonal factors: product multiset {36, 9, 4, 1}
  Matrix a(2, 2), b(2, 2);
  a(0, 0) = 4.0;
  a(1, 1) = 1.0;
  b(0, 0) = 9.0;
  b(1, 1) = 1.0;
  KfacSpectrumResult d = kfac_spectrum(a, b, {0.5, 0.75, 1.0});
  CHECK(d.lambda_max_f == 36.0);
  CHECK(d.kappa_f == 36.0);
  CHECK(d.kappa_p_f.at(0.5) == 4.0);
  CHECK(d.kappa_p_f.at(0.75) == 9.0);
  CHECK(d.kappa_p_f.at(1.0) == 36.0);
  CHECK(d.product_spectrum.dim == 4);
  CHECK(d.product_spectrum.eigenvalues[1] == 9.0);

  // seeded SPD pairs vs eigendecomposition of the materialized product
  Rng rng(101);
  const std::vector<double> ps = {0.5, 0.8, 1.0};
  for (int trial = 0; trial < 6; ++trial) {
    Matrix sa = testutil::random_spd(3, rng);
    Matrix sb = testutil::random_spd(4, rng);
    KfacSpectrumResult res = kfac_spectrum(sa, sb, ps);
    Spectrum full = sym_eig(oracle_kron(sa, sb));
    CHECK(rel_dev(res.lambda_max_f, full.lambda_max()) <= 1e-10);
    for (double p : ps)
      CHECK(rel_dev(res.kappa_p_f.at(p), kappa_p(full, p)) <= 1e-10);
    // λ_max and κ factorize over the factors
    Spectrum ea = sym_eig(sa), eb = sym_eig(sb);
    CHECK(rel_dev(res.lambda_max_f, ea.lambda_max() * eb.lambda_max()) <= 1e-12);
    CHECK(rel_dev(res.kappa_f, kappa_p(ea, 1.0) * kappa_p(eb, 1.0)) <= 1e-12);
  }

  CHECK_THROWS_AS(kfac_spectrum(Matrix(2, 3), a, {1.0}), DimensionError);
}

TEST_CASE("hessian helpers: closed forms and spectra") {
  Rng rng(111);
  Matrix x = testutil::random_matrix(20, 3, rng);
  Matrix sx = second_moment(x);

  Matrix hr = hessian_linear_regression(x, 2);
  CHECK(hr.rows() == 6);
  Matrix expect_r = oracle_kron(sx, Matrix::identity(2));
  CHECK(max_abs_diff(hr, expect_r) == 0.0);

  // classifier curvature: S = (1/c)(I − (1/c)·11ᵀ); for c=2 the entries are ±1/4
  Matrix hc = hessian_linear_classifier(x, 2);
  Matrix s2(2, 2);
  s2(0, 0) = s2(1, 1) = 0.25;
  s2(0, 1) = s2(1, 0) = -0.25;
  CHECK(max_abs_diff(hc, oracle_kron(sx, s2)) <= 1e-15);

  // S has eigenvalue 1/c with multiplicity c−1 and a null direction along 1
  Matrix hc4 = hessian_linear_classifier(Matrix::identity(4), 4);
  // extract S back out: with x = I, Σx = (1/4)I, so H = (1/4)·I ⊗ S
  Spectrum es = sym_eig(hc4);
  CHECK(es.eigenvalues[0] == doctest::Approx(0.25 * 0.25).epsilon(1e-12));
  for (int i = 0; i < 4; ++i)  // four zero eigenvalues, one per block row
    CHECK(std::fabs(es.eigenvalues[15 - i]) <= 1e-14);

  CHECK_THROWS_AS(hessian_linear_classifier(x, 1), ValueError);
  CHECK_THROWS_AS(hessian_linear_regression(x, 0), ValueError);
}

TEST_CASE("layer_covariances: definition plumbing") {
  Rng rng(121);
  Network net = small_class_net(131);
  Matrix x = testutil::random_matrix(12, 4, rng);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
  BatchCache cache = run_with_grads(net, x, labels);

  for (int k = 1; k <= 3; ++k) {
    LayerCovariances cov = layer_covariances(cache, k);
    CHECK(max_abs_diff(cov.sigma_x, second_moment(cache.layer_input(k))) == 0.0);
    CHECK(max_abs_diff(cov.sigma_gh, second_moment(cache.layer_grad(k))) == 0.0);
  }

  BatchCache fresh = forward(net, x);
  CHECK_THROWS_AS(layer_covariances(fresh, 1), ValueError);   // no backward yet
  CHECK_THROWS_AS(layer_covariances(cache, 4), ValueError);   // no such layer
}

TEST_CASE("sub_fim_exact: brute-force oracle, block consistency with the full matrix") {
  Rng rng(141);
  Network net = build_network({LayerSpec::linear(2, 3), LayerSpec::relu(), LayerSpec::linear(3, 2)},
                              false, Init::He, 151);
  Matrix x = testutil::random_matrix(16, 2, rng);
  std::vector<int> labels(16);
  for (int i = 0; i < 16; ++i) labels[i] = i % 2;

  FimConfig cfg;
  cfg.label_mode = LabelMode::Empirical;

  // against the explicit outer-product triple loop
  BatchCache cache = run_with_grads(net, x, labels);
  for (int k = 1; k <= 2; ++k) {
    Matrix f = sub_fim_exact(net, x, labels, LossKind::SoftmaxCE, k, cfg);
    CHECK(rel_dev(f, oracle_sgw(cache, k)) <= 1e-12);
    CHECK(max_abs_diff(f, transpose(f)) == 0.0);  // stored exactly symmetric
  }

  // diagonal blocks of the all-parameter matrix match the per-layer ones
  Matrix full = full_fim_exact(net, x, labels, LossKind::SoftmaxCE, cfg);
  CHECK(full.rows() == 2 * 3 + 3 * 2);
  int offset = 0;
  for (int k = 1; k <= 2; ++k) {
    Matrix f = sub_fim_exact(net, x, labels, LossKind::SoftmaxCE, k, cfg);
    double worst = 0.0;
    for (int r = 0; r < f.rows(); ++r)
      for (int c = 0; c < f.cols(); ++c)
        worst = std::max(worst, std::fabs(full(offset + r, offset + c) - f(r, c)));
    CHECK(worst == 0.0);  // identical accumulation order → identical bits
    offset += f.rows();
  }

  // parameter-count cap
  FimConfig tiny = cfg;
  tiny.max_params = 4;
  CHECK_THROWS_AS(sub_fim_exact(net, x, labels, LossKind::SoftmaxCE, 1, tiny), CapacityError);
  CHECK_THROWS_AS(full_fim_exact(net, x, labels, LossKind::SoftmaxCE, tiny), CapacityError);

  // dispatcher: k ≥ 1 per layer, k ≤ 0 full, Empirical forced either way
  FimConfig sampled = cfg;
  sampled.label_mode = LabelMode::Sampled;
  sampled.seed = 7;
  CHECK(max_abs_diff(second_moment_matrix(net, x, labels, LossKind::SoftmaxCE, 1, sampled),
                     sub_fim_exact(net, x, labels, LossKind::SoftmaxCE, 1, cfg)) == 0.0);
  CHECK(max_abs_diff(second_moment_matrix(net, x, labels, LossKind::SoftmaxCE, 0, sampled),
                     full) == 0.0);
}

TEST_CASE("sub_fim_exact: sampled labels are seeded and follow the softmax") {
  Rng rng(161);
  Network net = small_class_net(171);
  Matrix x = testutil::random_matrix(10, 4, rng);
  std::vector<int> labels(10, 0);

  FimConfig cfg;
  cfg.label_mode = LabelMode::Sampled;
  cfg.samples = 2;
  cfg.seed = 42;
  Matrix f1 = sub_fim_exact(net, x, labels, LossKind::SoftmaxCE, 2, cfg);
  Matrix f2 = sub_fim_exact(net, x, labels, LossKind::SoftmaxCE, 2, cfg);
  CHECK(max_abs_diff(f1, f2) == 0.0);  // same seed → same draws

  FimConfig other = cfg;
  other.seed = 43;
  Matrix f3 = sub_fim_exact(net, x, labels, LossKind::SoftmaxCE, 2, other);
  CHECK(max_abs_diff(f1, f3) > 0.0);

  // a saturated softmax makes sampling deterministic: it must reproduce the
  // empirical matrix at the argmax labels
  Network conf = small_class_net(181);
  for (Op& op : conf.ops)
    if (op.kind == OpKind::Linear)
      for (double& v : op.w.data()) v *= 8.0;
  BatchCache cc = forward(conf, x);
  std::vector<int> argmax(10);
  for (int n = 0; n < 10; ++n) {
    const Matrix& out = cc.per_op.back().out;
    int best = 0;
    for (int j = 1; j < 3; ++j)
      if (out(n, j) > out(n, best)) best = j;
    argmax[n] = best;
  }
  FimConfig emp;
  emp.label_mode = LabelMode::Empirical;
  FimConfig one = cfg;
  one.samples = 1;  // single draw so both sides accumulate identical terms
  Matrix fs = sub_fim_exact(conf, x, labels, LossKind::SoftmaxCE, 1, one);
  Matrix fe = sub_fim_exact(conf, x, argmax, LossKind::SoftmaxCE, 1, emp);
  CHECK(max_abs_diff(fs, fe) == 0.0);

  // sampling needs a categorical output model
  CHECK_THROWS_AS(sub_fim_exact(net, x, labels, LossKind::MSE, 1, cfg), ConfigError);
}

TEST_CASE("weight_grad_second_moment: exact equals brute force, approx factorizes") {
  Rng rng(191);
  Network net = small_class_net(201);
  Matrix x = testutil::random_matrix(12, 4, rng);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
  BatchCache cache = run_with_grads(net, x, labels);

  for (int k = 1; k <= 3; ++k) {
    Spectrum brute = sym_eig(oracle_sgw(cache, k));
    double exact = weight_grad_second_moment(cache, k, SgwMode::Exact);
    CHECK(rel_dev(exact, brute.lambda_max()) <= 1e-10);

    LayerCovariances cov = layer_covariances(cache, k);
    double lx = std::max(sym_eig(cov.sigma_x).lambda_max(), 0.0);
    double lg = std::max(sym_eig(cov.sigma_gh).lambda_max(), 0.0);
    double approx = weight_grad_second_moment(cache, k, SgwMode::KfacApprox);
    CHECK(rel_dev(approx, lx * lg) <= 1e-12);
  }
}

TEST_CASE("layer_conditioning: assembled record agrees with its parts") {
  Rng rng(211);
  Network net = small_class_net(221);
  Matrix x = testutil::random_matrix(15, 4, rng);
  std::vector<int> labels(15);
  for (int i = 0; i < 15; ++i) labels[i] = i % 3;
  BatchCache cache = run_with_grads(net, x, labels);

  const std::vector<double> ps = {0.5, 0.8, 0.9, 1.0};
  for (int k = 1; k <= 3; ++k) {
    LayerConditioning lc = layer_conditioning(cache, net, k, ps);
    CHECK(lc.layer == k);

    LayerCovariances cov = layer_covariances(cache, k);
    Spectrum ex = sym_eig(cov.sigma_x);
    Spectrum eg = sym_eig(cov.sigma_gh);
    CHECK(rel_dev(lc.lambda_max_sx, std::max(ex.lambda_max(), 0.0)) <= 1e-14);
    CHECK(rel_dev(lc.lambda_max_sgh, std::max(eg.lambda_max(), 0.0)) <= 1e-14);
    for (double p : ps) {
      CHECK(lc.kappa_sx.count(p) == 1);
      CHECK(lc.kappa_sgh.count(p) == 1);
      CHECK(lc.kappa_f.count(p) == 1);
    }
    CHECK(rel_dev(lc.lambda_max_f_approx, lc.lambda_max_sx * lc.lambda_max_sgh) <= 1e-12);
    CHECK(lc.kappa_f_approx == lc.kappa_f.at(1.0));
    CHECK(rel_dev(lc.lambda_max_sgw,
                  weight_grad_second_moment(cache, k, SgwMode::Exact)) <= 1e-12);

    const Matrix& w = net.ops[net.linear_op(k)].w;
    CHECK(lc.w_fro == frobenius_norm(w));
    CHECK(rel_dev(lc.w_spec, spectral_norm(w)) <= 1e-12);
    CHECK(rel_dev(lc.g_spec, spectral_norm(cache.layer_grad_w(k))) <= 1e-12);
  }
}
