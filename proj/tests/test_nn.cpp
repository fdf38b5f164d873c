#include <cmath>
#include <vector>

#include "condlab/error.h"
#include "condlab/nn.h"
#include "condlab/rng.h"
#include "doctest.h"
#include "test_util.h"

using namespace condlab;
using testutil::rel_dev;

namespace {

double mean_loss(const Network& net, const Matrix& x, const Matrix& targets, LossKind kind) {
  BatchCache cache = forward(net, x);
  return loss_and_grad(cache.per_op.back().out, targets, kind).loss;
}

double mean_loss(const Network& net, const Matrix& x, const std::vector<int>& labels,
                 LossKind kind) {
  BatchCache cache = forward(net, x);
  return loss_and_grad(cache.per_op.back().out, labels, kind).loss;
}

// Central finite difference of the mean loss w.r.t. one weight entry.
template <typename Targets>
double fd_weight(const Network& net, const Matrix& x, const Targets& t, LossKind kind, int k,
                 int r, int c, double step) {
  Network plus = net, minus = net;
  plus.ops[plus.linear_op(k)].w(r, c) += step;
  minus.ops[minus.linear_op(k)].w(r, c) -= step;
  return (mean_loss(plus, x, t, kind) - mean_loss(minus, x, t, kind)) / (2.0 * step);
}

// Smallest |pre-activation| feeding any ReLU; FD checks need a margin so the
// kink is never straddled by the step.
double relu_margin(const Network& net, const BatchCache& cache) {
  double margin = 1e300;
  for (size_t i = 0; i < net.ops.size(); ++i) {
    if (net.ops[i].kind != OpKind::ReLU) continue;
    const Matrix& in = cache.op_input(static_cast<int>(i));
    for (double v : in.data()) margin = std::min(margin, std::fabs(v));
  }
  return margin;
}

}  // namespace

TEST_CASE("build_network: shapes, determinism, errors") {
  // 8 linear+ReLU layers, width 24, on 144 inputs with 10 outputs
  std::vector<LayerSpec> specs;
  int cur = 144;
  for (int l = 0; l < 7; ++l) {
    specs.push_back(LayerSpec::linear(cur, 24));
    specs.push_back(LayerSpec::relu());
    cur = 24;
  }
  specs.push_back(LayerSpec::linear(cur, 10));
  Network net = build_network(specs, false, Init::LeCun, 1);
  CHECK(net.num_linear == 8);
  CHECK(net.input_dim == 144);
  CHECK(net.output_dim == 10);
  CHECK(net.ops[net.linear_op(1)].w.rows() == 24);
  CHECK(net.ops[net.linear_op(1)].w.cols() == 144);
  CHECK(net.ops[net.linear_op(8)].w.rows() == 10);

  CHECK_THROWS_AS(build_network({}, false, Init::LeCun, 1), ConfigError);
  CHECK_THROWS_AS(
      build_network({LayerSpec::linear(4, 5), LayerSpec::linear(6, 3)}, false, Init::LeCun, 1),
      ConfigError);

  Network again = build_network(specs, false, Init::LeCun, 1);
  for (size_t i = 0; i < net.ops.size(); ++i)
    if (net.ops[i].kind == OpKind::Linear)
      CHECK(net.ops[i].w.data() == again.ops[i].w.data());

  // last_bn inserts exactly one BN right before the final Linear
  Network lb = build_network(specs, true, Init::LeCun, 1);
  CHECK(lb.last_bn);
  int last_linear = lb.linear_op(8);
  CHECK(lb.ops[last_linear - 1].kind == OpKind::BatchNorm);
  CHECK(static_cast<int>(lb.ops.size()) == static_cast<int>(net.ops.size()) + 1);

  // init statistics: LeCun variance ≈ 1/fan_in, He ≈ 2/fan_in
  Network he = build_network(specs, false, Init::He, 7);
  auto var_of = [](const Matrix& w) {
    double s = 0.0;
    for (double v : w.data()) s += v * v;
    return s / static_cast<double>(w.data().size());
  };
  double v1 = var_of(net.ops[net.linear_op(1)].w);   // fan_in 144
  double vh = var_of(he.ops[he.linear_op(1)].w);
  CHECK(v1 == doctest::Approx(1.0 / 144).epsilon(0.15));
  CHECK(vh == doctest::Approx(2.0 / 144).epsilon(0.15));
}

TEST_CASE("forward: identity weights, rectifier, scalar-loop oracle") {
  Network idnet;
  {
    std::vector<LayerSpec> specs = {LayerSpec::linear(3, 3)};
    idnet = build_network(specs, false, Init::LeCun, 2);
    idnet.ops[0].w = Matrix::identity(3);
  }
  Rng rng(17);
  Matrix x = testutil::random_matrix(5, 3, rng);
  BatchCache cache = forward(idnet, x);
  CHECK(max_abs_diff(cache.per_op[0].out, x) == 0.0);

  // ReLU over all-negative pre-activations → zeros
  Network rnet = build_network({LayerSpec::linear(3, 4), LayerSpec::relu()}, false, Init::LeCun, 3);
  Matrix xneg(2, 3);
  for (double& v : xneg.data()) v = -1.0;
  for (double& v : rnet.ops[0].w.data()) v = std::fabs(v);  // positive weights, negative input
  BatchCache rc = forward(rnet, xneg);
  CHECK(max_abs(rc.per_op[1].out) == 0.0);

  // seeded 2-layer net vs. straight-line scalar loops
  Network net = build_network(
      {LayerSpec::linear(4, 5), LayerSpec::relu(), LayerSpec::linear(5, 3)}, false, Init::LeCun, 21);
  Matrix xb = testutil::random_matrix(6, 4, rng);
  BatchCache c2 = forward(net, xb);
  const Matrix& w1 = net.ops[0].w;
  const Matrix& w2 = net.ops[2].w;
  for (int n = 0; n < 6; ++n) {
    double h1[5], x1[5], h2[3];
    for (int o = 0; o < 5; ++o) {
      double s = 0.0;
      for (int i = 0; i < 4; ++i) s += w1(o, i) * xb(n, i);
      h1[o] = s;
      x1[o] = s > 0.0 ? s : 0.0;
    }
    for (int o = 0; o < 3; ++o) {
      double s = 0.0;
      for (int i = 0; i < 5; ++i) s += w2(o, i) * x1[i];
      h2[o] = s;
    }
    for (int o = 0; o < 5; ++o) {
      CHECK(std::fabs(c2.per_op[0].out(n, o) - h1[o]) <= 1e-13);
      CHECK(std::fabs(c2.per_op[1].out(n, o) - x1[o]) <= 1e-13);
    }
    for (int o = 0; o < 3; ++o) CHECK(std::fabs(c2.per_op[2].out(n, o) - h2[o]) <= 1e-13);
  }

  // batch-too-small guard when BN present
  Network bnnet = build_network(
      {LayerSpec::linear(3, 4), LayerSpec::batch_norm(), LayerSpec::relu()}, false, Init::LeCun, 4);
  CHECK_THROWS_AS(forward(bnnet, Matrix(1, 3)), DimensionError);
}

TEST_CASE("bn_forward: constant column, standardized pair, scalar oracle") {
  // constant neuron → output is exactly β (0.75 sums exactly)
  Matrix h(4, 2);
  for (int n = 0; n < 4; ++n) {
    h(n, 0) = 0.75;
    h(n, 1) = 2.0 * n - 3.0;  // {-3,-1,1,3}: symmetric, exact mean 0
  }
  std::vector<double> gamma = {1.5, 1.0}, beta = {0.25, 0.0};
  BnStats stats;
  Matrix s = bn_forward(h, gamma, beta, 1e-5, &stats);
  for (int n = 0; n < 4; ++n) CHECK(s(n, 0) == 0.25);

  // batch {−1,+1}, γ=1, β=0, ε=0 → outputs {−1,+1}
  Matrix pair(2, 1);
  pair(0, 0) = -1.0;
  pair(1, 0) = 1.0;
  BnStats st2;
  Matrix s2 = bn_forward(pair, {1.0}, {0.0}, 0.0, &st2);
  CHECK(s2(0, 0) == -1.0);
  CHECK(s2(1, 0) == 1.0);

  // batch {1,2,3,4}, γ=2, β=1, ε=1e-5 vs. independent scalar arithmetic
  Matrix col(4, 1);
  for (int n = 0; n < 4; ++n) col(n, 0) = n + 1.0;
  BnStats st3;
  Matrix s3 = bn_forward(col, {2.0}, {1.0}, 1e-5, &st3);
  double mu = (1.0 + 2.0 + 3.0 + 4.0) / 4.0;
  double var = 0.0;
  for (int n = 0; n < 4; ++n) var += (n + 1.0 - mu) * (n + 1.0 - mu);
  var /= 4.0;
  for (int n = 0; n < 4; ++n) {
    double expect = 2.0 * (n + 1.0 - mu) / std::sqrt(var + 1e-5) + 1.0;
    CHECK(s3(n, 0) == doctest::Approx(expect).epsilon(1e-14));
  }

  CHECK_THROWS_AS(bn_forward(Matrix(1, 2), {1.0, 1.0}, {0.0, 0.0}, 1e-5, nullptr),
                  DimensionError);
}

TEST_CASE("bn_backward: constant upstream, sum rule, finite differences") {
  // A ±1 standardized batch (ε=0) keeps every cancellation term bit-exact:
  // constant ∇s per column must give ∇h = 0 exactly.
  Matrix h(2, 3);
  for (int j = 0; j < 3; ++j) {
    h(0, j) = -(j + 1.0);
    h(1, j) = j + 1.0;
  }
  std::vector<double> gamma = {1.0, 2.0, 0.5}, beta = {0.0, 0.1, -0.2};
  BnStats stats;
  bn_forward(h, gamma, beta, 0.0, &stats);

  Matrix gconst(2, 3);
  for (int j = 0; j < 3; ++j)
    for (int n = 0; n < 2; ++n) gconst(n, j) = 0.5 * (j + 1);
  std::vector<double> gg, gb;
  Matrix gh = bn_backward(gconst, stats, gamma, 0.0, &gg, &gb);
  CHECK(max_abs(gh) == 0.0);

  Matrix ones(2, 3);
  for (double& v : ones.data()) v = 1.0;
  bn_backward(ones, stats, gamma, 0.0, &gg, &gb);
  for (int j = 0; j < 3; ++j) CHECK(gb[j] == 2.0);

  // seeded 8×4 batch: dL/dh vs central differences of L = Σ c·bn_forward(h)
  Rng rng(31);
  Matrix hb = testutil::random_matrix(8, 4, rng);
  std::vector<double> g2 = {1.2, 0.8, -0.5, 2.0}, b2 = {0.1, -0.3, 0.0, 0.7};
  Matrix coeff = testutil::random_matrix(8, 4, rng);
  BnStats sb;
  bn_forward(hb, g2, b2, 1e-5, &sb);
  std::vector<double> ggrad, bgrad;
  Matrix ghb = bn_backward(coeff, sb, g2, 1e-5, &ggrad, &bgrad);

  const double step = 1e-6;
  Matrix fd(8, 4);
  for (int n = 0; n < 8; ++n)
    for (int j = 0; j < 4; ++j) {
      Matrix hp = hb, hm = hb;
      hp(n, j) += step;
      hm(n, j) -= step;
      double lp = 0.0, lm = 0.0;
      Matrix sp = bn_forward(hp, g2, b2, 1e-5, nullptr);
      Matrix sm = bn_forward(hm, g2, b2, 1e-5, nullptr);
      for (size_t i = 0; i < sp.data().size(); ++i) {
        lp += coeff.data()[i] * sp.data()[i];
        lm += coeff.data()[i] * sm.data()[i];
      }
      fd(n, j) = (lp - lm) / (2.0 * step);
    }
  CHECK(rel_dev(fd, ghb) <= 1e-5);

  // γ and β gradients vs the same finite-difference functional
  for (int j = 0; j < 4; ++j) {
    auto lsum = [&](const std::vector<double>& gv, const std::vector<double>& bv) {
      Matrix sv = bn_forward(hb, gv, bv, 1e-5, nullptr);
      double l = 0.0;
      for (size_t i = 0; i < sv.data().size(); ++i) l += coeff.data()[i] * sv.data()[i];
      return l;
    };
    std::vector<double> gp = g2, gm = g2;
    gp[j] += step;
    gm[j] -= step;
    CHECK(rel_dev((lsum(gp, b2) - lsum(gm, b2)) / (2 * step), ggrad[j]) <= 1e-5);
    std::vector<double> bp = b2, bm = b2;
    bp[j] += step;
    bm[j] -= step;
    CHECK(rel_dev((lsum(g2, bp) - lsum(g2, bm)) / (2 * step), bgrad[j]) <= 1e-5);
  }
}

TEST_CASE("loss_and_grad: perfect fit, ln 10, finite differences") {
  Rng rng(41);
  Matrix h = testutil::random_matrix(5, 3, rng);
  LossResult perfect = loss_and_grad(h, h, LossKind::MSE);
  CHECK(perfect.loss == 0.0);
  CHECK(max_abs(perfect.grad) == 0.0);

  Matrix zeros(4, 10);
  std::vector<int> labels = {3, 1, 9, 0};
  LossResult ce = loss_and_grad(zeros, labels, LossKind::SoftmaxCE);
  CHECK(ce.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  CHECK_THROWS_AS(loss_and_grad(zeros, std::vector<int>{3, 1, 10, 0}, LossKind::SoftmaxCE),
                  ValueError);

  // seeded logits/labels: per-example gradient = d(per-example loss)/dh
  Matrix logits = testutil::random_matrix(6, 5, rng);
  std::vector<int> yl = {0, 4, 2, 2, 1, 3};
  LossResult r = loss_and_grad(logits, yl, LossKind::SoftmaxCE);
  const double step = 1e-6;
  for (int n = 0; n < 6; ++n)
    for (int c = 0; c < 5; ++c) {
      Matrix lp = logits, lm = logits;
      lp(n, c) += step;
      lm(n, c) -= step;
      // isolate example n by differencing total (mean·N) loss
      double fp = loss_and_grad(lp, yl, LossKind::SoftmaxCE).loss * 6;
      double fm = loss_and_grad(lm, yl, LossKind::SoftmaxCE).loss * 6;
      CHECK(rel_dev((fp - fm) / (2 * step), r.grad(n, c)) <= 1e-6);
    }

  // MSE gradient rows are 2(h−y)
  Matrix y = testutil::random_matrix(5, 3, rng);
  LossResult mr = loss_and_grad(h, y, LossKind::MSE);
  for (int n = 0; n < 5; ++n)
    for (int c = 0; c < 3; ++c)
      CHECK(mr.grad(n, c) == doctest::Approx(2.0 * (h(n, c) - y(n, c))).epsilon(1e-14));
}

TEST_CASE("backward: closed form, zero upstream, whole-network finite differences") {
  Rng rng(51);

  // linear-only MSE: ∇W = (1/N)·2(ŷ−y)ᵀX
  Network lin = build_network({LayerSpec::linear(4, 3)}, false, Init::LeCun, 5);
  Matrix x = testutil::random_matrix(7, 4, rng);
  Matrix y = testutil::random_matrix(7, 3, rng);
  BatchCache cache = forward(lin, x);
  LossResult lr = loss_and_grad(cache.per_op.back().out, y, LossKind::MSE);
  backward(lin, cache, lr.grad);
  Matrix expect(3, 4);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i) {
      double s = 0.0;
      for (int n = 0; n < 7; ++n) s += 2.0 * (cache.per_op[0].out(n, o) - y(n, o)) * x(n, i);
      expect(o, i) = s / 7.0;
    }
  CHECK(rel_dev(cache.layer_grad_w(1), expect) <= 1e-14);

  // zero upstream gradient → all gradients zero
  backward(lin, cache, Matrix(7, 3));
  CHECK(max_abs(cache.layer_grad_w(1)) == 0.0);

  // 3-layer nets, with and without BN, vs central finite differences
  for (bool with_bn : {false, true}) {
    std::vector<LayerSpec> specs;
    specs.push_back(LayerSpec::linear(5, 6));
    if (with_bn) specs.push_back(LayerSpec::batch_norm());
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::linear(6, 7));
    if (with_bn) specs.push_back(LayerSpec::batch_norm());
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::linear(7, 4));
    Network net = build_network(specs, false, Init::He, 77);
    Matrix xb = testutil::random_matrix(8, 5, rng);
    std::vector<int> labels = {1, 0, 3, 2, 2, 1, 0, 3};

    for (LossKind kind : {LossKind::SoftmaxCE, LossKind::MSE}) {
      BatchCache c = forward(net, xb);
      REQUIRE(relu_margin(net, c) > 1e-4);  // FD step must not straddle a kink
      LossResult res = kind == LossKind::SoftmaxCE
                           ? loss_and_grad(c.per_op.back().out, labels, kind)
                           : loss_and_grad(c.per_op.back().out, Matrix(8, 4), kind);
      backward(net, c, res.grad);
      const double step = 1e-6;
      for (int k = 1; k <= 3; ++k) {
        const Matrix& gw = c.layer_grad_w(k);
        Matrix fd(gw.rows(), gw.cols());
        for (int r = 0; r < gw.rows(); ++r)
          for (int cc = 0; cc < gw.cols(); ++cc)
            fd(r, cc) = kind == LossKind::SoftmaxCE
                            ? fd_weight(net, xb, labels, kind, k, r, cc, step)
                            : fd_weight(net, xb, Matrix(8, 4), kind, k, r, cc, step);
        CHECK(rel_dev(fd, gw) <= 1e-5);
      }
      if (with_bn) {
        // BN parameter gradients against the same loss
        int bn_op = c.bn_ops[0];
        const double step2 = 1e-6;
        for (int j = 0; j < 2; ++j) {
          Network p = net, m = net;
          p.ops[bn_op].gamma[j] += step2;
          m.ops[bn_op].gamma[j] -= step2;
          double fd_g = (mean_loss(p, xb, labels, LossKind::SoftmaxCE) -
                         mean_loss(m, xb, labels, LossKind::SoftmaxCE)) /
                        (2 * step2);
          if (kind == LossKind::SoftmaxCE)
            CHECK(rel_dev(fd_g, c.grad_gamma[0][j]) <= 1e-4);
        }
      }
    }
  }
}

TEST_CASE("step: eta zero, closed form, Adam scalar oracle") {
  Network net = build_network({LayerSpec::linear(1, 1)}, false, Init::LeCun, 9);
  net.ops[0].w(0, 0) = 1.0;
  BatchCache cache = forward(net, Matrix(2, 1));
  cache.grad_w.assign(1, Matrix(1, 1));
  cache.grad_w[0](0, 0) = 0.5;
  cache.have_grads = true;

  Network n0 = net;
  OptimizerState opt0 = make_optimizer(OptKind::FullGD, 0.0, n0);
  step(n0, cache, opt0);
  CHECK(n0.ops[0].w(0, 0) == 1.0);

  Network n1 = net;
  OptimizerState opt1 = make_optimizer(OptKind::FullGD, 0.1, n1);
  step(n1, cache, opt1);
  CHECK(n1.ops[0].w(0, 0) == doctest::Approx(0.95).epsilon(1e-15));

  // Adam vs independent scalar recurrence, constant gradient
  Network na = net;
  OptimizerState opta = make_optimizer(OptKind::Adam, 0.01, na);
  double theta = 1.0, m = 0.0, v = 0.0;
  const double g = 0.5, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 5; ++t) {
    step(na, cache, opta);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mhat = m / (1 - std::pow(b1, t));
    double vhat = v / (1 - std::pow(b2, t));
    theta -= 0.01 * mhat / (std::sqrt(vhat) + eps);
    CHECK(na.ops[0].w(0, 0) == doctest::Approx(theta).epsilon(1e-12));
    if (t == 1)  // bias correction makes the first step ≈ η·sign(g)
      CHECK(std::fabs(na.ops[0].w(0, 0) - 1.0) == doctest::Approx(0.01).epsilon(1e-6));
  }

  // frozen layers are skipped
  Network nf = net;
  nf.ops[0].frozen = true;
  OptimizerState optf = make_optimizer(OptKind::SGD, 0.1, nf);
  step(nf, cache, optf);
  CHECK(nf.ops[0].w(0, 0) == 1.0);
}

TEST_CASE("scale_weights: identity, doubling, spot checks, validation") {
  Network net = build_network(
      {LayerSpec::linear(3, 4), LayerSpec::relu(), LayerSpec::linear(4, 2)}, false, Init::LeCun, 12);
  Network same = scale_weights(net, {1.0, 1.0});
  for (size_t i = 0; i < net.ops.size(); ++i)
    if (net.ops[i].kind == OpKind::Linear)
      CHECK(same.ops[i].w.data() == net.ops[i].w.data());

  Network one = build_network({LayerSpec::linear(2, 2)}, false, Init::LeCun, 13);
  Network dbl = scale_weights(one, {2.0});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(dbl.ops[0].w(i, j) == 2.0 * one.ops[0].w(i, j));

  Rng rng(14);
  std::vector<double> alpha = {0.5 + rng.uniform(), 0.5 + rng.uniform()};
  Network sc = scale_weights(net, alpha);
  CHECK(sc.ops[net.linear_op(1)].w(2, 1) == alpha[0] * net.ops[net.linear_op(1)].w(2, 1));
  CHECK(sc.ops[net.linear_op(2)].w(1, 3) == alpha[1] * net.ops[net.linear_op(2)].w(1, 3));

  CHECK_THROWS_AS(scale_weights(net, {1.0}), ValueError);
  CHECK_THROWS_AS(scale_weights(net, {1.0, -2.0}), ValueError);
}

TEST_CASE("invariants: positive homogeneity and BN scale invariance of activations") {
  Rng rng(61);
  Matrix x = testutil::random_matrix(9, 6, rng);

  Network plain = build_network(
      {LayerSpec::linear(6, 8), LayerSpec::relu(), LayerSpec::linear(8, 8), LayerSpec::relu(),
       LayerSpec::linear(8, 5)},
      false, Init::LeCun, 71);
  std::vector<double> alpha = {1.7, 0.6, 1.3};
  Network scaled = scale_weights(plain, alpha);
  BatchCache cb = forward(plain, x);
  BatchCache cs = forward(scaled, x);
  double prod = 1.0;
  for (int k = 1; k <= 3; ++k) {
    prod *= alpha[k - 1];
    CHECK(rel_dev(cs.layer_preact(k), scale(cb.layer_preact(k), prod)) <= 1e-12);
  }

  Network bn = build_network(
      {LayerSpec::linear(6, 8), LayerSpec::batch_norm(), LayerSpec::relu(), LayerSpec::linear(8, 8),
       LayerSpec::batch_norm(), LayerSpec::relu(), LayerSpec::linear(8, 5),
       LayerSpec::batch_norm()},
      false, Init::LeCun, 72);
  for (Op& op : bn.ops)
    if (op.kind == OpKind::BatchNorm) op.eps = 0.0;  // invariance is exact only at ε=0
  Network bns = scale_weights(bn, alpha);
  BatchCache cbn = forward(bn, x);
  BatchCache cbns = forward(bns, x);
  // activations after each BN unchanged under any positive per-layer scaling
  for (int opi : cbn.bn_ops)
    CHECK(rel_dev(cbns.per_op[opi].out, cbn.per_op[opi].out) <= 1e-10);

  // BN output per neuron: batch mean = β, variance → 1 for γ=1, β=0, small ε
  const Matrix& s = cbn.per_op[cbn.bn_ops[0]].out;
  for (int j = 0; j < s.cols(); ++j) {
    double mu = 0.0;
    for (int n = 0; n < s.rows(); ++n) mu += s(n, j);
    mu /= s.rows();
    CHECK(std::fabs(mu) <= 1e-12);
    double var = 0.0;
    for (int n = 0; n < s.rows(); ++n) var += (s(n, j) - mu) * (s(n, j) - mu);
    var /= s.rows();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // ε-induced bias only
  }
}

TEST_CASE("residual blocks: forward matches composed ops and gradients check out") {
  Rng rng(81);
  Matrix x = testutil::random_matrix(6, 4, rng);

  for (BlockVariant variant : {BlockVariant::PostAct, BlockVariant::PreAct}) {
    Network net = build_network(
        {LayerSpec::linear(4, 4), LayerSpec::residual_block(4, variant), LayerSpec::linear(4, 3)},
        false, Init::He, 91);
    BatchCache cache = forward(net, x);
    std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    REQUIRE(relu_margin(net, cache) > 1e-4);
    LossResult lr = loss_and_grad(cache.per_op.back().out, labels, LossKind::SoftmaxCE);
    backward(net, cache, lr.grad);
    const double step = 1e-6;
    for (int k = 1; k <= net.num_linear; ++k) {
      const Matrix& gw = cache.layer_grad_w(k);
      Matrix fd(gw.rows(), gw.cols());
      for (int r = 0; r < gw.rows(); ++r)
        for (int c = 0; c < gw.cols(); ++c)
          fd(r, c) = fd_weight(net, x, labels, LossKind::SoftmaxCE, k, r, c, step);
      CHECK(rel_dev(fd, gw) <= 1e-5);
    }
  }

  // PostAct block output = ReLU(x + BN(W2·ReLU(BN(W1·x)))) recomputed by hand
  Network net = build_network({LayerSpec::residual_block(4, BlockVariant::PostAct)}, false,
                              Init::He, 92);
  BatchCache cache = forward(net, x);
  const Matrix& w1 = net.ops[net.linear_op(1)].w;
  const Matrix& w2 = net.ops[net.linear_op(2)].w;
  Matrix h1 = matmul_bt(x, w1);
  Matrix s1 = bn_forward(h1, net.ops[cache.bn_ops[0]].gamma, net.ops[cache.bn_ops[0]].beta,
                         net.ops[cache.bn_ops[0]].eps, nullptr);
  Matrix a1 = s1;
  for (double& v : a1.data()) v = v > 0 ? v : 0;
  Matrix h2 = matmul_bt(a1, w2);
  Matrix s2 = bn_forward(h2, net.ops[cache.bn_ops[1]].gamma, net.ops[cache.bn_ops[1]].beta,
                         net.ops[cache.bn_ops[1]].eps, nullptr);
  Matrix out = add(x, s2);
  for (double& v : out.data()) v = v > 0 ? v : 0;
  CHECK(rel_dev(cache.per_op.back().out, out) <= 1e-13);
}
