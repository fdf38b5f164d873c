// Probe-path cost profile: the factored spectrum works on two d-dim factors
// (O(d^3)) where the materialized Kronecker product would pay O(d^6), and the
// per-layer probe stays interactive at trace widths.

#include <benchmark/benchmark.h>

#include <vector>

#include "condlab/conditioning.h"
#include "condlab/linalg.h"
#include "condlab/nn.h"
#include "condlab/rng.h"

namespace {

using namespace condlab;

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.gaussian();
  return m;
}

Matrix random_spd(int n, Rng& rng) {
  Matrix g = random_matrix(n, n, rng);
  Matrix a = scale(matmul_at(g, g), 1.0 / n);
  for (int i = 0; i < n; ++i) a(i, i) += 0.1;
  return a;
}

// A 3-linear chain with a complete forward/backward cache at width d.
struct ProbeFixture {
  Network net;
  BatchCache cache;

  explicit ProbeFixture(int d, int batch = 512) {
    std::vector<LayerSpec> specs = {LayerSpec::linear(d, d), LayerSpec::relu(),
                                    LayerSpec::linear(d, d), LayerSpec::relu(),
                                    LayerSpec::linear(d, d)};
    net = build_network(specs, false, Init::He, 42 + d);
    Rng rng(4242 + d);
    const Matrix x = random_matrix(batch, d, rng);
    cache = forward(net, x);
    const Matrix gout = random_matrix(batch, d, rng);
    backward(net, cache, gout);
  }
};

void BM_SymEig(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(7 + d);
  const Matrix a = random_spd(d, rng);
  for (auto _ : state) {
    const Spectrum s = sym_eig(a);
    benchmark::DoNotOptimize(s.eigenvalues.data());
  }
  state.SetComplexityN(d);
}
BENCHMARK(BM_SymEig)->RangeMultiplier(2)->Range(16, 256)->Complexity();

// Factored route: eigensolve the two factors, combine the product multiset.
void BM_FactoredSpectrum(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(11 + d);
  const Matrix a = random_spd(d, rng);
  const Matrix b = random_spd(d, rng);
  const std::vector<double> ps = {0.5, 0.8, 0.9, 1.0};
  for (auto _ : state) {
    const KfacSpectrumResult r = kfac_spectrum(a, b, ps);
    benchmark::DoNotOptimize(r.lambda_max_f);
  }
  state.SetComplexityN(d);
}
BENCHMARK(BM_FactoredSpectrum)->RangeMultiplier(2)->Range(16, 128)->Complexity();

// Materialized route at the same factor sizes: build the d^2-dim product and
// eigensolve it. Kept to small d — the cost is the point.
void BM_MaterializedKron(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(11 + d);  // same draws as the factored route
  const Matrix a = random_spd(d, rng);
  const Matrix b = random_spd(d, rng);
  for (auto _ : state) {
    const Spectrum s = sym_eig(kron(a, b));
    benchmark::DoNotOptimize(s.eigenvalues.data());
  }
  state.SetComplexityN(d);
}
BENCHMARK(BM_MaterializedKron)->RangeMultiplier(2)->Range(16, 64)->Complexity();

// The full per-layer probe from a finished cache: covariances, factor
// spectra, product multiset, weight-gradient second moment, norms.
void BM_LayerProbe(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const ProbeFixture fx(d);
  const std::vector<double> ps = {0.5, 0.8, 0.9, 1.0};
  for (auto _ : state) {
    const LayerConditioning lc = layer_conditioning(fx.cache, fx.net, 2, ps);
    benchmark::DoNotOptimize(lc.lambda_max_f_approx);
  }
  state.SetComplexityN(d);
}
BENCHMARK(BM_LayerProbe)->RangeMultiplier(2)->Range(32, 256)->Complexity();

// The exact per-layer curvature oracle at the largest width its parameter
// cap admits, for contrast with BM_LayerProbe at the same width.
void BM_ExactSubFim(benchmark::State& state) {
  const int d = 32;
  const ProbeFixture fx(d);
  Rng rng(99);
  std::vector<int> labels(fx.cache.batch_size());
  for (int& y : labels) y = static_cast<int>(rng.below(d));
  FimConfig fc;
  fc.max_params = 2000;
  for (auto _ : state) {
    const Matrix fim = sub_fim_exact(fx.net, fx.cache.x0, labels, LossKind::SoftmaxCE, 2, fc);
    const Spectrum s = sym_eig(fim);
    benchmark::DoNotOptimize(s.eigenvalues.data());
  }
}
BENCHMARK(BM_ExactSubFim);

// One optimizer step (forward, loss, backward, update) at trace scale.
void BM_TrainStep(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  std::vector<LayerSpec> specs;
  int prev = 144;
  for (int i = 0; i < 4; ++i) {
    specs.push_back(LayerSpec::linear(prev, d));
    specs.push_back(LayerSpec::batch_norm());
    specs.push_back(LayerSpec::relu());
    prev = d;
  }
  specs.push_back(LayerSpec::linear(prev, 10));
  Network net = build_network(specs, false, Init::He, 21);
  OptimizerState opt = make_optimizer(OptKind::SGD, 0.1, net);
  Rng rng(22);
  const Matrix x = random_matrix(256, 144, rng);
  std::vector<int> labels(256);
  for (int& y : labels) y = static_cast<int>(rng.below(10));
  for (auto _ : state) {
    BatchCache cache = forward(net, x);
    const LossResult lr = loss_and_grad(cache.per_op.back().out, labels, LossKind::SoftmaxCE);
    backward(net, cache, lr.grad);
    step(net, cache, opt);
    benchmark::DoNotOptimize(net.ops.front().w.data().data());
  }
  state.SetComplexityN(d);
}
BENCHMARK(BM_TrainStep)->RangeMultiplier(2)->Range(64, 256)->Complexity();

}  // namespace

BENCHMARK_MAIN();
