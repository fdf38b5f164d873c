#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "condlab/linalg.h"
#include "condlab/matrix.h"
#include "condlab/nn.h"

namespace condlab {

// Generalized condition number: λ_max / λ_p with λ_p the ⌈p·d⌉-th eigenvalue
// in descending order. If λ_p sits at or below the rank threshold: for p = 1
// the smallest eigenvalue above the threshold is substituted (classic κ with
// λ_min the minimum nonzero eigenvalue); for p < 1 the result is infinity.
double kappa_p(const Spectrum& spec, double p);

struct LayerConditioning {
  int layer = 0;  // 1-based Linear index
  double lambda_max_sx = 0.0, lambda_max_sgh = 0.0;
  std::map<double, double> kappa_sx, kappa_sgh;  // p → κ_p
  double lambda_max_f_approx = 0.0;              // λ_max(Σ_x)·λ_max(Σ_∇h)
  double kappa_f_approx = 0.0;
  std::map<double, double> kappa_f;              // p → κ_p of the product multiset
  double lambda_max_sgw = 0.0;                   // λ_max of weight-grad second moment
  double w_fro = 0.0, w_spec = 0.0, g_spec = 0.0;
};

enum class LabelMode { Empirical, Sampled };

struct FimConfig {
  LabelMode label_mode = LabelMode::Empirical;
  int samples = 1;            // label draws per example in Sampled mode
  std::int64_t max_params = 2000;
  std::uint64_t seed = 0;     // pins the Sampled-mode label draws
};

// Σ_x (input second moment) and Σ_∇h (output-gradient second moment, with the
// 1/N batch mean) for the k-th Linear layer of a cache that completed backward.
struct LayerCovariances {
  Matrix sigma_x;
  Matrix sigma_gh;
};
LayerCovariances layer_covariances(const BatchCache& cache, int k);

// The fast path: spectra of the factors combined per the Kronecker eigenvalue
// rule — λ_max multiplies, and κ_p comes from the sorted pairwise-product
// multiset without materializing the big matrix.
struct KfacSpectrumResult {
  double lambda_max_f = 0.0;
  double kappa_f = 0.0;                 // κ at p = 1
  std::map<double, double> kappa_p_f;   // per requested p
  Spectrum product_spectrum;            // the full sorted product multiset
};
KfacSpectrumResult kfac_spectrum(const Matrix& sigma_x, const Matrix& sigma_gh,
                                 const std::vector<double>& p_list);

// Exact per-layer curvature block: mean over examples (and label draws) of
// vec(∇W_k(i))·vec(∇W_k(i))ᵀ with per-example ∇W_k(i) = ∇h_k(i)ᵀ x_{k−1}(i),
// vec taken row-major. Empirical mode uses the dataset labels; Sampled mode
// draws labels from the categorical softmax of the network output.
Matrix sub_fim_exact(const Network& net, const Matrix& x, const std::vector<int>& labels,
                     LossKind loss, int k, const FimConfig& cfg);

// Same construction over all Linear parameters at once, ordered layer-by-layer
// and row-major within each W_k.
Matrix full_fim_exact(const Network& net, const Matrix& x, const std::vector<int>& labels,
                      LossKind loss, const FimConfig& cfg);

// Gradient second-moment matrix M: the same outer-product construction with
// label_mode forced to Empirical. k ≤ 0 selects the full-parameter matrix.
Matrix second_moment_matrix(const Network& net, const Matrix& x, const std::vector<int>& labels,
                            LossKind loss, int k, const FimConfig& cfg);

// Curvature of the least-squares linear model: E(xxᵀ) ⊗ I_out.
Matrix hessian_linear_regression(const Matrix& x, int out_dim);

// Curvature of the softmax linear classifier at uniform predictions:
// E(xxᵀ) ⊗ S with S = (1/c)(I_c − (1/c)·1_c).
Matrix hessian_linear_classifier(const Matrix& x, int c);

enum class SgwMode { KfacApprox, Exact };

// λ_max of the weight-gradient second moment for layer k. Exact computes the
// top eigenvalue of the per-example vec(∇W) outer-product mean through the
// equivalent example-space Gram matrix (1/N)(XXᵀ ∘ GGᵀ), so no in·out-sized
// matrix is formed; KfacApprox multiplies the factor maxima instead.
double weight_grad_second_moment(const BatchCache& cache, int k, SgwMode mode,
                                 std::int64_t max_params = 2000);

// Everything the trace records per layer, computed from a finished cache.
LayerConditioning layer_conditioning(const BatchCache& cache, const Network& net, int k,
                                     const std::vector<double>& p_list);

}  // namespace condlab
