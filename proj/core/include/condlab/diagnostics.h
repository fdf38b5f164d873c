#pragma once

#include <vector>

#include "condlab/matrix.h"
#include "condlab/nn.h"

namespace condlab {

struct DominationReport {
  int layer = 0;
  double w_spec = 0.0;   // σ_max(W_k)
  double g_spec = 0.0;   // σ_max(∇W_k)
  double ratio = 0.0;    // g_spec / max(w_spec, tiny)
  bool dominated = false;
};

inline constexpr double kDominationThreshold = 1e-3;

DominationReport detect_weight_domination(const Matrix& w, const Matrix& grad_w,
                                          double threshold = kDominationThreshold);

struct NeuronActivity {
  int layer = 0;        // 1-based index among ReLU layers
  int width = 0;
  int dying_count = 0;  // zero output on ALL examples
  int full_count = 0;   // positive output on EVERY example
};

// Exact counts over the provided example set, one entry per ReLU op.
std::vector<NeuronActivity> neuron_activity(const Network& net, const Matrix& x);

struct TheoremReport {
  double dev_activations = 0.0;
  double dev_output_grads = 0.0;
  double dev_weight_grads = 0.0;
  bool pass = false;
  double tolerance = 0.0;
};

// Plain-network scaling identity. Scales W_k by α_k, injects the output
// gradient ∇ĥ_K = μ·g_out on the scaled net (and g_out on the base net), and
// checks x̂_k = (∏_{i≤k}α_i)·x_k, ∇ĥ_k = μ·(∏_{i>k}α_i)·∇h_k,
// ∇Ŵ_k = μ·(∏_{i≠k}α_i)·∇W_k. Max-normalized relative deviations.
TheoremReport verify_theorem1(const Network& net, const Matrix& x,
                              const std::vector<double>& alpha, double grad_scale_mu,
                              const Matrix& injected_grad_out, double tolerance = 1e-10);

// Normalized-network scaling invariance: requires BN immediately after every
// Linear. Uses the real loss on the given labels and checks x̂_k = x_k (all
// post-BN activations), ∇ĥ_k = (1/α_k)·∇h_k, ∇Ŵ_k = (1/α_k)·∇W_k.
TheoremReport verify_theorem2(const Network& net, const Matrix& x,
                              const std::vector<double>& alpha,
                              const std::vector<int>& labels, LossKind loss,
                              double tolerance = 1e-10);

}  // namespace condlab
