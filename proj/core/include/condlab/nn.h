#pragma once

#include <cstdint>
#include <vector>

#include "condlab/matrix.h"

namespace condlab {

// ---- Topology description ---------------------------------------------------

enum class LayerKind { Linear, ReLU, BatchNorm, ResidualBlock };
enum class BlockVariant { PostAct, PreAct };

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  int in_dim = 0;   // Linear / ResidualBlock
  int out_dim = 0;  // Linear / ResidualBlock (must equal in_dim for blocks)
  BlockVariant block_variant = BlockVariant::PostAct;

  static LayerSpec linear(int in, int out) { return {LayerKind::Linear, in, out, BlockVariant::PostAct}; }
  static LayerSpec relu() { return {LayerKind::ReLU, 0, 0, BlockVariant::PostAct}; }
  static LayerSpec batch_norm() { return {LayerKind::BatchNorm, 0, 0, BlockVariant::PostAct}; }
  static LayerSpec residual_block(int dim, BlockVariant v) { return {LayerKind::ResidualBlock, dim, dim, v}; }
};

enum class Init { LeCun, He, LeCunUniform };

// ---- Compiled network -------------------------------------------------------

// LayerSpec lists are compiled to a flat op sequence; residual blocks expand
// to ResSave ... ResAdd spans so forward/backward stay simple linear walks.
enum class OpKind { Linear, BatchNorm, ReLU, ResSave, ResAdd };

struct Op {
  OpKind kind;
  int in_dim = 0;
  int out_dim = 0;
  // Linear
  Matrix w;  // out_dim × in_dim; no bias term (BN's β supplies shifts)
  bool frozen = false;
  int linear_index = 0;  // 1-based among Linear ops; 0 for non-linear ops
  // BatchNorm
  std::vector<double> gamma, beta;
  double eps = 1e-5;
  // ResSave/ResAdd: which skip slot this op writes/reads
  int res_slot = -1;
};

struct Network {
  std::vector<Op> ops;
  int input_dim = 0;
  int output_dim = 0;
  int num_linear = 0;
  bool last_bn = false;

  // Op index of the k-th Linear (k is 1-based). Throws on bad k.
  int linear_op(int k) const;
};

Network build_network(const std::vector<LayerSpec>& specs, bool last_bn, Init init,
                      std::uint64_t seed);

// Ŵ_k = α_k·W_k for every Linear layer, in order; BN parameters untouched.
Network scale_weights(const Network& net, const std::vector<double>& alpha);

// ---- Forward / backward -----------------------------------------------------

struct OpCache {
  Matrix out;        // op output, N × out_dim
  Matrix grad_out;   // dL/d(out) rows at per-example-loss scale (backward)
  // BatchNorm only:
  std::vector<double> mean, var;  // batch statistics (biased variance)
  Matrix xhat;                    // standardized values
};

struct BatchCache {
  Matrix x0;  // network input
  std::vector<OpCache> per_op;
  std::vector<int> linear_ops;              // op index of Linear k (k-1 slot)
  std::vector<Matrix> grad_w;               // per Linear k: (1/N)(∇h_k)ᵀx_{k−1}
  std::vector<std::vector<double>> grad_gamma, grad_beta;  // per BN op index order
  std::vector<int> bn_ops;                  // op index of each BatchNorm
  bool have_grads = false;

  int batch_size() const { return x0.rows(); }
  // Input rows of op i (x0 for the first op).
  const Matrix& op_input(int op_index) const;
  // Convenience accessors in layer terms (k = 1-based Linear index).
  const Matrix& layer_input(int k) const;      // x_{k−1}
  const Matrix& layer_preact(int k) const;     // h_k
  const Matrix& layer_grad(int k) const;       // ∇h_k
  const Matrix& layer_grad_w(int k) const;     // ∇W_k
};

// Runs the net in training mode (BN always uses current-batch statistics).
BatchCache forward(const Network& net, const Matrix& x);

// Standalone BN forward: s = γ·(h−μ)/√(σ²+ε) + β with batch statistics.
struct BnStats {
  std::vector<double> mean, var;
  Matrix xhat;
};
Matrix bn_forward(const Matrix& h, const std::vector<double>& gamma,
                  const std::vector<double>& beta, double eps, BnStats* stats);

// Standalone BN backward. grad_gamma/grad_beta are batch *sums*;
// grad_h = (1/σ)(∇ŝ − mean_B(∇ŝ) − mean_B(∇ŝ·x̂)·x̂) with ∇ŝ = γ·∇s.
Matrix bn_backward(const Matrix& grad_s, const BnStats& stats,
                   const std::vector<double>& gamma, double eps,
                   std::vector<double>* grad_gamma, std::vector<double>* grad_beta);

enum class LossKind { MSE, SoftmaxCE };

// Mean loss over the batch plus per-example output-gradients (rows are the
// gradients of each example's own loss term, not divided by N).
struct LossResult {
  double loss = 0.0;
  Matrix grad;  // N × c
};
LossResult loss_and_grad(const Matrix& h_out, const Matrix& targets, LossKind kind);
LossResult loss_and_grad(const Matrix& h_out, const std::vector<int>& labels, LossKind kind);

// Fills all grad_out / grad_w / grad_gamma / grad_beta in the cache.
// grad_out rows stay at per-example-loss scale; stored parameter gradients
// are mean-loss gradients (sums divided by N).
void backward(const Network& net, BatchCache& cache, const Matrix& grad_h_out);

// ---- Optimizers ---------------------------------------------------------------

enum class OptKind { FullGD, SGD, Adam };

struct OptimizerState {
  OptKind kind = OptKind::SGD;
  double lr = 0.1;
  // Adam
  double beta1 = 0.9, beta2 = 0.999, eps_adam = 1e-8;
  std::int64_t t = 0;
  std::vector<Matrix> m_w, v_w;                       // per Linear k
  std::vector<std::vector<double>> m_g, v_g, m_b, v_b;  // per BN op order
};

OptimizerState make_optimizer(OptKind kind, double lr, const Network& net);

// θ ← θ − η·g (FullGD/SGD) or the bias-corrected Adam update. Linear layers
// flagged frozen are skipped entirely.
void step(Network& net, const BatchCache& grads, OptimizerState& opt);

}  // namespace condlab
