#include "condlab/diagnostics.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "condlab/error.h"
#include "condlab/linalg.h"

namespace condlab {

namespace {

// Max-normalized relative deviation between a computed matrix and its
// predicted value: max|got − want| / max(max|want|, tiny).
double rel_max_dev(const Matrix& got, const Matrix& want) {
  return max_abs_diff(got, want) / std::max(max_abs(want), 1e-300);
}

void check_alpha(const std::vector<double>& alpha, int num_linear) {
  if (static_cast<int>(alpha.size()) != num_linear)
    throw ValueError("need one scale factor per linear layer");
  for (double a : alpha)
    if (!(a > 0.0)) throw ValueError("scale factors must be positive");
}

}  // namespace

DominationReport detect_weight_domination(const Matrix& w, const Matrix& grad_w,
                                          double threshold) {
  if (!w.same_shape(grad_w)) throw DimensionError("weight and gradient shapes differ");
  DominationReport r;
  r.w_spec = spectral_norm(w);
  r.g_spec = spectral_norm(grad_w);
  r.ratio = r.g_spec / std::max(r.w_spec, 1e-300);
  r.dominated = r.ratio < threshold;
  return r;
}

std::vector<NeuronActivity> neuron_activity(const Network& net, const Matrix& x) {
  BatchCache cache = forward(net, x);
  std::vector<NeuronActivity> out;
  int index = 0;
  for (size_t i = 0; i < net.ops.size(); ++i) {
    if (net.ops[i].kind != OpKind::ReLU) continue;
    const Matrix& a = cache.per_op[i].out;
    NeuronActivity na;
    na.layer = ++index;
    na.width = a.cols();
    for (int j = 0; j < a.cols(); ++j) {
      bool all_zero = true, all_pos = true;
      for (int n = 0; n < a.rows(); ++n) {
        if (a(n, j) > 0.0)
          all_zero = false;
        else
          all_pos = false;
      }
      if (all_zero) ++na.dying_count;
      if (all_pos) ++na.full_count;
    }
    out.push_back(na);
  }
  return out;
}

TheoremReport verify_theorem1(const Network& net, const Matrix& x,
                              const std::vector<double>& alpha, double grad_scale_mu,
                              const Matrix& injected_grad_out, double tolerance) {
  for (const Op& op : net.ops)
    if (op.kind != OpKind::Linear && op.kind != OpKind::ReLU)
      throw ConfigError("the plain-network scaling law needs a linear/rectifier chain");
  check_alpha(alpha, net.num_linear);
  if (injected_grad_out.rows() != x.rows() || injected_grad_out.cols() != net.output_dim)
    throw DimensionError("injected gradient must match the network output shape");

  Network scaled = scale_weights(net, alpha);
  BatchCache cb = forward(net, x);
  BatchCache cs = forward(scaled, x);
  backward(net, cb, injected_grad_out);
  backward(scaled, cs, scale(injected_grad_out, grad_scale_mu));

  const int kk = net.num_linear;
  std::vector<double> prefix(kk + 1, 1.0), suffix(kk + 2, 1.0);
  for (int k = 1; k <= kk; ++k) prefix[k] = prefix[k - 1] * alpha[k - 1];
  for (int k = kk; k >= 1; --k) suffix[k] = suffix[k + 1] * alpha[k - 1];

  TheoremReport rep;
  rep.tolerance = tolerance;
  for (int k = 1; k <= kk; ++k) {
    rep.dev_activations = std::max(
        rep.dev_activations, rel_max_dev(cs.layer_preact(k), scale(cb.layer_preact(k), prefix[k])));
    rep.dev_output_grads = std::max(
        rep.dev_output_grads,
        rel_max_dev(cs.layer_grad(k), scale(cb.layer_grad(k), grad_scale_mu * suffix[k + 1])));
    rep.dev_weight_grads =
        std::max(rep.dev_weight_grads,
                 rel_max_dev(cs.layer_grad_w(k),
                             scale(cb.layer_grad_w(k),
                                   grad_scale_mu * prefix[k - 1] * suffix[k + 1])));
  }
  rep.pass = rep.dev_activations <= tolerance && rep.dev_output_grads <= tolerance &&
             rep.dev_weight_grads <= tolerance;
  return rep;
}

TheoremReport verify_theorem2(const Network& net, const Matrix& x,
                              const std::vector<double>& alpha, const std::vector<int>& labels,
                              LossKind loss, double tolerance) {
  for (size_t i = 0; i < net.ops.size(); ++i) {
    const Op& op = net.ops[i];
    if (op.kind == OpKind::ResSave || op.kind == OpKind::ResAdd)
      throw ConfigError("the normalized scaling law needs a linear chain");
    if (op.kind == OpKind::Linear &&
        (i + 1 >= net.ops.size() || net.ops[i + 1].kind != OpKind::BatchNorm))
      throw ConfigError("the normalized scaling law needs batch norm after every linear layer");
  }
  check_alpha(alpha, net.num_linear);

  Network scaled = scale_weights(net, alpha);
  BatchCache cb = forward(net, x);
  BatchCache cs = forward(scaled, x);
  LossResult lb = loss_and_grad(cb.per_op.back().out, labels, loss);
  LossResult ls = loss_and_grad(cs.per_op.back().out, labels, loss);
  backward(net, cb, lb.grad);
  backward(scaled, cs, ls.grad);

  TheoremReport rep;
  rep.tolerance = tolerance;
  for (int opi : cb.bn_ops)
    rep.dev_activations =
        std::max(rep.dev_activations, rel_max_dev(cs.per_op[opi].out, cb.per_op[opi].out));
  for (int k = 1; k <= net.num_linear; ++k) {
    const double inv = 1.0 / alpha[k - 1];
    rep.dev_output_grads = std::max(
        rep.dev_output_grads, rel_max_dev(cs.layer_grad(k), scale(cb.layer_grad(k), inv)));
    rep.dev_weight_grads = std::max(
        rep.dev_weight_grads, rel_max_dev(cs.layer_grad_w(k), scale(cb.layer_grad_w(k), inv)));
  }
  rep.pass = rep.dev_activations <= tolerance && rep.dev_output_grads <= tolerance &&
             rep.dev_weight_grads <= tolerance;
  return rep;
}

}  // namespace condlab
