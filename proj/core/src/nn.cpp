#include "condlab/nn.h"

#include <cmath>
#include <cstdio>
#include <string>

#include "condlab/error.h"
#include "condlab/rng.h"

namespace condlab {

namespace {

Op make_linear(int in, int out) {
  Op op;
  op.kind = OpKind::Linear;
  op.in_dim = in;
  op.out_dim = out;
  return op;
}

Op make_pointwise(OpKind kind, int dim, int slot = -1) {
  Op op;
  op.kind = kind;
  op.in_dim = dim;
  op.out_dim = dim;
  op.res_slot = slot;
  return op;
}

int count_res_slots(const Network& net) {
  int slots = 0;
  for (const Op& op : net.ops)
    if (op.kind == OpKind::ResSave) slots = std::max(slots, op.res_slot + 1);
  return slots;
}

}  // namespace

int Network::linear_op(int k) const {
  for (size_t i = 0; i < ops.size(); ++i)
    if (ops[i].kind == OpKind::Linear && ops[i].linear_index == k) return static_cast<int>(i);
  throw ValueError("no linear layer with index " + std::to_string(k));
}

Network build_network(const std::vector<LayerSpec>& specs, bool last_bn, Init init,
                      std::uint64_t seed) {
  if (specs.empty()) throw ConfigError("network spec list is empty");

  Network net;
  net.last_bn = last_bn;
  int cur = -1;  // running feature dimension; -1 until the first sized layer
  int slots = 0;
  for (const LayerSpec& s : specs) {
    switch (s.kind) {
      case LayerKind::Linear:
        if (s.in_dim <= 0 || s.out_dim <= 0)
          throw ConfigError("linear layer needs positive dimensions");
        if (cur >= 0 && cur != s.in_dim)
          throw ConfigError("linear layer input dimension " + std::to_string(s.in_dim) +
                            " does not match preceding width " + std::to_string(cur));
        net.ops.push_back(make_linear(s.in_dim, s.out_dim));
        cur = s.out_dim;
        break;
      case LayerKind::ReLU:
        if (cur < 0) throw ConfigError("activation before any sized layer");
        net.ops.push_back(make_pointwise(OpKind::ReLU, cur));
        break;
      case LayerKind::BatchNorm:
        if (cur < 0) throw ConfigError("batch norm before any sized layer");
        net.ops.push_back(make_pointwise(OpKind::BatchNorm, cur));
        break;
      case LayerKind::ResidualBlock: {
        if (s.in_dim <= 0 || s.in_dim != s.out_dim)
          throw ConfigError("residual block needs equal positive in/out dimensions");
        if (cur >= 0 && cur != s.in_dim)
          throw ConfigError("residual block dimension does not match preceding width");
        const int d = s.in_dim;
        const int slot = slots++;
        net.ops.push_back(make_pointwise(OpKind::ResSave, d, slot));
        if (s.block_variant == BlockVariant::PostAct) {
          // y = ReLU(x + BN(W2·ReLU(BN(W1·x))))
          net.ops.push_back(make_linear(d, d));
          net.ops.push_back(make_pointwise(OpKind::BatchNorm, d));
          net.ops.push_back(make_pointwise(OpKind::ReLU, d));
          net.ops.push_back(make_linear(d, d));
          net.ops.push_back(make_pointwise(OpKind::BatchNorm, d));
          net.ops.push_back(make_pointwise(OpKind::ResAdd, d, slot));
          net.ops.push_back(make_pointwise(OpKind::ReLU, d));
        } else {
          // y = x + W2·ReLU(BN(W1·ReLU(BN(x))))
          net.ops.push_back(make_pointwise(OpKind::BatchNorm, d));
          net.ops.push_back(make_pointwise(OpKind::ReLU, d));
          net.ops.push_back(make_linear(d, d));
          net.ops.push_back(make_pointwise(OpKind::BatchNorm, d));
          net.ops.push_back(make_pointwise(OpKind::ReLU, d));
          net.ops.push_back(make_linear(d, d));
          net.ops.push_back(make_pointwise(OpKind::ResAdd, d, slot));
        }
        cur = d;
        break;
      }
    }
  }

  // Optional normalizer in front of the final linear layer.
  if (last_bn) {
    int last_linear = -1;
    for (size_t i = 0; i < net.ops.size(); ++i)
      if (net.ops[i].kind == OpKind::Linear) last_linear = static_cast<int>(i);
    if (last_linear < 0) throw ConfigError("last_bn requires at least one linear layer");
    net.ops.insert(net.ops.begin() + last_linear,
                   make_pointwise(OpKind::BatchNorm, net.ops[last_linear].in_dim));
  }

  // Number the linear layers and initialize parameters, drawing weights from
  // one stream in op order so a seed pins the whole network.
  Rng rng(seed);
  int k = 0;
  for (Op& op : net.ops) {
    if (op.kind == OpKind::Linear) {
      op.linear_index = ++k;
      op.w = Matrix(op.out_dim, op.in_dim);
      const double fan_in = static_cast<double>(op.in_dim);
      if (init == Init::LeCunUniform) {
        const double bound = 1.0 / std::sqrt(fan_in);
        for (double& v : op.w.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
      } else {
        const double sd = std::sqrt((init == Init::He ? 2.0 : 1.0) / fan_in);
        for (double& v : op.w.data()) v = sd * rng.gaussian();
      }
    } else if (op.kind == OpKind::BatchNorm) {
      op.gamma.assign(op.out_dim, 1.0);
      op.beta.assign(op.out_dim, 0.0);
      op.eps = 1e-5;
    }
  }
  net.num_linear = k;
  if (k == 0) throw ConfigError("network has no linear layers");
  net.input_dim = net.ops.front().in_dim;
  net.output_dim = net.ops.back().out_dim;
  return net;
}

Network scale_weights(const Network& net, const std::vector<double>& alpha) {
  if (static_cast<int>(alpha.size()) != net.num_linear)
    throw ValueError("need one scale factor per linear layer");
  for (double a : alpha)
    if (!(a > 0.0)) throw ValueError("scale factors must be positive");
  Network out = net;
  for (Op& op : out.ops)
    if (op.kind == OpKind::Linear)
      for (double& v : op.w.data()) v *= alpha[op.linear_index - 1];
  return out;
}

// ---- Cache accessors ----------------------------------------------------------

const Matrix& BatchCache::op_input(int op_index) const {
  if (op_index < 0 || op_index >= static_cast<int>(per_op.size()))
    throw ValueError("op index out of range");
  return op_index == 0 ? x0 : per_op[op_index - 1].out;
}

const Matrix& BatchCache::layer_input(int k) const {
  if (k < 1 || k > static_cast<int>(linear_ops.size()))
    throw ValueError("linear layer index out of range");
  return op_input(linear_ops[k - 1]);
}

const Matrix& BatchCache::layer_preact(int k) const {
  if (k < 1 || k > static_cast<int>(linear_ops.size()))
    throw ValueError("linear layer index out of range");
  return per_op[linear_ops[k - 1]].out;
}

const Matrix& BatchCache::layer_grad(int k) const {
  if (!have_grads) throw ValueError("gradients not computed for this batch");
  if (k < 1 || k > static_cast<int>(linear_ops.size()))
    throw ValueError("linear layer index out of range");
  return per_op[linear_ops[k - 1]].grad_out;
}

const Matrix& BatchCache::layer_grad_w(int k) const {
  if (!have_grads) throw ValueError("gradients not computed for this batch");
  if (k < 1 || k > static_cast<int>(grad_w.size()))
    throw ValueError("linear layer index out of range");
  return grad_w[k - 1];
}

// ---- Forward ------------------------------------------------------------------

Matrix bn_forward(const Matrix& h, const std::vector<double>& gamma,
                  const std::vector<double>& beta, double eps, BnStats* stats) {
  const int n = h.rows(), d = h.cols();
  if (n < 2) throw DimensionError("batch normalization needs at least 2 examples");
  if (static_cast<int>(gamma.size()) != d || static_cast<int>(beta.size()) != d)
    throw DimensionError("batch norm parameter size does not match width");
  if (eps < 0.0) throw ValueError("batch norm epsilon must be non-negative");

  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* r = h.row(i);
    for (int j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (int j = 0; j < d; ++j) mean[j] /= n;
  for (int i = 0; i < n; ++i) {
    const double* r = h.row(i);
    for (int j = 0; j < d; ++j) {
      const double dev = r[j] - mean[j];
      var[j] += dev * dev;
    }
  }
  for (int j = 0; j < d; ++j) var[j] /= n;

  std::vector<double> inv(d);
  for (int j = 0; j < d; ++j) inv[j] = 1.0 / std::sqrt(var[j] + eps);

  Matrix xhat(n, d), out(n, d);
  for (int i = 0; i < n; ++i) {
    const double* r = h.row(i);
    double* xr = xhat.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < d; ++j) {
      const double xh = (r[j] - mean[j]) * inv[j];
      xr[j] = xh;
      orow[j] = gamma[j] * xh + beta[j];
    }
  }
  if (stats) {
    stats->mean = std::move(mean);
    stats->var = std::move(var);
    stats->xhat = xhat;
  }
  return out;
}

Matrix bn_backward(const Matrix& grad_s, const BnStats& stats,
                   const std::vector<double>& gamma, double eps,
                   std::vector<double>* grad_gamma, std::vector<double>* grad_beta) {
  const int n = grad_s.rows(), d = grad_s.cols();
  if (stats.xhat.rows() != n || stats.xhat.cols() != d)
    throw DimensionError("batch norm stats do not match gradient shape");
  if (static_cast<int>(gamma.size()) != d)
    throw DimensionError("batch norm parameter size does not match width");

  // Batch sums for the parameter gradients, batch means for the input one.
  std::vector<double> sum_gs(d, 0.0), sum_gsx(d, 0.0), gsum(d, 0.0), bsum(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* g = grad_s.row(i);
    const double* xh = stats.xhat.row(i);
    for (int j = 0; j < d; ++j) {
      const double gs = gamma[j] * g[j];
      sum_gs[j] += gs;
      sum_gsx[j] += gs * xh[j];
      gsum[j] += g[j] * xh[j];
      bsum[j] += g[j];
    }
  }
  std::vector<double> m1(d), m2(d), inv(d);
  for (int j = 0; j < d; ++j) {
    m1[j] = sum_gs[j] / n;
    m2[j] = sum_gsx[j] / n;
    inv[j] = 1.0 / std::sqrt(stats.var[j] + eps);
  }

  Matrix grad_h(n, d);
  for (int i = 0; i < n; ++i) {
    const double* g = grad_s.row(i);
    const double* xh = stats.xhat.row(i);
    double* out = grad_h.row(i);
    for (int j = 0; j < d; ++j)
      out[j] = (gamma[j] * g[j] - m1[j] - m2[j] * xh[j]) * inv[j];
  }
  if (grad_gamma) *grad_gamma = std::move(gsum);
  if (grad_beta) *grad_beta = std::move(bsum);
  return grad_h;
}

BatchCache forward(const Network& net, const Matrix& x) {
  if (net.ops.empty()) throw ValueError("network has no ops");
  if (x.cols() != net.input_dim)
    throw DimensionError("input has " + std::to_string(x.cols()) + " features, network expects " +
                         std::to_string(net.input_dim));
  if (x.rows() < 1) throw DimensionError("empty batch");
  for (const Op& op : net.ops)
    if (op.kind == OpKind::BatchNorm && x.rows() < 2)
      throw DimensionError("batch normalization needs at least 2 examples");

  BatchCache cache;
  cache.x0 = x;
  cache.per_op.resize(net.ops.size());
  std::vector<Matrix> saved(count_res_slots(net));

  for (size_t i = 0; i < net.ops.size(); ++i) {
    const Op& op = net.ops[i];
    const Matrix& in = i == 0 ? cache.x0 : cache.per_op[i - 1].out;
    OpCache& oc = cache.per_op[i];
    switch (op.kind) {
      case OpKind::Linear:
        oc.out = matmul_bt(in, op.w);
        cache.linear_ops.push_back(static_cast<int>(i));
        break;
      case OpKind::BatchNorm: {
        BnStats stats;
        oc.out = bn_forward(in, op.gamma, op.beta, op.eps, &stats);
        oc.mean = std::move(stats.mean);
        oc.var = std::move(stats.var);
        oc.xhat = std::move(stats.xhat);
        cache.bn_ops.push_back(static_cast<int>(i));
        break;
      }
      case OpKind::ReLU: {
        oc.out = in;
        for (double& v : oc.out.data()) v = v > 0.0 ? v : 0.0;
        break;
      }
      case OpKind::ResSave:
        saved[op.res_slot] = in;
        oc.out = in;
        break;
      case OpKind::ResAdd:
        oc.out = add(in, saved[op.res_slot]);
        break;
    }
  }
  return cache;
}

// ---- Loss ----------------------------------------------------------------------

LossResult loss_and_grad(const Matrix& h_out, const Matrix& targets, LossKind kind) {
  if (!h_out.same_shape(targets)) throw DimensionError("targets do not match output shape");
  const int n = h_out.rows(), c = h_out.cols();
  LossResult res;
  res.grad = Matrix(n, c);
  if (kind == LossKind::MSE) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* h = h_out.row(i);
      const double* y = targets.row(i);
      double* g = res.grad.row(i);
      for (int j = 0; j < c; ++j) {
        const double diff = h[j] - y[j];
        total += diff * diff;
        g[j] = 2.0 * diff;
      }
    }
    res.loss = total / n;
    return res;
  }
  // SoftmaxCE against dense targets: rows must be probability vectors.
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* h = h_out.row(i);
    const double* y = targets.row(i);
    double* g = res.grad.row(i);
    double mx = h[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, h[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(h[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < c; ++j) {
      const double p = std::exp(h[j] - lse);
      g[j] = p - y[j];
      total -= y[j] * (h[j] - lse);
    }
  }
  res.loss = total / n;
  return res;
}

LossResult loss_and_grad(const Matrix& h_out, const std::vector<int>& labels, LossKind kind) {
  const int n = h_out.rows(), c = h_out.cols();
  if (static_cast<int>(labels.size()) != n)
    throw DimensionError("label count does not match batch size");
  for (int y : labels)
    if (y < 0 || y >= c) throw ValueError("label out of range");
  Matrix onehot(n, c);
  for (int i = 0; i < n; ++i) onehot(i, labels[i]) = 1.0;
  return loss_and_grad(h_out, onehot, kind);
}

// ---- Backward -------------------------------------------------------------------

void backward(const Network& net, BatchCache& cache, const Matrix& grad_h_out) {
  if (cache.per_op.size() != net.ops.size())
    throw DimensionError("cache does not belong to this network");
  const Matrix& last = cache.per_op.back().out;
  if (!grad_h_out.same_shape(last))
    throw DimensionError("output gradient does not match network output shape");
  const int n = cache.batch_size();

  cache.grad_w.assign(net.num_linear, Matrix());
  cache.grad_gamma.assign(cache.bn_ops.size(), {});
  cache.grad_beta.assign(cache.bn_ops.size(), {});
  std::vector<int> op_to_bn(net.ops.size(), -1);
  for (size_t b = 0; b < cache.bn_ops.size(); ++b) op_to_bn[cache.bn_ops[b]] = static_cast<int>(b);

  std::vector<Matrix> skip(count_res_slots(net));
  Matrix g = grad_h_out;
  for (int i = static_cast<int>(net.ops.size()) - 1; i >= 0; --i) {
    const Op& op = net.ops[i];
    OpCache& oc = cache.per_op[i];
    oc.grad_out = g;
    switch (op.kind) {
      case OpKind::Linear: {
        // mean-loss gradient: per-example rows carry the per-example scale
        cache.grad_w[op.linear_index - 1] =
            scale(matmul_at(g, cache.op_input(i)), 1.0 / n);
        if (i > 0) g = matmul(g, op.w);
        break;
      }
      case OpKind::BatchNorm: {
        BnStats stats;
        stats.mean = oc.mean;
        stats.var = oc.var;
        stats.xhat = oc.xhat;
        std::vector<double> gg, gb;
        g = bn_backward(g, stats, op.gamma, op.eps, &gg, &gb);
        const int b = op_to_bn[i];
        for (double& v : gg) v /= n;
        for (double& v : gb) v /= n;
        cache.grad_gamma[b] = std::move(gg);
        cache.grad_beta[b] = std::move(gb);
        break;
      }
      case OpKind::ReLU: {
        const Matrix& in = cache.op_input(i);
        for (int r = 0; r < g.rows(); ++r) {
          double* gr = g.row(r);
          const double* ir = in.row(r);
          for (int j = 0; j < g.cols(); ++j)
            if (!(ir[j] > 0.0)) gr[j] = 0.0;
        }
        break;
      }
      case OpKind::ResAdd:
        skip[op.res_slot] = g;  // copy continues down the skip path
        break;
      case OpKind::ResSave:
        g = add(g, skip[op.res_slot]);
        break;
    }
  }
  cache.have_grads = true;
}

// ---- Optimizers -------------------------------------------------------------------

OptimizerState make_optimizer(OptKind kind, double lr, const Network& net) {
  OptimizerState opt;
  opt.kind = kind;
  opt.lr = lr;
  if (kind == OptKind::Adam) {
    for (const Op& op : net.ops) {
      if (op.kind == OpKind::Linear) {
        opt.m_w.emplace_back(op.out_dim, op.in_dim);
        opt.v_w.emplace_back(op.out_dim, op.in_dim);
      } else if (op.kind == OpKind::BatchNorm) {
        opt.m_g.emplace_back(op.out_dim, 0.0);
        opt.v_g.emplace_back(op.out_dim, 0.0);
        opt.m_b.emplace_back(op.out_dim, 0.0);
        opt.v_b.emplace_back(op.out_dim, 0.0);
      }
    }
  }
  return opt;
}

namespace {

void adam_update(std::vector<double>& theta, const std::vector<double>& g,
                 std::vector<double>& m, std::vector<double>& v, const OptimizerState& opt,
                 double c1, double c2) {
  for (size_t i = 0; i < theta.size(); ++i) {
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
    theta[i] -= opt.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps_adam);
  }
}

}  // namespace

void step(Network& net, const BatchCache& grads, OptimizerState& opt) {
  if (!grads.have_grads) throw ValueError("no gradients in cache");
  if (static_cast<int>(grads.grad_w.size()) != net.num_linear)
    throw DimensionError("gradient cache does not match network");

  if (opt.kind != OptKind::Adam) {
    int bi = 0;
    for (Op& op : net.ops) {
      if (op.kind == OpKind::Linear) {
        if (!op.frozen) {
          const Matrix& gw = grads.grad_w[op.linear_index - 1];
          for (size_t i = 0; i < op.w.data().size(); ++i)
            op.w.data()[i] -= opt.lr * gw.data()[i];
        }
      } else if (op.kind == OpKind::BatchNorm) {
        const std::vector<double>& gg = grads.grad_gamma[bi];
        const std::vector<double>& gb = grads.grad_beta[bi];
        for (int j = 0; j < op.out_dim; ++j) {
          op.gamma[j] -= opt.lr * gg[j];
          op.beta[j] -= opt.lr * gb[j];
        }
        ++bi;
      }
    }
    return;
  }

  opt.t += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  int li = 0, bi = 0;
  for (Op& op : net.ops) {
    if (op.kind == OpKind::Linear) {
      if (!op.frozen) {
        const Matrix& gw = grads.grad_w[op.linear_index - 1];
        Matrix& m = opt.m_w[li];
        Matrix& v = opt.v_w[li];
        for (size_t i = 0; i < op.w.data().size(); ++i) {
          const double g = gw.data()[i];
          m.data()[i] = opt.beta1 * m.data()[i] + (1.0 - opt.beta1) * g;
          v.data()[i] = opt.beta2 * v.data()[i] + (1.0 - opt.beta2) * g * g;
          op.w.data()[i] -= opt.lr * (m.data()[i] / c1) / (std::sqrt(v.data()[i] / c2) + opt.eps_adam);
        }
      }
      ++li;
    } else if (op.kind == OpKind::BatchNorm) {
      adam_update(op.gamma, grads.grad_gamma[bi], opt.m_g[bi], opt.v_g[bi], opt, c1, c2);
      adam_update(op.beta, grads.grad_beta[bi], opt.m_b[bi], opt.v_b[bi], opt, c1, c2);
      ++bi;
    }
  }
}

}  // namespace condlab
