#pragma once

// Trainable layers over the autodiff primitives: standard blocks plus the
// special pieces of the three-stage classifier (SE, ASPP, residual/stem
// encoder blocks, LSTM/BiLSTM, the liquid time-constant cell, and the KAN
// dense layer with learnable per-edge spline activations).

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "sleepnet/ops.hpp"
#include "sleepnet/tensor.hpp"

namespace sleepnet::nn {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;  // false for batch-norm running statistics
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
std::int64_t trainable_count(const ParamList<T>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) {
    if (p.trainable) n += p.tensor.size();
  }
  return n;
}

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<T>(rng.uniform(-limit, limit));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<T>(rng.normal(0.0, stddev));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

// ---------------------------------------------------------------------------

template <typename T>
class Dense {
 public:
  Dense(std::int64_t in, std::int64_t out, Rng& rng)
      : w_(glorot_uniform<T>(Shape{in, out}, in, out, rng)), b_(zeros_param<T>(Shape{out})) {}

  Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, w_), b_); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w", w_, true});
    out.push_back({prefix + ".b", b_, true});
  }
  std::int64_t param_count() const { return w_.size() + b_.size(); }
  std::int64_t in_features() const { return w_.dim(0); }
  std::int64_t out_features() const { return w_.dim(1); }
  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  Tensor<T> w_, b_;
};

template <typename T>
class Conv1d {
 public:
  Conv1d(std::int64_t in_ch, std::int64_t filters, int kernel, Rng& rng, int stride = 1,
         int dilation = 1)
      : w_(he_normal<T>(Shape{kernel, in_ch, filters}, kernel * in_ch, rng)),
        b_(zeros_param<T>(Shape{filters})),
        stride_(stride),
        dilation_(dilation) {}

  Tensor<T> forward(const Tensor<T>& x) const { return conv1d(x, w_, b_, stride_, dilation_); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".kernel", w_, true});
    out.push_back({prefix + ".bias", b_, true});
  }
  std::int64_t param_count() const { return w_.size() + b_.size(); }
  Tensor<T>& kernel() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  Tensor<T> w_, b_;
  int stride_, dilation_;
};

template <typename T>
class Conv2d {
 public:
  Conv2d(std::int64_t in_ch, std::int64_t filters, int kernel, Rng& rng, int stride = 1,
         int dilation = 1)
      : w_(he_normal<T>(Shape{kernel, kernel, in_ch, filters}, kernel * kernel * in_ch, rng)),
        b_(zeros_param<T>(Shape{filters})),
        stride_(stride),
        dilation_(dilation) {}

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w_, b_, stride_, dilation_); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".kernel", w_, true});
    out.push_back({prefix + ".bias", b_, true});
  }
  std::int64_t param_count() const { return w_.size() + b_.size(); }
  Tensor<T>& kernel() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  Tensor<T> w_, b_;
  int stride_, dilation_;
};

// Normalizes over all axes except the trailing channel axis. Running
// statistics use momentum 0.9 and the biased batch variance.
template <typename T>
class BatchNorm {
 public:
  explicit BatchNorm(std::int64_t channels)
      : gamma_(Shape{channels}, T(1)),
        beta_(zeros_param<T>(Shape{channels})),
        running_mean_(Shape{channels}, T(0)),
        running_var_(Shape{channels}, T(1)) {
    gamma_.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    std::vector<int> axes;
    for (int i = 0; i + 1 < x.rank(); ++i) axes.push_back(i);
    if (training) {
      auto mu = reduce_mean(x, axes);
      auto var = reduce_mean(square(sub(x, mu)), axes);
      auto y = add(mul(gamma_, div(sub(x, mu), sqrt(add_scalar(var, eps_)))), beta_);
      auto& rm = running_mean_.mutable_values();
      auto& rv = running_var_.mutable_values();
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = momentum_ * rm[c] + (T(1) - momentum_) * mu.values()[c];
        rv[c] = momentum_ * rv[c] + (T(1) - momentum_) * var.values()[c];
      }
      return y;
    }
    Tensor<T> inv_std(running_var_.shape());
    for (std::size_t c = 0; c < inv_std.values().size(); ++c) {
      inv_std.mutable_values()[c] = T(1) / std::sqrt(running_var_.values()[c] + eps_);
    }
    return add(mul(gamma_, mul(sub(x, running_mean_), inv_std)), beta_);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma_, true});
    out.push_back({prefix + ".beta", beta_, true});
    out.push_back({prefix + ".running_mean", running_mean_, false});
    out.push_back({prefix + ".running_var", running_var_, false});
  }
  std::int64_t param_count() const { return gamma_.size() + beta_.size(); }

 private:
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  T momentum_ = T(0.9);
  T eps_ = T(1e-5);
};

// Inverted dropout with a layer-owned deterministic stream.
template <typename T>
class Dropout {
 public:
  Dropout(double rate, Rng rng) : rate_(rate), rng_(rng) {}
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return dropout(x, rate_, rng_, training);
  }
  double rate() const { return rate_; }

 private:
  double rate_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Squeeze-and-excitation: channel gates from globally pooled statistics.
// ---------------------------------------------------------------------------

template <typename T>
class SeBlock {
 public:
  SeBlock(std::int64_t channels, Rng& rng, std::int64_t reduction = 8)
      : reduced_((channels + reduction - 1) / reduction),
        fc1_(channels, reduced_, rng),
        fc2_(reduced_, channels, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    auto pooled = x.rank() == 4 ? global_avg_pool2d(x) : global_avg_pool1d(x);
    auto gates = sigmoid(fc2_.forward(relu(fc1_.forward(pooled))));
    return scale_channels(x, gates);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }
  std::int64_t param_count() const { return fc1_.param_count() + fc2_.param_count(); }
  Tensor<T>& gate_weight1() { return fc1_.weight(); }
  Tensor<T>& gate_bias1() { return fc1_.bias(); }
  Tensor<T>& gate_weight2() { return fc2_.weight(); }
  Tensor<T>& gate_bias2() { return fc2_.bias(); }

 private:
  std::int64_t reduced_;
  Dense<T> fc1_, fc2_;
};

// ---------------------------------------------------------------------------
// ASPP: parallel dilated 3x3 conv-BN-relu branches, summed, then a 1x1
// projection. Rates larger than the feature map are clipped (deduplicated).
// ---------------------------------------------------------------------------

template <typename T>
class AsppBlock {
 public:
  AsppBlock(std::int64_t in_ch, std::int64_t out_ch, std::int64_t feat_h, std::int64_t feat_w,
            Rng& rng, std::vector<int> rates = {1, 6, 12, 18})
      : out_ch_(out_ch) {
    const int max_rate = static_cast<int>(std::max<std::int64_t>(1, std::min(feat_h, feat_w) - 1));
    for (int r : rates) {
      const int eff = std::min(r, max_rate);
      bool seen = false;
      for (int e : rates_) seen = seen || e == eff;
      if (!seen) rates_.push_back(eff);
    }
    for (int r : rates_) {
      branches_.push_back(std::make_unique<Branch>(in_ch, out_ch, r, rng));
    }
    proj_ = std::make_unique<Conv2d<T>>(out_ch, out_ch, 1, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> sum;
    for (auto& br : branches_) {
      auto y = relu(br->bn.forward(br->conv.forward(x), training));
      sum = sum.defined() ? add(sum, y) : y;
    }
    return proj_->forward(sum);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < branches_.size(); ++i) {
      const std::string p = prefix + ".branch" + std::to_string(rates_[i]);
      branches_[i]->conv.collect(p + ".conv", out);
      branches_[i]->bn.collect(p + ".bn", out);
    }
    proj_->collect(prefix + ".proj", out);
  }
  std::int64_t param_count() const {
    std::int64_t n = proj_->param_count();
    for (const auto& br : branches_) n += br->conv.param_count() + br->bn.param_count();
    return n;
  }
  const std::vector<int>& effective_rates() const { return rates_; }
  std::size_t branch_count() const { return branches_.size(); }
  Conv2d<T>& branch_conv(std::size_t i) { return branches_[i]->conv; }
  BatchNorm<T>& branch_bn(std::size_t i) { return branches_[i]->bn; }
  Conv2d<T>& projection() { return *proj_; }

 private:
  struct Branch {
    Branch(std::int64_t in_ch, std::int64_t out_ch, int rate, Rng& rng)
        : conv(in_ch, out_ch, 3, rng, 1, rate), bn(out_ch) {}
    Conv2d<T> conv;
    BatchNorm<T> bn;
  };
  std::int64_t out_ch_;
  std::vector<int> rates_;
  std::vector<std::unique_ptr<Branch>> branches_;
  std::unique_ptr<Conv2d<T>> proj_;
};

// ---------------------------------------------------------------------------
// Residual block: two conv-BN-relu stages, a 1x1 shortcut when the shape
// changes, and a trailing SE recalibration.
// ---------------------------------------------------------------------------

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(std::int64_t in_ch, std::int64_t filters, int stride, Rng& rng)
      : conv1_(in_ch, filters, 3, rng, stride),
        bn1_(filters),
        conv2_(filters, filters, 3, rng),
        bn2_(filters),
        se_(filters, rng) {
    if (stride != 1 || in_ch != filters) {
      shortcut_ = std::make_unique<Conv2d<T>>(in_ch, filters, 1, rng, stride);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    auto main = relu(bn2_.forward(conv2_.forward(relu(bn1_.forward(conv1_.forward(x), training))),
                                  training));
    auto sc = shortcut_ ? shortcut_->forward(x) : x;
    return se_.forward(add(main, sc));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv1_.collect(prefix + ".conv1", out);
    bn1_.collect(prefix + ".bn1", out);
    conv2_.collect(prefix + ".conv2", out);
    bn2_.collect(prefix + ".bn2", out);
    if (shortcut_) shortcut_->collect(prefix + ".shortcut", out);
    se_.collect(prefix + ".se", out);
  }
  std::int64_t param_count() const {
    std::int64_t n = conv1_.param_count() + bn1_.param_count() + conv2_.param_count() +
                     bn2_.param_count() + se_.param_count();
    if (shortcut_) n += shortcut_->param_count();
    return n;
  }
  Conv2d<T>& conv1() { return conv1_; }
  Conv2d<T>& conv2() { return conv2_; }
  Conv2d<T>* shortcut() { return shortcut_.get(); }
  SeBlock<T>& se() { return se_; }

 private:
  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm<T> bn2_;
  std::unique_ptr<Conv2d<T>> shortcut_;
  SeBlock<T> se_;
};

// Stem: conv-BN-relu-conv plus a 1x1 shortcut, stride 1 throughout.
template <typename T>
class StemBlock {
 public:
  StemBlock(std::int64_t in_ch, std::int64_t filters, Rng& rng)
      : conv1_(in_ch, filters, 3, rng),
        bn1_(filters),
        conv2_(filters, filters, 3, rng),
        shortcut_(in_ch, filters, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    auto main = conv2_.forward(relu(bn1_.forward(conv1_.forward(x), training)));
    return add(main, shortcut_.forward(x));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv1_.collect(prefix + ".conv1", out);
    bn1_.collect(prefix + ".bn1", out);
    conv2_.collect(prefix + ".conv2", out);
    shortcut_.collect(prefix + ".shortcut", out);
  }
  std::int64_t param_count() const {
    return conv1_.param_count() + bn1_.param_count() + conv2_.param_count() +
           shortcut_.param_count();
  }
  Conv2d<T>& conv1() { return conv1_; }
  Conv2d<T>& conv2() { return conv2_; }
  Conv2d<T>& shortcut() { return shortcut_; }

 private:
  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  Conv2d<T> conv2_;
  Conv2d<T> shortcut_;
};

// ---------------------------------------------------------------------------
// LSTM (gate order i, f, g, o; forget bias starts at 1).
// ---------------------------------------------------------------------------

template <typename T>
class Lstm {
 public:
  Lstm(std::int64_t in, std::int64_t units, Rng& rng)
      : units_(units),
        wx_(glorot_uniform<T>(Shape{in, 4 * units}, in, 4 * units, rng)),
        wh_(glorot_uniform<T>(Shape{units, 4 * units}, units, 4 * units, rng)),
        b_(zeros_param<T>(Shape{4 * units})) {
    auto& bv = b_.mutable_values();
    for (std::int64_t u = 0; u < units; ++u) bv[static_cast<std::size_t>(units + u)] = T(1);
  }

  struct State {
    Tensor<T> h, c;
  };

  State step(const Tensor<T>& x_t, const State& s) const {
    auto gates = add(add(matmul(x_t, wx_), matmul(s.h, wh_)), b_);
    auto i = sigmoid(slice_axis(gates, 1, 0, units_));
    auto f = sigmoid(slice_axis(gates, 1, units_, units_));
    auto g = tanh(slice_axis(gates, 1, 2 * units_, units_));
    auto o = sigmoid(slice_axis(gates, 1, 3 * units_, units_));
    State out;
    out.c = add(mul(f, s.c), mul(i, g));
    out.h = mul(o, tanh(out.c));
    return out;
  }

  // seq: (N, T, F) -> final hidden state (N, units)
  Tensor<T> forward(const Tensor<T>& seq) const {
    if (seq.rank() != 3) throw ShapeError("lstm: expected (N,T,F), got " + shape_str(seq.shape()));
    const std::int64_t n = seq.dim(0), steps = seq.dim(1), f = seq.dim(2);
    State s{Tensor<T>(Shape{n, units_}, T(0)), Tensor<T>(Shape{n, units_}, T(0))};
    for (std::int64_t t = 0; t < steps; ++t) {
      auto x_t = reshape(slice_axis(seq, 1, t, 1), Shape{n, f});
      s = step(x_t, s);
    }
    return s.h;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".wx", wx_, true});
    out.push_back({prefix + ".wh", wh_, true});
    out.push_back({prefix + ".b", b_, true});
  }
  std::int64_t param_count() const { return wx_.size() + wh_.size() + b_.size(); }
  std::int64_t units() const { return units_; }
  Tensor<T>& input_kernel() { return wx_; }
  Tensor<T>& recurrent_kernel() { return wh_; }
  Tensor<T>& bias() { return b_; }

 private:
  std::int64_t units_;
  Tensor<T> wx_, wh_, b_;
};

// Concatenation of the final forward and final backward hidden states.
template <typename T>
class BiLstm {
 public:
  BiLstm(std::int64_t in, std::int64_t units, Rng& rng) : fwd_(in, units, rng), bwd_(in, units, rng) {}

  Tensor<T> forward(const Tensor<T>& seq) const {
    auto hf = fwd_.forward(seq);
    auto hb = bwd_.forward(flip_axis(seq, 1));
    return concat<T>({hf, hb}, 1);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    fwd_.collect(prefix + ".fwd", out);
    bwd_.collect(prefix + ".bwd", out);
  }
  std::int64_t param_count() const { return fwd_.param_count() + bwd_.param_count(); }
  std::int64_t units() const { return fwd_.units(); }
  Lstm<T>& forward_cell() { return fwd_; }
  Lstm<T>& backward_cell() { return bwd_; }

 private:
  Lstm<T> fwd_, bwd_;
};

// ---------------------------------------------------------------------------
// Liquid time-constant cell. Fused semi-implicit step of
//   dh/dt = -[1/tau + g] h + g A,  g = sigmoid(W x + U h + b)
// with dt = 1:  h' = (h + g*A) / (1 + 1/tau + g),  tau = softplus(tau_raw).
// The update keeps ||h'||_inf <= max(||h||_inf, ||A||_inf).
// ---------------------------------------------------------------------------

template <typename T>
class LtcCell {
 public:
  // Initialized for slow dynamics: tau ~ 30 and a mostly closed gate give a
  // per-step retention near 0.9, so the final state aggregates the whole
  // sequence rather than its tail. Both are learnable.
  LtcCell(std::int64_t in, std::int64_t units, Rng& rng)
      : units_(units),
        w_(glorot_uniform<T>(Shape{in, units}, in, units, rng)),
        u_(glorot_uniform<T>(Shape{units, units}, units, units, rng)),
        b_(Shape{units}, T(-2)),
        tau_raw_(Shape{units}, T(30)),  // softplus(30) ~ 30
        a_(Shape{units}) {
    b_.set_requires_grad(true);
    tau_raw_.set_requires_grad(true);
    for (auto& v : a_.mutable_values()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    a_.set_requires_grad(true);
  }

  Tensor<T> step(const Tensor<T>& x_t, const Tensor<T>& h, T dt = T(1)) const {
    auto g = sigmoid(add(add(matmul(x_t, w_), matmul(h, u_)), b_));
    auto inv_tau = div(Tensor<T>::scalar(T(1)), softplus(tau_raw_));
    auto numer = add(h, mul_scalar(mul(g, a_), dt));
    auto denom = add_scalar(mul_scalar(add(g, inv_tau), dt), T(1));
    return div(numer, denom);
  }

  // seq: (N, T, F) -> final hidden state (N, units)
  Tensor<T> forward(const Tensor<T>& seq) const {
    if (seq.rank() != 3) throw ShapeError("ltc: expected (N,T,F), got " + shape_str(seq.shape()));
    const std::int64_t n = seq.dim(0), steps = seq.dim(1), f = seq.dim(2);
    Tensor<T> h(Shape{n, units_}, T(0));
    for (std::int64_t t = 0; t < steps; ++t) {
      auto x_t = reshape(slice_axis(seq, 1, t, 1), Shape{n, f});
      h = step(x_t, h);
    }
    return h;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w", w_, true});
    out.push_back({prefix + ".u", u_, true});
    out.push_back({prefix + ".b", b_, true});
    out.push_back({prefix + ".tau_raw", tau_raw_, true});
    out.push_back({prefix + ".a", a_, true});
  }
  std::int64_t param_count() const {
    return w_.size() + u_.size() + b_.size() + tau_raw_.size() + a_.size();
  }
  std::int64_t units() const { return units_; }
  Tensor<T>& input_kernel() { return w_; }
  Tensor<T>& recurrent_kernel() { return u_; }
  Tensor<T>& bias() { return b_; }
  Tensor<T>& tau_raw() { return tau_raw_; }
  Tensor<T>& leak_target() { return a_; }

 private:
  std::int64_t units_;
  Tensor<T> w_, u_, b_, tau_raw_, a_;
};

// ---------------------------------------------------------------------------
// KAN dense layer: per edge (i,j), phi_ij(x_i) = base_w_ij * silu(x_i) +
// sum_k c_ijk B_k(x_i) over order-3 B-splines on a uniform 5-interval grid
// spanning [-1,1]; y_j = sum_i phi_ij(x_i). Inputs outside the grid use the
// extrapolated boundary segment (saturating one interval out).
// ---------------------------------------------------------------------------

template <typename T>
class KanDense {
 public:
  KanDense(std::int64_t in, std::int64_t out, Rng& rng, int grid = 5, int order = 3, T lo = T(-1),
           T hi = T(1))
      : in_(in), out_(out), grid_(grid), order_(order), lo_(lo), hi_(hi),
        base_w_(glorot_uniform<T>(Shape{in, out}, in, out, rng)),
        coeffs_(Shape{in * (grid + order), out}) {
    for (auto& v : coeffs_.mutable_values()) v = static_cast<T>(rng.normal(0.0, 0.05));
    coeffs_.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_) {
      throw ShapeError("kan_dense: expected (N," + std::to_string(in_) + "), got " +
                       shape_str(x.shape()));
    }
    auto base = matmul(silu(x), base_w_);
    auto basis = spline_basis(x, grid_, order_, lo_, hi_);
    auto flat = reshape(basis, Shape{x.dim(0), in_ * (grid_ + order_)});
    return add(base, matmul(flat, coeffs_));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".base_w", base_w_, true});
    out.push_back({prefix + ".spline_coeffs", coeffs_, true});
  }
  // m*n*(1 + grid + order) and nothing else.
  std::int64_t param_count() const { return base_w_.size() + coeffs_.size(); }
  std::int64_t in_features() const { return in_; }
  std::int64_t out_features() const { return out_; }
  int grid() const { return grid_; }
  int order() const { return order_; }
  Tensor<T>& base_weight() { return base_w_; }
  Tensor<T>& spline_coeffs() { return coeffs_; }

 private:
  std::int64_t in_, out_;
  int grid_, order_;
  T lo_, hi_;
  Tensor<T> base_w_, coeffs_;
};

}  // namespace sleepnet::nn
