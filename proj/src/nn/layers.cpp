#include "yynet/nn/layers.hpp"

#include <cmath>

#include "yynet/errors.hpp"

namespace yynet::nn {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kGelu: return "gelu";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kHardSigmoid: return "hard_sigmoid";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "hard_sigmoid") return Activation::kHardSigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

template <class Real>
Tensor<Real> activate(Activation a, const Tensor<Real>& x) {
  switch (a) {
    case Activation::kGelu: return gelu(x);
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kHardSigmoid: return hard_sigmoid(x);
  }
  throw ConfigError("bad activation");
}

template <class Real>
void kaiming_normal(Tensor<Real>& w, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.mutable_data()) v = static_cast<Real>(dist(rng));
}

namespace {
template <class Real>
void push(NamedTensors<Real>& out, const std::string& prefix, const char* leaf, const Tensor<Real>& t) {
  if (t.defined()) out.push_back({prefix.empty() ? std::string(leaf) : prefix + "." + leaf, t});
}
}  // namespace

// ---------------------------------------------------------------------------

template <class Real>
Conv2d<Real>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                     ConvOptions opt, bool with_bias)
    : options(opt) {
  if (opt.groups == 0 || in_channels % opt.groups != 0 || out_channels % opt.groups != 0) {
    throw ConfigError("conv channels " + std::to_string(in_channels) + "->" +
                      std::to_string(out_channels) + " not divisible by groups " +
                      std::to_string(opt.groups));
  }
  weight = Tensor<Real>(Shape{out_channels, in_channels / opt.groups, kernel, kernel});
  if (with_bias) bias = Tensor<Real>(Shape{out_channels});
}

template <class Real>
Tensor<Real> Conv2d<Real>::forward(const Tensor<Real>& x) const {
  return conv2d(x, weight, bias, options);
}

template <class Real>
void Conv2d<Real>::init(Rng& rng) {
  kaiming_normal(weight, weight.dim(1) * weight.dim(2) * weight.dim(3), rng);
  if (bias.defined()) std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), Real(0));
}

template <class Real>
void Conv2d<Real>::collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const {
  push(out, prefix, "weight", weight);
  push(out, prefix, "bias", bias);
}

// ---------------------------------------------------------------------------

template <class Real>
BatchNorm2d<Real>::BatchNorm2d(std::size_t channels)
    : gamma(Tensor<Real>::full(Shape{channels}, Real(1))),
      beta(Shape{channels}),
      running_mean(Shape{channels}),
      running_var(Tensor<Real>::full(Shape{channels}, Real(1))) {}

template <class Real>
Tensor<Real> BatchNorm2d<Real>::forward(const Tensor<Real>& x, bool training) {
  return batch_norm2d(x, gamma, beta, running_mean, running_var,
                      BatchNormOptions{training, momentum, eps});
}

template <class Real>
void BatchNorm2d<Real>::collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const {
  push(out, prefix, "gamma", gamma);
  push(out, prefix, "beta", beta);
}

template <class Real>
void BatchNorm2d<Real>::collect_buffers(const std::string& prefix, NamedTensors<Real>& out) const {
  push(out, prefix, "running_mean", running_mean);
  push(out, prefix, "running_var", running_var);
}

// ---------------------------------------------------------------------------

template <class Real>
Linear<Real>::Linear(std::size_t in_features, std::size_t out_features, bool with_bias)
    : weight(Shape{out_features, in_features}) {
  if (with_bias) bias = Tensor<Real>(Shape{out_features});
}

template <class Real>
Tensor<Real> Linear<Real>::forward(const Tensor<Real>& x) const {
  return linear(x, weight, bias);
}

template <class Real>
void Linear<Real>::init(Rng& rng) {
  kaiming_normal(weight, weight.dim(1), rng);
  if (bias.defined()) std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), Real(0));
}

template <class Real>
void Linear<Real>::collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const {
  push(out, prefix, "weight", weight);
  push(out, prefix, "bias", bias);
}

// ---------------------------------------------------------------------------

template <class Real>
SqueezeExcite<Real>::SqueezeExcite(std::size_t channels, std::size_t ratio, bool with_bias,
                                   Activation inner_act, Activation gate_act)
    : inner(inner_act), gate(gate_act) {
  if (ratio == 0 || channels / ratio == 0) {
    throw ConfigError("squeeze-excite: " + std::to_string(channels) + " channels with ratio " +
                      std::to_string(ratio) + " leaves no squeezed width");
  }
  const std::size_t s = channels / ratio;
  reduce = Linear<Real>(channels, s, with_bias);
  expand = Linear<Real>(s, channels, with_bias);
}

template <class Real>
Tensor<Real> SqueezeExcite<Real>::forward(const Tensor<Real>& x) const {
  if (x.shape().rank() != 4 || x.dim(1) != reduce.weight.dim(1)) {
    throw ShapeError("squeeze-excite expects " + std::to_string(reduce.weight.dim(1)) +
                     " channels, got " + x.shape().to_string());
  }
  auto pooled = global_avg_pool(x);
  auto g = activate(gate, expand.forward(activate(inner, reduce.forward(pooled))));
  return channel_scale(x, g);
}

template <class Real>
void SqueezeExcite<Real>::init(Rng& rng) {
  reduce.init(rng);
  expand.init(rng);
}

template <class Real>
void SqueezeExcite<Real>::collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const {
  reduce.collect_parameters(prefix + ".reduce", out);
  expand.collect_parameters(prefix + ".expand", out);
}

// ---------------------------------------------------------------------------

Dropout::Dropout(double p) : rate(p) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
}

template <class Real>
Tensor<Real> Dropout::forward(const Tensor<Real>& x, const ForwardContext& ctx) const {
  if (!ctx.training || rate == 0.0) return x;
  if (!ctx.rng) throw StateError("dropout in training mode needs an rng");
  return dropout(x, rate, true, *ctx.rng);
}

#define YYNET_INSTANTIATE(Real)                                                   \
  template Tensor<Real> activate<Real>(Activation, const Tensor<Real>&);          \
  template void kaiming_normal<Real>(Tensor<Real>&, std::size_t, Rng&);           \
  template struct Conv2d<Real>;                                                   \
  template struct BatchNorm2d<Real>;                                              \
  template struct Linear<Real>;                                                   \
  template struct SqueezeExcite<Real>;                                            \
  template Tensor<Real> Dropout::forward<Real>(const Tensor<Real>&, const ForwardContext&) const;

YYNET_INSTANTIATE(float)
YYNET_INSTANTIATE(double)
#undef YYNET_INSTANTIATE

}  // namespace yynet::nn
