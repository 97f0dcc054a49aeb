#pragma once

// Parameterized layers. Parameters are public Tensor handles so that
// optimizers, checkpoints and tests can address them directly.

#include <string>
#include <vector>

#include "yynet/nn/functional.hpp"
#include "yynet/tensor.hpp"

namespace yynet::nn {

template <class Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

template <class Real>
using NamedTensors = std::vector<NamedTensor<Real>>;

/// Per-call state shared by every layer of one forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required only when training with dropout
};

enum class Activation { kGelu, kRelu, kSigmoid, kHardSigmoid };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

template <class Real>
Tensor<Real> activate(Activation a, const Tensor<Real>& x);

/// Kaiming fan-in normal: N(0, 2 / fan_in).
template <class Real>
void kaiming_normal(Tensor<Real>& w, std::size_t fan_in, Rng& rng);

template <class Real>
struct Conv2d {
  Tensor<Real> weight;  // (Cout, Cin/groups, k, k)
  Tensor<Real> bias;    // undefined when absent
  ConvOptions options;

  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, ConvOptions opt,
         bool with_bias);

  std::size_t in_channels() const { return weight.dim(1) * options.groups; }
  std::size_t out_channels() const { return weight.dim(0); }
  Tensor<Real> forward(const Tensor<Real>& x) const;
  void init(Rng& rng);
  void collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const;
};

template <class Real>
struct BatchNorm2d {
  Tensor<Real> gamma, beta;
  Tensor<Real> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor<Real> forward(const Tensor<Real>& x, bool training);
  void collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<Real>& out) const;
};

template <class Real>
struct Linear {
  Tensor<Real> weight;  // (Out, In)
  Tensor<Real> bias;

  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, bool with_bias);

  Tensor<Real> forward(const Tensor<Real>& x) const;
  void init(Rng& rng);
  void collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const;
};

template <class Real>
struct SqueezeExcite {
  Linear<Real> reduce;
  Linear<Real> expand;
  Activation inner = Activation::kGelu;
  Activation gate = Activation::kSigmoid;

  SqueezeExcite() = default;
  /// Throws ConfigError when channels / ratio == 0.
  SqueezeExcite(std::size_t channels, std::size_t ratio, bool with_bias, Activation inner_act,
                Activation gate_act);

  std::size_t squeezed() const { return reduce.weight.dim(0); }
  Tensor<Real> forward(const Tensor<Real>& x) const;
  void init(Rng& rng);
  void collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const;
};

struct Dropout {
  double rate = 0.0;

  Dropout() = default;
  explicit Dropout(double p);

  template <class Real>
  Tensor<Real> forward(const Tensor<Real>& x, const ForwardContext& ctx) const;
};

}  // namespace yynet::nn
