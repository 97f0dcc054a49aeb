#pragma once

// Differentiable neural-network operations over NCHW / (N,F) tensors.

#include <cstdint>
#include <random>
#include <span>

#include "yynet/tensor.hpp"

namespace yynet {

using Rng = std::mt19937_64;

namespace nn {

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Output spatial extent of a convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding);

/// Cross-correlation of x (N,Cin,H,W) with weight (Cout, Cin/groups, kH, kW).
/// bias may be undefined.
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    const ConvOptions& opt);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization. In training mode the batch statistics are
/// used and running_mean / running_var (updated in place, unbiased variance)
/// follow running = (1 - momentum) * running + momentum * batch.
template <class Real>
Tensor<Real> batch_norm2d(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                          Tensor<Real>& running_mean, Tensor<Real>& running_var,
                          const BatchNormOptions& opt);

/// x (N,In) * weight(Out,In)^T + bias(Out).
template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

/// Exact (erf) GELU.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x);
template <class Real>
Tensor<Real> relu(const Tensor<Real>& x);
template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x);
/// relu6(x + 3) / 6
template <class Real>
Tensor<Real> hard_sigmoid(const Tensor<Real>& x);

/// (N,C,H,W) -> (N,C) spatial mean.
template <class Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x);

/// x (N,C,H,W) scaled by s (N,C) per channel.
template <class Real>
Tensor<Real> channel_scale(const Tensor<Real>& x, const Tensor<Real>& s);

/// Inverted dropout. Identity (same handle) when !training or p == 0.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, bool training, Rng& rng);

/// Mean over the batch of -log softmax(logits)[label].
template <class Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, std::span<const std::int32_t> labels);

/// x[:, :, ::stride, ::stride], the parameter-free strided identity.
template <class Real>
Tensor<Real> subsample2d(const Tensor<Real>& x, std::size_t stride);

/// (N,C,H,W) -> (N,1,H,W) holding channel c.
template <class Real>
Tensor<Real> select_channel(const Tensor<Real>& x, std::size_t c);
/// (N,C,H,W) -> (N,1,H,W) per-pixel channel mean.
template <class Real>
Tensor<Real> channel_mean(const Tensor<Real>& x);

}  // namespace nn
}  // namespace yynet
