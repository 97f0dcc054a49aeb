#pragma once

// Composite sub-blocks of the network and the parameter-free fusion gate.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "yynet/nn/layers.hpp"

namespace yynet {

using nn::Activation;
using nn::ForwardContext;
using nn::NamedTensors;

/// Which BatchNorms a ResNet sub-block carries.
enum class ResNetNorm { kBoth, kFirst };
/// Which BatchNorms an MBConv sub-block carries.
enum class MBConvNorm { kAll, kProjectOnly };
/// Shortcut of a ResNet sub-block whose stride is 2 but whose width is unchanged.
/// Channel changes always use a 1x1 conv + BN projection.
enum class StrideShortcut { kProjection, kSubsample, kNone };
/// Where squeeze-excite sits inside an MBConv.
enum class SePlacement { kAfterDepthwise, kAfterProject };

/// Everything about the sub-block internals that the architecture description
/// leaves open. Defaults are the textbook block design; see
/// reconciled_internals() in model.hpp for the setting the presets use.
struct BlockInternals {
  std::size_t expansion_factor = 4;
  std::size_t se_ratio = 4;  // 0 disables squeeze-excite
  bool se_bias = true;
  bool conv_bias = false;  // only for convs not followed by BatchNorm
  bool head_bias = true;
  ResNetNorm resnet_norm = ResNetNorm::kBoth;
  MBConvNorm mbconv_norm = MBConvNorm::kAll;
  StrideShortcut stride_shortcut = StrideShortcut::kProjection;
  SePlacement se_placement = SePlacement::kAfterDepthwise;
  Activation se_activation = Activation::kGelu;
  Activation se_gate = Activation::kSigmoid;
  std::size_t depthwise_kernel = 3;

  friend bool operator==(const BlockInternals&, const BlockInternals&) = default;
};

const char* to_string(ResNetNorm v);
const char* to_string(MBConvNorm v);
const char* to_string(StrideShortcut v);
const char* to_string(SePlacement v);
ResNetNorm parse_resnet_norm(const std::string& s);
MBConvNorm parse_mbconv_norm(const std::string& s);
StrideShortcut parse_stride_shortcut(const std::string& s);
SePlacement parse_se_placement(const std::string& s);

/// conv1(3x3, stride) -> bn1 -> gelu -> conv2(3x3) [-> bn2] -> gelu, plus shortcut.
template <class Real>
struct ResNetSubBlock {
  nn::Conv2d<Real> conv1, conv2;
  nn::BatchNorm2d<Real> bn1;
  std::optional<nn::BatchNorm2d<Real>> bn2;
  std::optional<nn::Conv2d<Real>> proj;
  std::optional<nn::BatchNorm2d<Real>> proj_bn;
  std::size_t stride = 1;
  bool subsample_shortcut = false;  // parameter-free strided identity
  bool has_shortcut = true;

  ResNetSubBlock() = default;
  ResNetSubBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                 const BlockInternals& cfg);

  std::size_t in_channels() const { return conv1.in_channels(); }
  std::size_t out_channels() const { return conv1.out_channels(); }
  Tensor<Real> forward(const Tensor<Real>& x, const ForwardContext& ctx);
  void init(Rng& rng);
  void collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<Real>& out) const;
};

/// expand(1x1) -> gelu -> depthwise(kxk, stride) -> gelu -> SE -> project(1x1) -> bn,
/// with a residual iff stride == 1 and widths agree.
template <class Real>
struct MBConvSubBlock {
  nn::Conv2d<Real> expand, depthwise, project;
  std::optional<nn::BatchNorm2d<Real>> expand_bn, depthwise_bn;
  nn::BatchNorm2d<Real> project_bn;
  std::optional<nn::SqueezeExcite<Real>> se;
  SePlacement se_placement = SePlacement::kAfterDepthwise;
  std::size_t stride = 1;

  MBConvSubBlock() = default;
  MBConvSubBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                 const BlockInternals& cfg);

  std::size_t in_channels() const { return expand.in_channels(); }
  std::size_t out_channels() const { return project.out_channels(); }
  std::size_t expanded_channels() const { return expand.out_channels(); }
  bool residual() const { return stride == 1 && in_channels() == out_channels(); }
  Tensor<Real> forward(const Tensor<Real>& x, const ForwardContext& ctx);
  void init(Rng& rng);
  void collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<Real>& out) const;
};

enum class BranchKind { kYin, kYang, kSinglePath };
const char* to_string(BranchKind k);

/// Index of the MBConv that strides in a layer of the given kind, if any.
/// Yin strides its last MBConv, Yang its first; SinglePath strides the ResNet
/// sub-block and, with extra_stride, also its first MBConv.
std::optional<std::size_t> strided_mbconv(BranchKind kind, std::size_t mbconvs, bool extra_stride);
std::size_t resnet_stride(BranchKind kind);

template <class Real>
struct BranchLayer {
  BranchKind kind = BranchKind::kYin;
  ResNetSubBlock<Real> resnet;
  std::vector<MBConvSubBlock<Real>> mbconvs;

  BranchLayer() = default;
  /// Widths: the ResNet maps in -> resnet_out; MBConv j maps to
  /// resnet_out + (j+1)*channels_per_mbconv.
  BranchLayer(BranchKind kind, std::size_t in_channels, std::size_t resnet_out,
              std::size_t channels_per_mbconv, std::size_t num_mbconvs, bool extra_stride,
              const BlockInternals& cfg);

  std::size_t out_channels() const;
  /// Number of stride-2 applications inside this layer.
  std::size_t stride2_count() const;
  Tensor<Real> forward(const Tensor<Real>& x, const ForwardContext& ctx);
  void init(Rng& rng);
  void collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<Real>& out) const;
};

// ---------------------------------------------------------------------------
// Fusion gate

enum class FusionFormula {
  kAMul1MI,            // A*(1-I)
  kAMulIPlusAPlusI,    // A*I + A+I
  kAMul1MIPlusAMinusI, // A*(1-I) + A-I
  kAMulI,              // A*I
  kAMul1MIPlusAPlusI,  // A*(1-I) + A+I
  kAPlusI,             // A+I
};

inline constexpr std::array<FusionFormula, 6> kAllFusionFormulas = {
    FusionFormula::kAMul1MI,           FusionFormula::kAMulIPlusAPlusI,
    FusionFormula::kAMul1MIPlusAMinusI, FusionFormula::kAMulI,
    FusionFormula::kAMul1MIPlusAPlusI,  FusionFormula::kAPlusI};

/// Identifier such as "A_PLUS_I".
const char* to_string(FusionFormula f);
/// Readable form such as "A*(1-I) + A+I".
const char* formula_expression(FusionFormula f);
/// Accepts the identifier or the readable form.
FusionFormula parse_fusion(const std::string& s);

/// A is the Yang (color) embedding, I the Yin (form) embedding.
template <class Real>
Tensor<Real> fuse(const Tensor<Real>& a, const Tensor<Real>& i, FusionFormula f);

enum class YinMode { kFirstChannel, kMean };
const char* to_string(YinMode m);
YinMode parse_yin_mode(const std::string& s);

/// (N,3,H,W) -> (N,1,H,W) input of the Yin branch.
template <class Real>
Tensor<Real> yin_input(const Tensor<Real>& x, YinMode mode);

}  // namespace yynet
