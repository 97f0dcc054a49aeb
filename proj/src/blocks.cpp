#include "yynet/blocks.hpp"

#include "yynet/errors.hpp"

namespace yynet {

const char* to_string(ResNetNorm v) { return v == ResNetNorm::kBoth ? "both" : "first"; }
const char* to_string(MBConvNorm v) { return v == MBConvNorm::kAll ? "all" : "project_only"; }
const char* to_string(StrideShortcut v) {
  switch (v) {
    case StrideShortcut::kProjection: return "projection";
    case StrideShortcut::kSubsample: return "subsample";
    case StrideShortcut::kNone: return "none";
  }
  return "?";
}
const char* to_string(SePlacement v) {
  return v == SePlacement::kAfterDepthwise ? "after_depthwise" : "after_project";
}

ResNetNorm parse_resnet_norm(const std::string& s) {
  if (s == "both") return ResNetNorm::kBoth;
  if (s == "first") return ResNetNorm::kFirst;
  throw ConfigError("unknown resnet_norm '" + s + "' (both|first)");
}
MBConvNorm parse_mbconv_norm(const std::string& s) {
  if (s == "all") return MBConvNorm::kAll;
  if (s == "project_only") return MBConvNorm::kProjectOnly;
  throw ConfigError("unknown mbconv_norm '" + s + "' (all|project_only)");
}
StrideShortcut parse_stride_shortcut(const std::string& s) {
  if (s == "projection") return StrideShortcut::kProjection;
  if (s == "subsample") return StrideShortcut::kSubsample;
  if (s == "none") return StrideShortcut::kNone;
  throw ConfigError("unknown stride_shortcut '" + s + "' (projection|subsample|none)");
}
SePlacement parse_se_placement(const std::string& s) {
  if (s == "after_depthwise") return SePlacement::kAfterDepthwise;
  if (s == "after_project") return SePlacement::kAfterProject;
  throw ConfigError("unknown se_placement '" + s + "' (after_depthwise|after_project)");
}

namespace {
std::string join(const std::string& prefix, const char* leaf) {
  return prefix.empty() ? std::string(leaf) : prefix + "." + leaf;
}
void check_stride(std::size_t stride) {
  if (stride != 1 && stride != 2) throw ConfigError("stride must be 1 or 2, got " + std::to_string(stride));
}
}  // namespace

// ---------------------------------------------------------------------------
// ResNet sub-block

template <class Real>
ResNetSubBlock<Real>::ResNetSubBlock(std::size_t in_channels, std::size_t out_channels,
                                     std::size_t stride_, const BlockInternals& cfg)
    : stride(stride_) {
  check_stride(stride);
  const bool both = cfg.resnet_norm == ResNetNorm::kBoth;
  conv1 = nn::Conv2d<Real>(in_channels, out_channels, 3, {stride, 1, 1}, false);
  bn1 = nn::BatchNorm2d<Real>(out_channels);
  conv2 = nn::Conv2d<Real>(out_channels, out_channels, 3, {1, 1, 1}, cfg.conv_bias && !both);
  if (both) bn2.emplace(out_channels);

  const bool widen = in_channels != out_channels;
  if (widen || (stride != 1 && cfg.stride_shortcut == StrideShortcut::kProjection)) {
    proj.emplace(in_channels, out_channels, 1, nn::ConvOptions{stride, 0, 1}, false);
    proj_bn.emplace(out_channels);
  } else if (stride != 1) {
    subsample_shortcut = cfg.stride_shortcut == StrideShortcut::kSubsample;
    has_shortcut = subsample_shortcut;
  }
}

template <class Real>
Tensor<Real> ResNetSubBlock<Real>::forward(const Tensor<Real>& x, const ForwardContext& ctx) {
  if (x.shape().rank() != 4 || x.dim(1) != in_channels()) {
    throw ShapeError("resnet sub-block expects " + std::to_string(in_channels()) +
                     " channels, got " + x.shape().to_string());
  }
  auto h = nn::gelu(bn1.forward(conv1.forward(x), ctx.training));
  auto b = conv2.forward(h);
  if (bn2) b = bn2->forward(b, ctx.training);
  auto out = nn::gelu(b);
  if (!has_shortcut) return out;
  if (proj) return add(out, proj_bn->forward(proj->forward(x), ctx.training));
  if (subsample_shortcut) return add(out, nn::subsample2d(x, stride));
  return add(out, x);
}

template <class Real>
void ResNetSubBlock<Real>::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
  if (proj) proj->init(rng);
}

template <class Real>
void ResNetSubBlock<Real>::collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const {
  conv1.collect_parameters(join(prefix, "conv1"), out);
  bn1.collect_parameters(join(prefix, "bn1"), out);
  conv2.collect_parameters(join(prefix, "conv2"), out);
  if (bn2) bn2->collect_parameters(join(prefix, "bn2"), out);
  if (proj) {
    proj->collect_parameters(join(prefix, "proj"), out);
    proj_bn->collect_parameters(join(prefix, "proj_bn"), out);
  }
}

template <class Real>
void ResNetSubBlock<Real>::collect_buffers(const std::string& prefix, NamedTensors<Real>& out) const {
  bn1.collect_buffers(join(prefix, "bn1"), out);
  if (bn2) bn2->collect_buffers(join(prefix, "bn2"), out);
  if (proj_bn) proj_bn->collect_buffers(join(prefix, "proj_bn"), out);
}

// ---------------------------------------------------------------------------
// MBConv sub-block

template <class Real>
MBConvSubBlock<Real>::MBConvSubBlock(std::size_t in_channels, std::size_t out_channels,
                                     std::size_t stride_, const BlockInternals& cfg)
    : se_placement(cfg.se_placement), stride(stride_) {
  check_stride(stride);
  if (cfg.expansion_factor == 0) throw ConfigError("expansion_factor must be positive");
  if (cfg.depthwise_kernel % 2 == 0) throw ConfigError("depthwise_kernel must be odd");
  const std::size_t e = in_channels * cfg.expansion_factor;
  const bool all = cfg.mbconv_norm == MBConvNorm::kAll;
  expand = nn::Conv2d<Real>(in_channels, e, 1, {1, 0, 1}, cfg.conv_bias && !all);
  depthwise = nn::Conv2d<Real>(e, e, cfg.depthwise_kernel, {stride, cfg.depthwise_kernel / 2, e},
                               cfg.conv_bias && !all);
  project = nn::Conv2d<Real>(e, out_channels, 1, {1, 0, 1}, false);
  if (all) {
    expand_bn.emplace(e);
    depthwise_bn.emplace(e);
  }
  project_bn = nn::BatchNorm2d<Real>(out_channels);
  if (cfg.se_ratio > 0) {
    const std::size_t c = cfg.se_placement == SePlacement::kAfterDepthwise ? e : out_channels;
    se.emplace(c, cfg.se_ratio, cfg.se_bias, cfg.se_activation, cfg.se_gate);
  }
}

template <class Real>
Tensor<Real> MBConvSubBlock<Real>::forward(const Tensor<Real>& x, const ForwardContext& ctx) {
  if (x.shape().rank() != 4 || x.dim(1) != in_channels()) {
    throw ShapeError("mbconv sub-block expects " + std::to_string(in_channels()) +
                     " channels, got " + x.shape().to_string());
  }
  auto h = expand.forward(x);
  if (expand_bn) h = expand_bn->forward(h, ctx.training);
  h = nn::gelu(h);
  h = depthwise.forward(h);
  if (depthwise_bn) h = depthwise_bn->forward(h, ctx.training);
  h = nn::gelu(h);
  if (se && se_placement == SePlacement::kAfterDepthwise) h = se->forward(h);
  h = project_bn.forward(project.forward(h), ctx.training);
  if (se && se_placement == SePlacement::kAfterProject) h = se->forward(h);
  return residual() ? add(h, x) : h;
}

template <class Real>
void MBConvSubBlock<Real>::init(Rng& rng) {
  expand.init(rng);
  depthwise.init(rng);
  if (se) se->init(rng);
  project.init(rng);
}

template <class Real>
void MBConvSubBlock<Real>::collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const {
  expand.collect_parameters(join(prefix, "expand"), out);
  if (expand_bn) expand_bn->collect_parameters(join(prefix, "expand_bn"), out);
  depthwise.collect_parameters(join(prefix, "depthwise"), out);
  if (depthwise_bn) depthwise_bn->collect_parameters(join(prefix, "depthwise_bn"), out);
  if (se) se->collect_parameters(join(prefix, "se"), out);
  project.collect_parameters(join(prefix, "project"), out);
  project_bn.collect_parameters(join(prefix, "project_bn"), out);
}

template <class Real>
void MBConvSubBlock<Real>::collect_buffers(const std::string& prefix, NamedTensors<Real>& out) const {
  if (expand_bn) expand_bn->collect_buffers(join(prefix, "expand_bn"), out);
  if (depthwise_bn) depthwise_bn->collect_buffers(join(prefix, "depthwise_bn"), out);
  project_bn.collect_buffers(join(prefix, "project_bn"), out);
}

// ---------------------------------------------------------------------------
// Branch layers

const char* to_string(BranchKind k) {
  switch (k) {
    case BranchKind::kYin: return "yin";
    case BranchKind::kYang: return "yang";
    case BranchKind::kSinglePath: return "sp";
  }
  return "?";
}

std::optional<std::size_t> strided_mbconv(BranchKind kind, std::size_t mbconvs, bool extra_stride) {
  switch (kind) {
    case BranchKind::kYin:
      if (mbconvs == 0) break;
      return mbconvs - 1;
    case BranchKind::kYang:
      if (mbconvs == 0) break;
      return 0;
    case BranchKind::kSinglePath:
      if (extra_stride && mbconvs > 0) return 0;
      return std::nullopt;
  }
  throw ConfigError(std::string(to_string(kind)) + " layer needs at least one MBConv");
}

std::size_t resnet_stride(BranchKind kind) { return kind == BranchKind::kSinglePath ? 2 : 1; }

template <class Real>
BranchLayer<Real>::BranchLayer(BranchKind kind_, std::size_t in_channels, std::size_t resnet_out,
                               std::size_t channels_per_mbconv, std::size_t num_mbconvs,
                               bool extra_stride, const BlockInternals& cfg)
    : kind(kind_), resnet(in_channels, resnet_out, resnet_stride(kind_), cfg) {
  const auto strided = strided_mbconv(kind, num_mbconvs, extra_stride);
  std::size_t c = resnet_out;
  for (std::size_t j = 0; j < num_mbconvs; ++j) {
    const std::size_t s = strided && *strided == j ? 2 : 1;
    mbconvs.emplace_back(c, c + channels_per_mbconv, s, cfg);
    c += channels_per_mbconv;
  }
}

template <class Real>
std::size_t BranchLayer<Real>::out_channels() const {
  return mbconvs.empty() ? resnet.out_channels() : mbconvs.back().out_channels();
}

template <class Real>
std::size_t BranchLayer<Real>::stride2_count() const {
  std::size_t n = resnet.stride == 2 ? 1 : 0;
  for (const auto& m : mbconvs) n += m.stride == 2 ? 1 : 0;
  return n;
}

template <class Real>
Tensor<Real> BranchLayer<Real>::forward(const Tensor<Real>& x, const ForwardContext& ctx) {
  auto h = resnet.forward(x, ctx);
  for (auto& m : mbconvs) h = m.forward(h, ctx);
  return h;
}

template <class Real>
void BranchLayer<Real>::init(Rng& rng) {
  resnet.init(rng);
  for (auto& m : mbconvs) m.init(rng);
}

template <class Real>
void BranchLayer<Real>::collect_parameters(const std::string& prefix, NamedTensors<Real>& out) const {
  resnet.collect_parameters(join(prefix, "resnet"), out);
  for (std::size_t j = 0; j < mbconvs.size(); ++j) {
    mbconvs[j].collect_parameters(join(prefix, ("mbconv" + std::to_string(j)).c_str()), out);
  }
}

template <class Real>
void BranchLayer<Real>::collect_buffers(const std::string& prefix, NamedTensors<Real>& out) const {
  resnet.collect_buffers(join(prefix, "resnet"), out);
  for (std::size_t j = 0; j < mbconvs.size(); ++j) {
    mbconvs[j].collect_buffers(join(prefix, ("mbconv" + std::to_string(j)).c_str()), out);
  }
}

// ---------------------------------------------------------------------------
// Fusion

const char* to_string(FusionFormula f) {
  switch (f) {
    case FusionFormula::kAMul1MI: return "A_MUL_1MI";
    case FusionFormula::kAMulIPlusAPlusI: return "A_MUL_I_PLUS_A_PLUS_I";
    case FusionFormula::kAMul1MIPlusAMinusI: return "A_MUL_1MI_PLUS_A_MINUS_I";
    case FusionFormula::kAMulI: return "A_MUL_I";
    case FusionFormula::kAMul1MIPlusAPlusI: return "A_MUL_1MI_PLUS_A_PLUS_I";
    case FusionFormula::kAPlusI: return "A_PLUS_I";
  }
  return "?";
}

const char* formula_expression(FusionFormula f) {
  switch (f) {
    case FusionFormula::kAMul1MI: return "A*(1-I)";
    case FusionFormula::kAMulIPlusAPlusI: return "A*I + A+I";
    case FusionFormula::kAMul1MIPlusAMinusI: return "A*(1-I) + A-I";
    case FusionFormula::kAMulI: return "A*I";
    case FusionFormula::kAMul1MIPlusAPlusI: return "A*(1-I) + A+I";
    case FusionFormula::kAPlusI: return "A+I";
  }
  return "?";
}

FusionFormula parse_fusion(const std::string& s) {
  for (auto f : kAllFusionFormulas) {
    if (s == to_string(f) || s == formula_expression(f)) return f;
  }
  throw ConfigError("unknown fusion formula '" + s + "'");
}

template <class Real>
Tensor<Real> fuse(const Tensor<Real>& a, const Tensor<Real>& i, FusionFormula f) {
  if (!(a.shape() == i.shape())) {
    throw ShapeError("fusion operands differ: " + a.shape().to_string() + " vs " + i.shape().to_string());
  }
  switch (f) {
    case FusionFormula::kAMul1MI: return mul(a, one_minus(i));
    case FusionFormula::kAMulIPlusAPlusI: return add(mul(a, i), add(a, i));
    case FusionFormula::kAMul1MIPlusAMinusI: return add(mul(a, one_minus(i)), sub(a, i));
    case FusionFormula::kAMulI: return mul(a, i);
    case FusionFormula::kAMul1MIPlusAPlusI: return add(mul(a, one_minus(i)), add(a, i));
    case FusionFormula::kAPlusI: return add(a, i);
  }
  throw ConfigError("bad fusion formula");
}

const char* to_string(YinMode m) { return m == YinMode::kFirstChannel ? "first_channel" : "mean"; }

YinMode parse_yin_mode(const std::string& s) {
  if (s == "first_channel") return YinMode::kFirstChannel;
  if (s == "mean") return YinMode::kMean;
  throw ConfigError("unknown yin_mode '" + s + "' (first_channel|mean)");
}

template <class Real>
Tensor<Real> yin_input(const Tensor<Real>& x, YinMode mode) {
  if (x.shape().rank() != 4 || x.dim(1) != 3) {
    throw ShapeError("yin input expects (N,3,H,W), got " + x.shape().to_string());
  }
  return mode == YinMode::kFirstChannel ? nn::select_channel(x, 0) : nn::channel_mean(x);
}

#define YYNET_INSTANTIATE(Real)                                                       \
  template struct ResNetSubBlock<Real>;                                               \
  template struct MBConvSubBlock<Real>;                                               \
  template struct BranchLayer<Real>;                                                  \
  template Tensor<Real> fuse<Real>(const Tensor<Real>&, const Tensor<Real>&, FusionFormula); \
  template Tensor<Real> yin_input<Real>(const Tensor<Real>&, YinMode);

YYNET_INSTANTIATE(float)
YYNET_INSTANTIATE(double)
#undef YYNET_INSTANTIATE

}  // namespace yynet
