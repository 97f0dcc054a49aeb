#include "yynet/model.hpp"

#include "yynet/errors.hpp"

namespace yynet {

namespace {

struct LayerSpec {
  BranchKind kind;
  std::size_t in_channels;
  std::size_t resnet_out;
  std::size_t mbconvs;
};

// Widths: the first Yin/Yang layer maps 1 (Yin) or 3 (Yang) input channels to
// yy_start_channels, the first single-path layer maps the fused width to
// sp_start_channels, and any later layer keeps its input width in the ResNet
// sub-block. Each MBConv adds channels_per_mbconv.
std::vector<LayerSpec> layer_specs(const ModelConfig& c, BranchKind kind) {
  std::vector<LayerSpec> specs;
  const bool sp = kind == BranchKind::kSinglePath;
  const std::size_t layers = sp ? c.sp_layers : c.yy_layers;
  const std::size_t mb = sp ? c.sp_mbconv_per_layer : c.yy_mbconv_per_layer;
  std::size_t in = kind == BranchKind::kYin ? 1 : 3;
  if (sp) in = c.yy_start_channels + c.yy_layers * c.yy_mbconv_per_layer * c.channels_per_mbconv;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t out = l == 0 ? (sp ? c.sp_start_channels : c.yy_start_channels) : in;
    specs.push_back({kind, in, out, mb});
    in = out + mb * c.channels_per_mbconv;
  }
  return specs;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string(field) + " must be positive");
  };
  positive(yy_start_channels, "yy_start_channels");
  positive(sp_start_channels, "sp_start_channels");
  positive(yy_layers, "yy_layers");
  positive(sp_layers, "sp_layers");
  positive(yy_mbconv_per_layer, "yy_mbconv_per_layer");
  positive(sp_mbconv_per_layer, "sp_mbconv_per_layer");
  positive(pre_classifier_neurons, "pre_classifier_neurons");
  positive(num_classes, "num_classes");
  positive(input_resolution, "input_resolution");
  positive(internals.expansion_factor, "expansion_factor");
  positive(internals.depthwise_kernel, "depthwise_kernel");
  if (internals.depthwise_kernel % 2 == 0) throw ConfigError("depthwise_kernel must be odd");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  const std::size_t strides = stride2_count();
  if (strides >= 31 || input_resolution % (std::size_t{1} << strides) != 0) {
    throw ConfigError("input_resolution " + std::to_string(input_resolution) +
                      " is not divisible by 2^" + std::to_string(strides));
  }
}

std::size_t ModelConfig::stride2_count() const {
  return yy_layers + sp_layers * (extra_sp_stride2 ? 2 : 1);
}

BlockInternals reconciled_internals() {
  BlockInternals b;
  b.expansion_factor = 6;
  b.se_ratio = 16;
  b.se_bias = true;
  b.conv_bias = false;
  b.head_bias = true;
  b.resnet_norm = ResNetNorm::kFirst;
  b.mbconv_norm = MBConvNorm::kProjectOnly;
  b.stride_shortcut = StrideShortcut::kSubsample;
  b.se_placement = SePlacement::kAfterDepthwise;
  return b;
}

ModelConfig cifar10_preset(std::size_t channels) {
  if (channels != 16 && channels != 32 && channels != 64) {
    throw ConfigError("CIFAR-10 presets exist for 16, 32 and 64 channels, not " + std::to_string(channels));
  }
  ModelConfig c;
  c.name = "cifar10_small" + std::to_string(channels);
  c.yy_start_channels = channels;
  c.sp_start_channels = channels;
  c.channels_per_mbconv = 0;
  c.yy_layers = 1;
  c.sp_layers = 1;
  c.yy_mbconv_per_layer = 3;
  c.sp_mbconv_per_layer = 2;
  c.extra_sp_stride2 = true;
  c.pre_classifier_neurons = 40;
  c.num_classes = 10;
  c.input_resolution = 32;
  c.internals = reconciled_internals();
  return c;
}

ModelConfig imagenet_preset() {
  ModelConfig c;
  c.name = "imagenet";
  c.yy_start_channels = 16;
  c.sp_start_channels = 64;
  c.channels_per_mbconv = 2;
  c.yy_layers = 1;
  c.sp_layers = 4;
  c.yy_mbconv_per_layer = 3;
  c.sp_mbconv_per_layer = 2;
  c.extra_sp_stride2 = false;
  c.pre_classifier_neurons = 500;
  c.num_classes = 1000;
  c.input_resolution = 224;
  c.internals = reconciled_internals();
  return c;
}

ModelConfig preset(const std::string& name) {
  if (name == "cifar10_small16") return cifar10_preset(16);
  if (name == "cifar10_small32") return cifar10_preset(32);
  if (name == "cifar10_small64") return cifar10_preset(64);
  if (name == "imagenet") return imagenet_preset();
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  return {"cifar10_small16", "cifar10_small32", "cifar10_small64", "imagenet"};
}

// ---------------------------------------------------------------------------
// Closed-form counting

namespace {

std::size_t conv_count(std::size_t ci, std::size_t co, std::size_t k, std::size_t groups, bool bias) {
  return co * (ci / groups) * k * k + (bias ? co : 0);
}

std::size_t resnet_count(std::size_t ci, std::size_t co, std::size_t stride, const BlockInternals& b) {
  const bool both = b.resnet_norm == ResNetNorm::kBoth;
  std::size_t n = conv_count(ci, co, 3, 1, false) + 2 * co;
  n += conv_count(co, co, 3, 1, b.conv_bias && !both) + (both ? 2 * co : 0);
  if (ci != co || (stride != 1 && b.stride_shortcut == StrideShortcut::kProjection)) n += ci * co + 2 * co;
  return n;
}

std::size_t mbconv_count(std::size_t ci, std::size_t co, const BlockInternals& b) {
  const std::size_t e = ci * b.expansion_factor;
  const bool all = b.mbconv_norm == MBConvNorm::kAll;
  const bool bias = b.conv_bias && !all;
  std::size_t n = conv_count(ci, e, 1, 1, bias) + conv_count(e, e, b.depthwise_kernel, e, bias);
  n += conv_count(e, co, 1, 1, false) + 2 * co;
  if (all) n += 4 * e;
  if (b.se_ratio > 0) {
    const std::size_t c = b.se_placement == SePlacement::kAfterDepthwise ? e : co;
    const std::size_t s = c / b.se_ratio;
    if (s == 0) {
      throw ConfigError("squeeze-excite: " + std::to_string(c) + " channels with ratio " +
                        std::to_string(b.se_ratio) + " leaves no squeezed width");
    }
    n += 2 * c * s + (b.se_bias ? s + c : 0);
  }
  return n;
}

}  // namespace

std::size_t count_parameters(const ModelConfig& config) {
  config.validate();
  const BlockInternals& b = config.internals;
  std::size_t n = 0;
  std::size_t width = 0;
  for (auto kind : {BranchKind::kYin, BranchKind::kYang, BranchKind::kSinglePath}) {
    for (const auto& s : layer_specs(config, kind)) {
      n += resnet_count(s.in_channels, s.resnet_out, resnet_stride(kind), b);
      std::size_t c = s.resnet_out;
      for (std::size_t j = 0; j < s.mbconvs; ++j) {
        n += mbconv_count(c, c + config.channels_per_mbconv, b);
        c += config.channels_per_mbconv;
      }
      width = c;
    }
  }
  const std::size_t p = config.pre_classifier_neurons, k = config.num_classes;
  n += width * p + p * k + (b.head_bias ? p + k : 0);
  return n;
}

// ---------------------------------------------------------------------------
// YYNet

template <class Real>
YYNet<Real>::YYNet(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& b = config_.internals;
  auto make = [&](BranchKind kind, std::vector<BranchLayer<Real>>& out) {
    for (const auto& s : layer_specs(config_, kind)) {
      out.emplace_back(kind, s.in_channels, s.resnet_out, config_.channels_per_mbconv, s.mbconvs,
                       config_.extra_sp_stride2, b);
    }
  };
  make(BranchKind::kYin, yin);
  make(BranchKind::kYang, yang);

  // Both branch embeddings must agree in width and resolution.
  std::size_t yin_strides = 0, yang_strides = 0;
  for (const auto& l : yin) yin_strides += l.stride2_count();
  for (const auto& l : yang) yang_strides += l.stride2_count();
  if (yin.back().out_channels() != yang.back().out_channels() || yin_strides != yang_strides) {
    throw ConfigError("yin and yang embeddings differ in shape");
  }
  make(BranchKind::kSinglePath, single_path);

  pre_classifier = nn::Linear<Real>(single_path.back().out_channels(), config_.pre_classifier_neurons,
                                    b.head_bias);
  dropout = nn::Dropout(config_.dropout_rate);
  classifier = nn::Linear<Real>(config_.pre_classifier_neurons, config_.num_classes, b.head_bias);
}

template <class Real>
YYNet<Real> YYNet<Real>::build(const ModelConfig& config, std::uint64_t seed) {
  YYNet net(config);
  net.initialize(seed);
  return net;
}

template <class Real>
void YYNet<Real>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& l : yin) l.init(rng);
  for (auto& l : yang) l.init(rng);
  for (auto& l : single_path) l.init(rng);
  pre_classifier.init(rng);
  classifier.init(rng);
  for (auto& p : parameters()) {
    // BatchNorm affine parameters back to identity.
    const auto& n = p.name;
    if (n.ends_with(".gamma")) std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), Real(1));
    if (n.ends_with(".beta")) std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), Real(0));
  }
  for (auto& buf : buffers()) {
    const Real v = buf.name.ends_with(".running_var") ? Real(1) : Real(0);
    std::fill(buf.tensor.mutable_data().begin(), buf.tensor.mutable_data().end(), v);
  }
}

template <class Real>
typename YYNet<Real>::Trace YYNet<Real>::forward_trace(const Tensor<Real>& x, const ForwardContext& ctx) {
  const std::size_t r = config_.input_resolution;
  if (x.shape().rank() != 4 || x.dim(1) != 3 || x.dim(2) != r || x.dim(3) != r) {
    throw ShapeError("model expects (N,3," + std::to_string(r) + "," + std::to_string(r) + "), got " +
                     x.shape().to_string());
  }
  Trace t;
  t.yin = yin_input(x, config_.yin_mode);
  for (auto& l : yin) t.yin = l.forward(t.yin, ctx);
  t.yang = x;
  for (auto& l : yang) t.yang = l.forward(t.yang, ctx);
  t.fused = fuse(t.yang, t.yin, config_.fusion);
  t.trunk = t.fused;
  for (auto& l : single_path) t.trunk = l.forward(t.trunk, ctx);
  auto h = nn::gelu(pre_classifier.forward(nn::global_avg_pool(t.trunk)));
  h = dropout.forward(h, ctx);
  t.logits = classifier.forward(h);
  return t;
}

template <class Real>
Tensor<Real> YYNet<Real>::forward(const Tensor<Real>& x, const ForwardContext& ctx) {
  return forward_trace(x, ctx).logits;
}

template <class Real>
NamedTensors<Real> YYNet<Real>::parameters() const {
  NamedTensors<Real> out;
  for (std::size_t i = 0; i < yin.size(); ++i) yin[i].collect_parameters("yin" + std::to_string(i), out);
  for (std::size_t i = 0; i < yang.size(); ++i) yang[i].collect_parameters("yang" + std::to_string(i), out);
  for (std::size_t i = 0; i < single_path.size(); ++i) {
    single_path[i].collect_parameters("sp" + std::to_string(i), out);
  }
  pre_classifier.collect_parameters("head.pre_classifier", out);
  classifier.collect_parameters("head.classifier", out);
  return out;
}

template <class Real>
NamedTensors<Real> YYNet<Real>::buffers() const {
  NamedTensors<Real> out;
  for (std::size_t i = 0; i < yin.size(); ++i) yin[i].collect_buffers("yin" + std::to_string(i), out);
  for (std::size_t i = 0; i < yang.size(); ++i) yang[i].collect_buffers("yang" + std::to_string(i), out);
  for (std::size_t i = 0; i < single_path.size(); ++i) {
    single_path[i].collect_buffers("sp" + std::to_string(i), out);
  }
  return out;
}

template <class Real>
std::size_t YYNet<Real>::param_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <class Real>
std::vector<ParamRow> YYNet<Real>::parameter_table() const {
  std::vector<ParamRow> rows;
  for (const auto& p : parameters()) rows.push_back({p.name, p.tensor.shape(), p.tensor.numel()});
  return rows;
}

template class YYNet<float>;
template class YYNet<double>;

}  // namespace yynet
