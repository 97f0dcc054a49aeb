#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "yynet/blocks.hpp"

namespace yynet {

struct ModelConfig {
  std::string name = "custom";
  std::size_t yy_start_channels = 16;
  std::size_t sp_start_channels = 16;
  std::size_t channels_per_mbconv = 0;
  std::size_t yy_layers = 1;
  std::size_t sp_layers = 1;
  std::size_t yy_mbconv_per_layer = 3;
  std::size_t sp_mbconv_per_layer = 2;
  bool extra_sp_stride2 = true;
  std::size_t pre_classifier_neurons = 40;
  std::size_t num_classes = 10;
  std::size_t input_resolution = 32;
  FusionFormula fusion = FusionFormula::kAPlusI;
  YinMode yin_mode = YinMode::kFirstChannel;
  double dropout_rate = 0.2;
  BlockInternals internals;

  /// Throws ConfigError on any invariant violation.
  void validate() const;
  /// Stride-2 applications between the input and the head.
  std::size_t stride2_count() const;
  /// Spatial extent entering the head.
  std::size_t final_resolution() const { return input_resolution >> stride2_count(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Internals under which the three CIFAR-10 presets reproduce the target
/// parameter counts exactly (recovered by reconcile_internals).
BlockInternals reconciled_internals();

/// channels is 16, 32 or 64.
ModelConfig cifar10_preset(std::size_t channels);
ModelConfig imagenet_preset();
/// "cifar10_small16", "cifar10_small32", "cifar10_small64" or "imagenet".
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Closed-form trainable parameter count of a configuration, computed without
/// building the model.
std::size_t count_parameters(const ModelConfig& config);

struct ParamRow {
  std::string name;
  Shape shape;
  std::size_t count = 0;
};

template <class Real>
class YYNet {
 public:
  /// Builds the topology with weights zero, BN gamma one, BN stats at init.
  explicit YYNet(ModelConfig config);
  /// Topology plus deterministic initialization from seed.
  static YYNet build(const ModelConfig& config, std::uint64_t seed);

  YYNet(YYNet&&) = default;
  YYNet& operator=(YYNet&&) = default;
  YYNet(const YYNet&) = delete;
  YYNet& operator=(const YYNet&) = delete;

  /// Kaiming fan-in normal weights, zero biases, identity BatchNorm.
  void initialize(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  struct Trace {
    Tensor<Real> yin;    // Yin branch embedding (I)
    Tensor<Real> yang;   // Yang branch embedding (A)
    Tensor<Real> fused;
    Tensor<Real> trunk;  // single-path output
    Tensor<Real> logits;
  };

  Tensor<Real> forward(const Tensor<Real>& x, const ForwardContext& ctx);
  Trace forward_trace(const Tensor<Real>& x, const ForwardContext& ctx);

  /// Trainable tensors in a fixed order with hierarchical names.
  NamedTensors<Real> parameters() const;
  /// BatchNorm running statistics.
  NamedTensors<Real> buffers() const;
  std::size_t param_count() const;
  std::vector<ParamRow> parameter_table() const;

  std::vector<BranchLayer<Real>> yin;
  std::vector<BranchLayer<Real>> yang;
  std::vector<BranchLayer<Real>> single_path;
  nn::Linear<Real> pre_classifier;
  nn::Dropout dropout;
  nn::Linear<Real> classifier;

 private:
  ModelConfig config_;
};

// ---------------------------------------------------------------------------
// Recovery of unspecified block internals from target parameter counts

struct ReconcileTarget {
  std::size_t channels;
  std::size_t params;
};

/// Target CIFAR-10 parameter counts for 16/32/64 channels.
std::vector<ReconcileTarget> target_cifar10_counts();

struct ReconcileGrid {
  std::vector<std::size_t> expansion_factor{2, 3, 4, 6};
  std::vector<std::size_t> se_ratio{2, 4, 8, 16, 0};  // 0 = no squeeze-excite
  std::vector<bool> se_bias{true, false};
  std::vector<bool> conv_bias{false, true};
  std::vector<bool> head_bias{true, false};
  std::vector<ResNetNorm> resnet_norm{ResNetNorm::kBoth, ResNetNorm::kFirst};
  std::vector<MBConvNorm> mbconv_norm{MBConvNorm::kAll, MBConvNorm::kProjectOnly};
  std::vector<StrideShortcut> stride_shortcut{StrideShortcut::kProjection, StrideShortcut::kSubsample};
  std::vector<SePlacement> se_placement{SePlacement::kAfterDepthwise, SePlacement::kAfterProject};

  std::size_t size() const;
};

struct ReconcilePoint {
  BlockInternals internals;
  std::vector<std::size_t> counts;        // one per target; empty when invalid
  std::vector<long long> deltas;          // counts - target
  long long total_abs_deviation = 0;
  bool valid = true;                      // false when a block cannot be built
  bool exact() const;
};

struct ReconcileResult {
  std::vector<ReconcileTarget> targets;
  std::vector<ReconcilePoint> points;  // every grid point, grid order
  std::size_t best = 0;                // index into points
  std::size_t exact_matches = 0;

  const ReconcilePoint& best_point() const { return points[best]; }
  /// Largest |delta| / target over the best point's targets.
  double worst_relative_delta() const;
  /// Full grid listing followed by the selected setting.
  std::string report() const;
};

/// Evaluates every grid point on the CIFAR-10 preset template. The first
/// exact match in grid order wins; without one, the point with the smallest
/// total absolute deviation.
ReconcileResult reconcile_internals(const std::vector<ReconcileTarget>& targets,
                                    const ReconcileGrid& grid = {});

std::string describe(const BlockInternals& internals);

}  // namespace yynet
