#pragma once

// Training recipe: AdamW with decoupled weight decay, one-cycle learning rate,
// gradient clipping, shadow-weight EMA and learning-rate-coupled weight decay.

#include <cstdint>
#include <string>
#include <vector>

#include "yynet/nn/layers.hpp"

namespace yynet {

struct OneCycleConfig {
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  friend bool operator==(const OneCycleConfig&, const OneCycleConfig&) = default;
};

enum class ClipMode { kGlobalNorm, kValue };
const char* to_string(ClipMode m);
ClipMode parse_clip_mode(const std::string& s);

struct TrainConfig {
  double max_lr = 1e-2;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  ClipMode clip_mode = ClipMode::kGlobalNorm;
  double ema_start_fraction = 0.25;
  double ema_avg_coeff = 0.1;
  double ema_cur_coeff = 0.9;
  bool eval_with_ema = true;
  double wd_lr_multiplier = 1.56;
  std::uint64_t seed = 0;
  OneCycleConfig onecycle;
  bool augment = true;
  std::size_t prefetch_depth = 2;
  std::size_t train_limit = 0;  // 0 = whole split
  std::size_t test_limit = 0;
  std::size_t eval_batch_size = 500;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Learning rate for 0 <= step < total_steps. Cosine warmup from
/// max_lr/div_factor to max_lr over floor(pct_start * total_steps) steps,
/// then cosine anneal to max_lr/final_div_factor at the last step.
/// Throws StateError when step is out of range.
double onecycle_lr(std::size_t step, std::size_t total_steps, double max_lr, const OneCycleConfig& cfg);

/// Step index at which the schedule peaks.
std::size_t onecycle_peak_step(std::size_t total_steps, const OneCycleConfig& cfg);

/// Global L2 norm over every gradient slot (absent grads count as zero).
template <class Real>
double global_grad_norm(const nn::NamedTensors<Real>& params);

/// Scales all gradients by max_norm / norm when norm > max_norm.
/// Returns the pre-clip norm.
template <class Real>
double clip_global_norm(const nn::NamedTensors<Real>& params, double max_norm);

/// Clamps each gradient element into [-max_value, max_value].
template <class Real>
void clip_values(const nn::NamedTensors<Real>& params, double max_value);

/// Adam moments plus the step counter, aligned with a parameter list.
template <class Real>
struct AdamWState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::uint64_t step = 0;

  void reset(const nn::NamedTensors<Real>& params);
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One decoupled update of every parameter:
/// theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta.
/// Throws TrainingDivergedError when a gradient is not finite.
/// Parameters without a grad slot are treated as having zero gradient.
template <class Real>
void adamw_step(const nn::NamedTensors<Real>& params, AdamWState<Real>& state, double lr, double wd,
                const AdamWHyper& hyper);

/// Shadow copy of the parameters, switched on at a fixed step.
template <class Real>
struct Ema {
  double avg_coeff = 0.1;
  double cur_coeff = 0.9;
  std::size_t start_step = 0;
  bool active = false;
  std::uint64_t updates = 0;
  std::vector<std::vector<Real>> shadow;

  /// floor(start_fraction * total_steps).
  static std::size_t activation_step(std::size_t total_steps, double start_fraction);

  /// Call after the optimizer step with index `step` (0-based). At
  /// start_step the shadow is seeded with the current weights, afterwards
  /// shadow = avg_coeff * shadow + cur_coeff * current.
  void update(const nn::NamedTensors<Real>& params, std::size_t step);

  /// Swaps shadow and live values (call twice to restore).
  void swap_into(const nn::NamedTensors<Real>& params);
};

/// Weight decay for the next epoch given the learning rate at the end of this one.
inline double coupled_weight_decay(double epoch_end_lr, double multiplier) { return multiplier * epoch_end_lr; }

}  // namespace yynet
