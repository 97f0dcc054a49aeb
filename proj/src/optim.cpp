#include "yynet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "yynet/errors.hpp"

namespace yynet {

const char* to_string(ClipMode m) { return m == ClipMode::kGlobalNorm ? "global_norm" : "value"; }

ClipMode parse_clip_mode(const std::string& s) {
  if (s == "global_norm") return ClipMode::kGlobalNorm;
  if (s == "value") return ClipMode::kValue;
  throw ConfigError("unknown clip_mode '" + s + "' (global_norm|value)");
}

void TrainConfig::validate() const {
  if (!(max_lr > 0)) throw ConfigError("max_lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_batch_size == 0) throw ConfigError("eval_batch_size must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (!(ema_start_fraction >= 0 && ema_start_fraction <= 1)) {
    throw ConfigError("ema_start_fraction must lie in [0, 1]");
  }
  if (std::abs(ema_avg_coeff + ema_cur_coeff - 1.0) > 1e-12) {
    throw ConfigError("ema_avg_coeff + ema_cur_coeff must equal 1");
  }
  if (!(wd_lr_multiplier >= 0)) throw ConfigError("wd_lr_multiplier must be non-negative");
  if (!(onecycle.pct_start >= 0 && onecycle.pct_start <= 1)) throw ConfigError("pct_start must lie in [0, 1]");
  if (!(onecycle.div_factor > 0 && onecycle.final_div_factor > 0)) {
    throw ConfigError("one-cycle div factors must be positive");
  }
}

// ---------------------------------------------------------------------------

namespace {
// Cosine interpolation from a (pct = 0) to b (pct = 1).
double cosine_between(double a, double b, double pct) {
  return b + (a - b) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct));
}
}  // namespace

std::size_t onecycle_peak_step(std::size_t total_steps, const OneCycleConfig& cfg) {
  auto peak = static_cast<std::size_t>(std::floor(cfg.pct_start * static_cast<double>(total_steps)));
  return total_steps == 0 ? 0 : std::min(peak, total_steps - 1);
}

double onecycle_lr(std::size_t step, std::size_t total_steps, double max_lr, const OneCycleConfig& cfg) {
  if (step >= total_steps) {
    throw StateError("schedule step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + ")");
  }
  const std::size_t peak = onecycle_peak_step(total_steps, cfg);
  const double initial = max_lr / cfg.div_factor;
  const double final_lr = max_lr / cfg.final_div_factor;
  if (step <= peak) {
    if (peak == 0) return max_lr;
    return cosine_between(initial, max_lr, static_cast<double>(step) / static_cast<double>(peak));
  }
  const double span = static_cast<double>(total_steps - 1 - peak);
  return cosine_between(max_lr, final_lr, static_cast<double>(step - peak) / span);
}

// ---------------------------------------------------------------------------

template <class Real>
double global_grad_norm(const nn::NamedTensors<Real>& params) {
  double ss = 0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (Real g : p.tensor.grad()) ss += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(ss);
}

template <class Real>
double clip_global_norm(const nn::NamedTensors<Real>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto p : params) {
      if (!p.tensor.has_grad()) continue;
      for (Real& g : p.tensor.mutable_grad()) g = static_cast<Real>(static_cast<double>(g) * s);
    }
  }
  return norm;
}

template <class Real>
void clip_values(const nn::NamedTensors<Real>& params, double max_value) {
  const Real hi = static_cast<Real>(max_value);
  for (auto p : params) {
    if (!p.tensor.has_grad()) continue;
    for (Real& g : p.tensor.mutable_grad()) g = std::clamp(g, -hi, hi);
  }
}

template <class Real>
void AdamWState<Real>::reset(const nn::NamedTensors<Real>& params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.tensor.numel(), Real(0));
    v.emplace_back(p.tensor.numel(), Real(0));
  }
  step = 0;
}

template <class Real>
void adamw_step(const nn::NamedTensors<Real>& params, AdamWState<Real>& state, double lr, double wd,
                const AdamWHyper& h) {
  if (state.m.size() != params.size()) throw StateError("optimizer state does not match parameter list");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (Real g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw TrainingDivergedError("non-finite gradient in " + p.name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto tensor = params[i].tensor;
    auto theta = tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size()) throw StateError("moment size mismatch for " + params[i].name);
    const bool has = tensor.has_grad();
    const auto grad = has ? tensor.grad() : std::span<const Real>{};
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = has ? static_cast<double>(grad[j]) : 0.0;
      const double mj = h.beta1 * static_cast<double>(m[j]) + (1.0 - h.beta1) * g;
      const double vj = h.beta2 * static_cast<double>(v[j]) + (1.0 - h.beta2) * g * g;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double th = static_cast<double>(theta[j]);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + h.eps);
      theta[j] = static_cast<Real>(th - lr * update - lr * wd * th);
    }
  }
}

// ---------------------------------------------------------------------------

template <class Real>
std::size_t Ema<Real>::activation_step(std::size_t total_steps, double start_fraction) {
  return static_cast<std::size_t>(std::floor(start_fraction * static_cast<double>(total_steps)));
}

template <class Real>
void Ema<Real>::update(const nn::NamedTensors<Real>& params, std::size_t step) {
  if (step < start_step) return;
  if (!active) {
    shadow.clear();
    for (const auto& p : params) shadow.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    active = true;
    updates = 1;
    return;
  }
  if (shadow.size() != params.size()) throw StateError("EMA shadow does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto cur = params[i].tensor.data();
    auto& s = shadow[i];
    for (std::size_t j = 0; j < s.size(); ++j) {
      s[j] = static_cast<Real>(avg_coeff * static_cast<double>(s[j]) + cur_coeff * static_cast<double>(cur[j]));
    }
  }
  ++updates;
}

template <class Real>
void Ema<Real>::swap_into(const nn::NamedTensors<Real>& params) {
  if (!active) throw StateError("EMA shadow is not active");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i].tensor;
    auto d = t.mutable_data();
    std::swap_ranges(d.begin(), d.end(), shadow[i].begin());
  }
}

#define YYNET_INSTANTIATE(Real)                                                                      \
  template double global_grad_norm<Real>(const nn::NamedTensors<Real>&);                             \
  template double clip_global_norm<Real>(const nn::NamedTensors<Real>&, double);                     \
  template void clip_values<Real>(const nn::NamedTensors<Real>&, double);                            \
  template struct AdamWState<Real>;                                                                  \
  template void adamw_step<Real>(const nn::NamedTensors<Real>&, AdamWState<Real>&, double, double,   \
                                 const AdamWHyper&);                                                 \
  template struct Ema<Real>;

YYNET_INSTANTIATE(float)
YYNET_INSTANTIATE(double)
#undef YYNET_INSTANTIATE

}  // namespace yynet
