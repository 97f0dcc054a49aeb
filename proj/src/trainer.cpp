#include "yynet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "yynet/errors.hpp"
#include "yynet/rng.hpp"

namespace yynet {

namespace {
std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}
}  // namespace

std::string metrics_header() { return "epoch,step,train_loss,lr,wd,test_accuracy,ema_active,wall_time_s"; }

std::string format_metrics_row(const MetricsRow& r) {
  std::string s = std::to_string(r.epoch) + ',' + std::to_string(r.step) + ',';
  if (r.train_loss) s += fmt("%.9g", *r.train_loss);
  s += ',';
  if (r.lr) s += fmt("%.17g", *r.lr);
  s += ',';
  if (r.wd) s += fmt("%.17g", *r.wd);
  s += ',';
  if (r.test_accuracy) s += fmt("%.6f", *r.test_accuracy);
  s += ',';
  s += r.ema_active ? "1" : "0";
  s += ',' + fmt("%.3f", r.wall_time_s);
  return s;
}

double evaluate(YYNet<float>& model, const data::DatasetSplit& split, const data::ChannelStats& stats,
                std::size_t batch_size) {
  if (split.size() == 0) throw DataError("cannot evaluate on an empty split");
  data::BatchOptions bo;
  bo.batch_size = batch_size;
  bo.shuffle = false;
  bo.augment = false;
  data::BatchStream stream(split, stats, bo, 0);
  std::size_t correct = 0;
  while (auto batch = stream.next()) {
    const auto logits = model.forward(batch->images, ForwardContext{false, nullptr});
    const std::size_t k = logits.dim(1);
    const auto v = logits.data();
    for (std::size_t i = 0; i < batch->labels.size(); ++i) {
      const float* row = v.data() + i * k;
      const auto pred = static_cast<std::int32_t>(std::max_element(row, row + k) - row);
      if (pred == batch->labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

// ---------------------------------------------------------------------------
// Checkpoint mapping

Checkpoint make_checkpoint(const RunConfig& cfg, const YYNet<float>& model, const AdamWState<float>* adam,
                           const Ema<float>* ema, const TrainState& state) {
  Checkpoint c;
  c.config = cfg;
  c.state = state;
  const auto params = model.parameters();
  for (const auto& p : params) {
    c.tensors.push_back({"param/" + p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  for (const auto& b : model.buffers()) {
    c.tensors.push_back({"buffer/" + b.name, b.tensor.shape(), {b.tensor.data().begin(), b.tensor.data().end()}});
  }
  if (adam && !adam->m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.tensors.push_back({"adam_m/" + params[i].name, params[i].tensor.shape(), adam->m[i]});
      c.tensors.push_back({"adam_v/" + params[i].name, params[i].tensor.shape(), adam->v[i]});
    }
  }
  if (ema && ema->active) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.tensors.push_back({"ema/" + params[i].name, params[i].tensor.shape(), ema->shadow[i]});
    }
  }
  return c;
}

namespace {

const CheckpointTensor& require(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
  const auto* t = ckpt.find(name);
  if (!t) throw FormatError("checkpoint lacks tensor " + name);
  if (!(t->shape == shape)) {
    throw FormatError("checkpoint tensor " + name + " has shape " + t->shape.to_string() + ", model expects " +
                      shape.to_string());
  }
  return *t;
}

void restore_optimizer(const Checkpoint& ckpt, const nn::NamedTensors<float>& params, AdamWState<float>& adam,
                       Ema<float>& ema) {
  adam.reset(params);
  adam.step = ckpt.state.adam_step;
  if (adam.step > 0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam.m[i] = require(ckpt, "adam_m/" + params[i].name, params[i].tensor.shape()).values;
      adam.v[i] = require(ckpt, "adam_v/" + params[i].name, params[i].tensor.shape()).values;
    }
  }
  ema.active = ckpt.state.ema_active;
  ema.updates = ckpt.state.ema_updates;
  ema.shadow.clear();
  if (ema.active) {
    for (const auto& p : params) ema.shadow.push_back(require(ckpt, "ema/" + p.name, p.tensor.shape()).values);
  }
}

}  // namespace

void restore_model(const Checkpoint& ckpt, YYNet<float>& model) {
  for (auto p : model.parameters()) {
    const auto& t = require(ckpt, "param/" + p.name, p.tensor.shape());
    std::copy(t.values.begin(), t.values.end(), p.tensor.mutable_data().begin());
  }
  for (auto b : model.buffers()) {
    const auto& t = require(ckpt, "buffer/" + b.name, b.tensor.shape());
    std::copy(t.values.begin(), t.values.end(), b.tensor.mutable_data().begin());
  }
}

CheckpointEval evaluate_checkpoint(const Checkpoint& ckpt, const data::DatasetSplit& test,
                                   const data::ChannelStats& stats, EvalWeights weights) {
  YYNet<float> model(ckpt.config.model);
  restore_model(ckpt, model);
  CheckpointEval out;
  if (weights == EvalWeights::kEma) {
    if (ckpt.state.ema_active) {
      for (auto p : model.parameters()) {
        const auto& t = require(ckpt, "ema/" + p.name, p.tensor.shape());
        std::copy(t.values.begin(), t.values.end(), p.tensor.mutable_data().begin());
      }
      out.used_ema = true;
    } else {
      out.warning = "EMA shadow is not active in this checkpoint (activates at 25% of training); using live weights";
    }
  }
  out.accuracy = evaluate(model, test.head(ckpt.config.train.test_limit), stats, ckpt.config.train.eval_batch_size);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(RunConfig cfg, const data::DatasetSplit& train_full, const data::DatasetSplit& test_full,
                  const data::ChannelStats& stats, const TrainerOptions& opt) {
#if defined(__GLIBC__)
  // Activation buffers are freed and reallocated every step; keep them on the
  // heap instead of fresh mmap pages that fault on first touch.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::optional<Checkpoint> resume;
  if (opt.resume) {
    resume = load_checkpoint(*opt.resume);
    cfg = resume->config;
  }
  cfg.model.validate();
  cfg.train.validate();
  const TrainConfig& tc = cfg.train;
  const data::DatasetSplit train_split = train_full.head(tc.train_limit);
  const data::DatasetSplit test_split = test_full.head(tc.test_limit);
  if (train_split.size() == 0 && tc.epochs > 0) throw DataError("training split is empty");

  std::filesystem::create_directories(opt.out_dir);
  const auto metrics_path = opt.out_dir / "metrics.csv";
  const auto epochs_path = opt.out_dir / "epochs.csv";
  const bool append = resume && std::filesystem::exists(metrics_path);
  std::ofstream metrics(metrics_path, append ? std::ios::app : std::ios::trunc);
  std::ofstream epochs_csv(epochs_path, append ? std::ios::app : std::ios::trunc);
  if (!metrics || !epochs_csv) throw IoError("cannot write metrics into " + opt.out_dir.string());
  if (!append) {
    metrics << metrics_header() << '\n';
    epochs_csv << "epoch,mean_train_loss,test_accuracy,lr_end,wd_next,ema_active,wall_time_s\n";
  }

  YYNet<float> model = YYNet<float>::build(cfg.model, tc.seed);
  const auto params = model.parameters();
  for (auto p : params) p.tensor.set_requires_grad(true);

  const std::size_t steps_per_epoch = tc.epochs > 0 ? data::num_batches(train_split.size(), tc.batch_size) : 0;
  const std::size_t total_steps = steps_per_epoch * tc.epochs;

  AdamWState<float> adam;
  adam.reset(params);
  Ema<float> ema;
  ema.avg_coeff = tc.ema_avg_coeff;
  ema.cur_coeff = tc.ema_cur_coeff;
  ema.start_step = Ema<float>::activation_step(total_steps, tc.ema_start_fraction);

  TrainState state;
  state.current_wd = total_steps > 0 ? tc.wd_lr_multiplier * onecycle_lr(0, total_steps, tc.max_lr, tc.onecycle) : 0.0;
  if (resume) {
    restore_model(*resume, model);
    restore_optimizer(*resume, params, adam, ema);
    state = resume->state;
  }

  const AdamWHyper hyper{tc.beta1, tc.beta2, tc.eps};
  const auto clock_start = std::chrono::steady_clock::now();
  const double wall_offset = state.wall_time_s;
  auto wall = [&] {
    return wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  };

  auto eval_now = [&]() {
    const bool use_ema = tc.eval_with_ema && ema.active;
    if (use_ema) ema.swap_into(params);
    const double acc = evaluate(model, test_split, stats, tc.eval_batch_size);
    if (use_ema) ema.swap_into(params);
    return acc;
  };

  TrainResult result;
  if (total_steps == 0) {
    const double acc = eval_now();
    MetricsRow row;
    row.test_accuracy = acc;
    row.wall_time_s = wall();
    metrics << format_metrics_row(row) << '\n';
    state.last_test_accuracy = acc;
    result.final_test_accuracy = acc;
    result.completed = true;
    save_checkpoint(opt.out_dir / "final.ckpt", make_checkpoint(cfg, model, &adam, &ema, state));
    return result;
  }

  for (std::size_t epoch = state.epochs_completed; epoch < tc.epochs; ++epoch) {
    data::BatchOptions bo;
    bo.batch_size = tc.batch_size;
    bo.seed = tc.seed;
    bo.epoch = epoch;
    bo.shuffle = true;
    bo.augment = tc.augment;
    data::BatchStream stream(train_split, stats, bo, tc.prefetch_depth);

    double loss_sum = 0.0;
    double lr = 0.0;
    std::size_t b = 0;
    MetricsRow last;
    while (auto batch = stream.next()) {
      const std::uint64_t step = epoch * steps_per_epoch + b;
      lr = onecycle_lr(step, total_steps, tc.max_lr, tc.onecycle);
      for (auto p : params) p.tensor.zero_grad();

      GradTape<float> tape;
      double loss_value = 0.0;
      {
        auto scope = tape.activate();
        Rng drop_rng = derive_rng({tc.seed, step, 0x44524f50ULL});
        const auto logits = model.forward(batch->images, ForwardContext{true, &drop_rng});
        const auto loss = nn::softmax_cross_entropy(logits, std::span<const std::int32_t>(batch->labels));
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw TrainingDivergedError("loss became " + std::to_string(loss_value) + " at step " + std::to_string(step));
        }
        tape.backward(loss);
      }
      if (tc.clip_mode == ClipMode::kGlobalNorm) {
        clip_global_norm(params, tc.clip_norm);
      } else {
        clip_values(params, tc.clip_norm);
      }
      adamw_step(params, adam, lr, state.current_wd, hyper);
      ema.update(params, step);

      loss_sum += loss_value;
      MetricsRow row;
      row.epoch = epoch;
      row.step = step;
      row.train_loss = loss_value;
      row.lr = lr;
      row.wd = state.current_wd;
      row.ema_active = ema.active;
      row.wall_time_s = wall();
      if (b + 1 < steps_per_epoch) {
        metrics << format_metrics_row(row) << '\n';
      } else {
        last = row;
      }
      ++b;
      ++result.steps;
      state.global_step = step + 1;
    }

    const double acc = eval_now();
    last.test_accuracy = acc;
    last.wall_time_s = wall();
    metrics << format_metrics_row(last) << '\n';
    metrics.flush();

    // Coupled weight decay for the next epoch.
    state.current_wd = coupled_weight_decay(lr, tc.wd_lr_multiplier);
    state.epochs_completed = epoch + 1;
    state.adam_step = adam.step;
    state.ema_active = ema.active;
    state.ema_updates = ema.updates;
    state.last_test_accuracy = acc;
    state.wall_time_s = wall();

    EpochSummary summary{epoch, loss_sum / static_cast<double>(steps_per_epoch), acc, lr, state.current_wd,
                         ema.active, state.wall_time_s};
    result.epochs.push_back(summary);
    epochs_csv << epoch << ',' << fmt("%.9g", summary.mean_train_loss) << ',' << fmt("%.6f", acc) << ','
               << fmt("%.17g", lr) << ',' << fmt("%.17g", state.current_wd) << ',' << (ema.active ? 1 : 0) << ','
               << fmt("%.3f", state.wall_time_s) << '\n';
    epochs_csv.flush();
    if (opt.log) {
      *opt.log << "epoch " << epoch + 1 << '/' << tc.epochs << "  loss " << fmt("%.4f", summary.mean_train_loss)
               << "  test_acc " << fmt("%.4f", acc) << "  lr " << fmt("%.3e", lr) << "  ema "
               << (ema.active ? "on" : "off") << "  " << fmt("%.1f", state.wall_time_s) << "s" << std::endl;
    }
    save_checkpoint(opt.out_dir / "checkpoint.ckpt", make_checkpoint(cfg, model, &adam, &ema, state));
    result.final_test_accuracy = acc;
    result.ema_active = ema.active;
    if (opt.stop_after_epochs > 0 && state.epochs_completed >= opt.stop_after_epochs &&
        state.epochs_completed < tc.epochs) {
      return result;
    }
  }
  result.completed = true;
  result.final_test_accuracy = state.last_test_accuracy;
  save_checkpoint(opt.out_dir / "final.ckpt", make_checkpoint(cfg, model, &adam, &ema, state));
  return result;
}

}  // namespace yynet
