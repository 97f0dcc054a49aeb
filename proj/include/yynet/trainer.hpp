#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "yynet/checkpoint.hpp"
#include "yynet/data.hpp"
#include "yynet/model.hpp"
#include "yynet/optim.hpp"

namespace yynet {

struct MetricsRow {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  std::optional<double> train_loss;
  std::optional<double> lr;
  std::optional<double> wd;
  std::optional<double> test_accuracy;
  bool ema_active = false;
  double wall_time_s = 0.0;
};

/// "epoch,step,train_loss,lr,wd,test_accuracy,ema_active,wall_time_s"
std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;
  double test_accuracy = 0.0;
  double lr_end = 0.0;
  double wd_next = 0.0;
  bool ema_active = false;
  double wall_time_s = 0.0;
};

struct TrainerOptions {
  std::filesystem::path out_dir;
  /// Continue from this checkpoint; its embedded config replaces the given one.
  std::optional<std::filesystem::path> resume;
  /// Stop after this many completed epochs in total (0 = run to the end).
  std::size_t stop_after_epochs = 0;
  std::ostream* log = nullptr;
};

struct TrainResult {
  double final_test_accuracy = 0.0;
  std::vector<EpochSummary> epochs;  // epochs run by this call
  std::uint64_t steps = 0;
  bool ema_active = false;
  bool completed = false;  // false when stopped early
};

/// Top-1 accuracy in eval mode over the whole split.
double evaluate(YYNet<float>& model, const data::DatasetSplit& split, const data::ChannelStats& stats,
                std::size_t batch_size);

/// Trains per the recipe and writes metrics.csv, epochs.csv, checkpoint.ckpt
/// (after every epoch) and final.ckpt into opt.out_dir.
TrainResult train(RunConfig cfg, const data::DatasetSplit& train_split, const data::DatasetSplit& test_split,
                  const data::ChannelStats& stats, const TrainerOptions& opt);

/// Model weights, BatchNorm statistics, optimizer moments and EMA shadow.
Checkpoint make_checkpoint(const RunConfig& cfg, const YYNet<float>& model, const AdamWState<float>* adam,
                           const Ema<float>* ema, const TrainState& state);
/// Copies parameters and buffers into a model built from ckpt.config.
void restore_model(const Checkpoint& ckpt, YYNet<float>& model);

enum class EvalWeights { kEma, kLive };

struct CheckpointEval {
  double accuracy = 0.0;
  bool used_ema = false;
  std::string warning;  // set when EMA was requested but is not active yet
};

CheckpointEval evaluate_checkpoint(const Checkpoint& ckpt, const data::DatasetSplit& test,
                                   const data::ChannelStats& stats, EvalWeights weights);

}  // namespace yynet
