#include "yynet/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "yynet/checkpoint.hpp"
#include "yynet/config_io.hpp"
#include "yynet/errors.hpp"
#include "yynet/trainer.hpp"

namespace yynet::cli {
namespace {

namespace fs = std::filesystem;

std::string default_data_dir() {
  if (const char* env = std::getenv("YYNET_DATA")) return env;
  return "data/cifar-10-batches-bin";
}

struct Loaded {
  data::Cifar10 cifar;
  data::ChannelStats stats;
};

Loaded load_data(const std::string& dir, std::ostream& out) {
  Loaded l{data::load_cifar10(dir), {}};
  l.stats = data::load_or_compute_stats(fs::path(dir) / "yynet_channel_stats.txt", l.cifar.train);
  out << "data: " << l.cifar.train.size() << " train / " << l.cifar.test.size() << " test images from " << dir
      << "\n";
  return l;
}

bool is_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic(16, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  return in && magic == "YYNET-CHECKPOINT";
}

void print_table(const std::vector<ParamRow>& rows, std::ostream& out) {
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::size_t total = 0;
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width) + 2) << r.name << std::setw(18) << r.shape.to_string()
        << std::right << std::setw(10) << r.count << "\n";
    total += r.count;
  }
  out << std::left << std::setw(static_cast<int>(width) + 20) << "total" << std::right << std::setw(10) << total
      << "\n";
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single run.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct Options {
  std::string config = "preset:cifar10_small16";
  std::string data = default_data_dir();
  std::string out = "runs/latest";
  std::string checkpoint;
  std::string resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::size_t runs = 3;
  std::size_t stop_after = 0;
  bool ema = false;
  bool live = false;
  bool reconcile = false;
  bool quiet = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = load_run_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

int cmd_train(const Options& o, std::ostream& out) {
  TrainerOptions topt;
  topt.out_dir = o.out;
  topt.stop_after_epochs = o.stop_after;
  topt.log = o.quiet ? nullptr : &out;
  RunConfig cfg;
  if (o.resume.empty()) {
    cfg = resolve_config(o);
  } else {
    topt.resume = o.resume;
  }
  Loaded d = load_data(o.data, out);
  const TrainResult r = train(cfg, d.cifar.train, d.cifar.test, d.stats, topt);
  out << (r.completed ? "final" : "stopped") << " test_accuracy " << std::fixed << std::setprecision(6)
      << r.final_test_accuracy << "\n";
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.checkpoint.empty()) throw ConfigError("eval needs a checkpoint path");
  if (o.ema && o.live) throw ConfigError("--ema and --live are exclusive");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  Loaded d = load_data(o.data, out);
  EvalWeights w = ckpt.config.train.eval_with_ema ? EvalWeights::kEma : EvalWeights::kLive;
  if (o.ema) w = EvalWeights::kEma;
  if (o.live) w = EvalWeights::kLive;
  const CheckpointEval r = evaluate_checkpoint(ckpt, d.cifar.test, d.stats, w);
  if (!r.warning.empty()) err << "warning: " << r.warning << "\n";
  out << "weights " << (r.used_ema ? "ema" : "live") << "\n";
  out << "test_accuracy " << std::fixed << std::setprecision(6) << r.accuracy << "\n";
  return kOk;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  const std::string& src = o.checkpoint.empty() ? o.config : o.checkpoint;
  std::vector<ParamRow> rows;
  ModelConfig mc;
  if (is_checkpoint_file(src)) {
    const Checkpoint ckpt = load_checkpoint(src);
    mc = ckpt.config.model;
    YYNet<float> model(mc);
    restore_model(ckpt, model);
    rows = model.parameter_table();
  } else {
    mc = resolve_config(o).model;
    rows = YYNet<float>(mc).parameter_table();
  }
  out << "model " << mc.name << "  fusion " << formula_expression(mc.fusion) << "  internals "
      << describe(mc.internals) << "\n";
  print_table(rows, out);
  if (o.reconcile) {
    const ReconcileResult rr = reconcile_internals(target_cifar10_counts());
    out << "\n" << rr.report();
  }
  return kOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  if (o.runs == 0) throw ConfigError("--runs must be >= 1");
  const RunConfig base = resolve_config(o);
  Loaded d = load_data(o.data, out);
  fs::create_directories(o.out);
  std::ofstream csv(fs::path(o.out) / "ablation.csv");
  if (!csv) throw IoError("cannot write " + (fs::path(o.out) / "ablation.csv").string());
  csv << "formula,expression,runs,mean_accuracy,std_accuracy,accuracies\n";
  out << std::left << std::setw(26) << "formula" << std::right << std::setw(10) << "mean" << std::setw(10) << "std"
      << "\n";
  for (std::size_t fi = 0; fi < kAllFusionFormulas.size(); ++fi) {
    const FusionFormula f = kAllFusionFormulas[fi];
    std::vector<double> acc;
    for (std::size_t run = 0; run < o.runs; ++run) {
      RunConfig cfg = base;
      cfg.model.fusion = f;
      cfg.train.seed = base.train.seed + fi * 1000 + run;
      TrainerOptions topt;
      topt.out_dir = fs::path(o.out) / to_string(f) / ("run" + std::to_string(run));
      topt.log = o.quiet ? nullptr : &out;
      acc.push_back(train(cfg, d.cifar.train, d.cifar.test, d.stats, topt).final_test_accuracy);
    }
    std::ostringstream list;
    for (std::size_t i = 0; i < acc.size(); ++i) list << (i ? ";" : "") << acc[i];
    csv << to_string(f) << ",\"" << formula_expression(f) << "\"," << acc.size() << "," << mean_of(acc) << ","
        << std_of(acc) << "," << list.str() << "\n";
    csv.flush();
    out << std::left << std::setw(26) << formula_expression(f) << std::right << std::fixed << std::setprecision(4)
        << std::setw(10) << mean_of(acc) << std::setw(10) << std_of(acc) << "\n";
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Yin-Yang two-branch CNN: training, evaluation, inspection and fusion ablation", "yynet"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file or preset:NAME")->capture_default_str();
    sub->add_option("--data", o.data, "directory holding the CIFAR-10 binary batches")->capture_default_str();
    sub->add_option("--seed", o.seed, "override the configured seed");
    sub->add_option("--epochs", o.epochs, "override the configured epoch count");
    sub->add_option("--batch-size", o.batch_size, "override the configured batch size");
    sub->add_flag("--quiet", o.quiet, "suppress per-epoch progress");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model, writing metrics and checkpoints");
  add_common(train_cmd);
  train_cmd->add_option("--out", o.out, "output directory")->capture_default_str();
  train_cmd->add_option("--resume", o.resume, "continue from a checkpoint (its config is used)");
  train_cmd->add_option("--stop-after", o.stop_after, "stop once this many epochs are complete");

  CLI::App* eval_cmd = app.add_subcommand("eval", "top-1 test accuracy of a checkpoint");
  eval_cmd->add_option("checkpoint", o.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", o.data, "directory holding the CIFAR-10 binary batches")->capture_default_str();
  eval_cmd->add_flag("--ema", o.ema, "evaluate the EMA shadow weights");
  eval_cmd->add_flag("--live", o.live, "evaluate the live weights");

  CLI::App* inspect_cmd = app.add_subcommand("inspect", "per-layer parameter table");
  inspect_cmd->add_option("--config", o.config, "JSON config, preset:NAME or checkpoint file")
      ->capture_default_str();
  inspect_cmd->add_option("checkpoint", o.checkpoint, "checkpoint file (instead of --config)");
  inspect_cmd->add_flag("--reconcile", o.reconcile, "print the internals reconciliation report");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train every fusion formula R times");
  add_common(ablate_cmd);
  ablate_cmd->add_option("--out", o.out, "output directory")->capture_default_str();
  ablate_cmd->add_option("--runs", o.runs, "runs per formula")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(o, out);
    if (*eval_cmd) return cmd_eval(o, out, err);
    if (*inspect_cmd) return cmd_inspect(o, out);
    if (*ablate_cmd) return cmd_ablate(o, out);
  } catch (const TrainingDivergedError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace yynet::cli
