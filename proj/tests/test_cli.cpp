#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support/suites.hpp"
#include "yynet/cli.hpp"
#include "yynet/config_io.hpp"

using namespace yynet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run yy(std::vector<std::string> args) {
  args.insert(args.begin(), "yynet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = yynet::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path real_data_dir() {
  if (const char* env = std::getenv("YYNET_DATA")) return env;
  return "/root/data/cifar-10-batches-bin";
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("inspect prints the parameter table") {
    auto r = yy({"inspect", "--config", "preset:cifar10_small64"});
    CHECK(r.code == 0);
    CHECK(r.out.find("726274") != std::string::npos);
    r = yy({"inspect", "--config", "preset:cifar10_small32", "--reconcile"});
    CHECK(r.code == 0);
    CHECK(r.out.find("191330") != std::string::npos);
    CHECK(r.out.find("# selected") != std::string::npos);
  }

  TEST_CASE("exit codes") {
    CHECK(yy({}).code == 1);
    CHECK(yy({"frobnicate"}).code == 1);
    CHECK(yy({"train", "--no-such-flag"}).code == 1);
    CHECK(yy({"inspect", "--config", "preset:nope"}).code == 1);
    CHECK(yy({"--help"}).code == 0);
    const auto missing = yy({"train", "--data", "/nonexistent/dir", "--out",
                              (fs::temp_directory_path() / "yynet_cli_none").string()});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("does not exist") != std::string::npos);
    const fs::path junk = fs::temp_directory_path() / "yynet_cli_junk.ckpt";
    std::ofstream(junk) << "YYNET-CHECKPOINT 1\nconfig {}\n";
    CHECK(yy({"eval", junk.string(), "--data", "/nonexistent/dir"}).code == 2);
    CHECK(yy({"inspect", junk.string()}).code == 2);
    fs::remove(junk);
  }

  TEST_CASE("train, eval and ablate end to end on a small slice") {
    const fs::path data = real_data_dir();
    if (!fs::exists(data / "test_batch.bin")) {
      MESSAGE("CIFAR-10 not found; skipping");
      return;
    }
    const fs::path dir = fs::temp_directory_path() / "yynet_cli_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    RunConfig cfg;
    cfg.model = testing::tiny_model_config();
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;
    cfg.train.train_limit = 128;
    cfg.train.test_limit = 64;
    cfg.train.eval_batch_size = 64;
    std::ofstream(dir / "tiny.json") << to_json(cfg);

    auto r = yy({"train", "--config", (dir / "tiny.json").string(), "--data", data.string(), "--out",
                  (dir / "run").string(), "--seed", "3", "--quiet"});
    REQUIRE(r.code == 0);
    const auto t = testing::read_csv(dir / "run" / "metrics.csv");
    CHECK(t.rows.size() == 8);
    const std::string logged = t.rows.back()[t.column("test_accuracy")];

    r = yy({"eval", (dir / "run" / "final.ckpt").string(), "--data", data.string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("test_accuracy " + logged) != std::string::npos);
    CHECK(r.out.find("weights ema") != std::string::npos);
    r = yy({"eval", (dir / "run" / "final.ckpt").string(), "--data", data.string(), "--live"});
    CHECK(r.out.find("weights live") != std::string::npos);

    r = yy({"inspect", (dir / "run" / "final.ckpt").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("model tiny") != std::string::npos);

    r = yy({"ablate", "--config", (dir / "tiny.json").string(), "--data", data.string(), "--out",
             (dir / "ablate").string(), "--runs", "2", "--epochs", "1", "--quiet"});
    REQUIRE(r.code == 0);
    const auto a = testing::read_csv(dir / "ablate" / "ablation.csv");
    CHECK(a.rows.size() == 6);
    for (const auto& row : a.rows) CHECK(row[a.column("runs")] == "2");
    // Seeds follow seed + formula_index * 1000 + run.
    const Checkpoint c = load_checkpoint(dir / "ablate" / "A_PLUS_I" / "run1" / "final.ckpt");
    CHECK(c.config.train.seed == 5 * 1000 + 1);
    CHECK(c.config.model.fusion == FusionFormula::kAPlusI);
    fs::remove_all(dir);
  }
}
