#pragma once

// Check suites shared by the unit tests and the acceptance runner. Each suite
// returns one outcome per case so callers can report or assert as they like.

#include <filesystem>
#include <string>
#include <vector>

#include "yynet/data.hpp"
#include "yynet/model.hpp"
#include "yynet/trainer.hpp"

namespace yynet::testing {

struct Outcome {
  std::string name;
  bool pass = false;
  std::string detail;
};

bool all_pass(const std::vector<Outcome>& v);
std::string failures(const std::vector<Outcome>& v);

/// Finite-difference checks of every differentiable op, layer and block in
/// double precision. One outcome per (case, seed).
std::vector<Outcome> gradient_suite(std::size_t seeds = 5, double tolerance = 1e-4);

/// Shapes, stride policy, logits and gradient coverage for every preset and
/// fusion formula.
std::vector<Outcome> shape_topology_suite();

/// AdamW, clipping, schedule, weight-decay coupling and EMA against
/// independent recurrences, plus the same properties read back from a short
/// training run's metrics.csv.
std::vector<Outcome> optimizer_suite(const std::filesystem::path& scratch_dir);

/// Record counts, record size, label range and byte round-trip of the six
/// CIFAR-10 batch files in dir.
std::vector<Outcome> data_integrity_suite(const std::filesystem::path& dir);

/// Three-point parameter reconstruction.
Outcome reconcile_outcome();

// Helpers for fast training tests.

/// A model small enough to train for a few steps in well under a second.
ModelConfig tiny_model_config();
/// n random 3x32x32 images with labels cycling through 0..9.
data::DatasetSplit synthetic_split(std::size_t n, std::uint64_t seed, const std::string& role);
data::ChannelStats unit_stats();

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace yynet::testing
