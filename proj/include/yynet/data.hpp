#pragma once

// CIFAR-10 binary distribution: parsing, normalization, augmentation and
// seeded batch iteration with an optional prefetch thread.

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "yynet/rng.hpp"
#include "yynet/tensor.hpp"

namespace yynet::data {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kPlane = kImageSide * kImageSide;
inline constexpr std::size_t kImageBytes = kChannels * kPlane;
inline constexpr std::size_t kRecordBytes = 1 + kImageBytes;
inline constexpr std::size_t kRecordsPerFile = 10000;
inline constexpr std::size_t kNumClasses = 10;

struct DatasetSplit {
  std::string role;                  // "train" or "test"
  std::vector<std::uint8_t> pixels;  // record i at [i*3072, (i+1)*3072), channel-planar
  std::vector<std::int32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * kImageBytes, kImageBytes};
  }
  /// First n records (or all if n is 0 or exceeds the size).
  DatasetSplit head(std::size_t n) const;
};

struct Cifar10 {
  DatasetSplit train;
  DatasetSplit test;
};

std::vector<std::string> train_batch_files();
std::string test_batch_file();

/// Parses one batch file. IoError when unreadable, FormatError when the length
/// is not a multiple of 3073 bytes or a label is outside [0, 10).
DatasetSplit read_batch_file(const std::filesystem::path& path, const std::string& role);
/// Loads all six batch files and checks the 50,000 / 10,000 record counts.
Cifar10 load_cifar10(const std::filesystem::path& dir);
/// Re-encodes records in the on-disk layout (label byte then pixels).
std::vector<std::uint8_t> encode_records(const DatasetSplit& split);

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

/// Per-channel mean and population std of pixel/255 over a split (two-pass).
ChannelStats compute_channel_stats(const DatasetSplit& split);
void save_stats(const std::filesystem::path& path, const ChannelStats& s);
ChannelStats load_stats(const std::filesystem::path& path);
/// Reads the cache when present, otherwise computes and writes it.
ChannelStats load_or_compute_stats(const std::filesystem::path& cache, const DatasetSplit& train);

/// out[c*1024 + p] = (bytes[c*1024 + p] / 255 - mean[c]) / std[c]
void normalize_image(std::span<const std::uint8_t> bytes, const ChannelStats& stats, float* out);

/// Mirror each row of a (C,H,W) image in place.
void flip_horizontal(float* img, std::size_t channels, std::size_t h, std::size_t w);
/// Crop an (h,w) window at offset (dy,dx) from the image reflect-padded by pad.
void crop_reflect(const float* in, float* out, std::size_t channels, std::size_t h, std::size_t w,
                  std::size_t pad, std::size_t dy, std::size_t dx);

struct AugmentParams {
  bool flip = false;
  std::size_t dy = 0, dx = 0;  // in [0, 2*pad]
};
AugmentParams sample_augment(Rng& rng, std::size_t pad = 4);
/// Flip + reflect-padded crop of one 3x32x32 image.
void augment_image(const float* in, float* out, const AugmentParams& p, std::size_t pad = 4);

/// Record order for one epoch; a seeded Fisher-Yates shuffle of 0..n-1
/// derived from (seed, epoch), or the identity when shuffle is false.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch, bool shuffle);

std::size_t num_batches(std::size_t n, std::size_t batch_size);

struct LabeledBatch {
  Tensor<float> images;  // (N,3,32,32)
  std::vector<std::int32_t> labels;
};

struct BatchOptions {
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  bool shuffle = true;
  bool augment = false;
};

/// Batch b of an epoch. Augmentation randomness is derived from (seed, epoch, b).
LabeledBatch make_batch(const DatasetSplit& split, const ChannelStats& stats,
                        std::span<const std::size_t> order, std::size_t b, const BatchOptions& opt);

/// Iterates the batches of one epoch. With depth > 0 a worker thread prepares
/// up to `depth` batches ahead; the sequence is identical either way.
class BatchStream {
 public:
  BatchStream(const DatasetSplit& split, const ChannelStats& stats, BatchOptions opt, std::size_t depth);
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  std::size_t size() const { return total_; }
  std::optional<LabeledBatch> next();

 private:
  void produce();

  const DatasetSplit& split_;
  ChannelStats stats_;
  BatchOptions opt_;
  std::vector<std::size_t> order_;
  std::size_t total_ = 0;
  std::size_t depth_ = 0;
  std::size_t consumed_ = 0;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<LabeledBatch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;
};

}  // namespace yynet::data
