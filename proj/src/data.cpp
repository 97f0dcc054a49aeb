#include "yynet/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "yynet/errors.hpp"

namespace yynet::data {

DatasetSplit DatasetSplit::head(std::size_t n) const {
  if (n == 0 || n >= size()) return *this;
  DatasetSplit out;
  out.role = role;
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  out.pixels.assign(pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(n * kImageBytes));
  return out;
}

std::vector<std::string> train_batch_files() {
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
          "data_batch_5.bin"};
}

std::string test_batch_file() { return "test_batch.bin"; }

DatasetSplit read_batch_file(const std::filesystem::path& path, const std::string& role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  if (bytes.empty() || bytes.size() % kRecordBytes != 0) {
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                      " is not a positive multiple of " + std::to_string(kRecordBytes));
  }
  const std::size_t n = bytes.size() / kRecordBytes;
  DatasetSplit split;
  split.role = role;
  split.labels.resize(n);
  split.pixels.resize(n * kImageBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kRecordBytes;
    if (rec[0] >= kNumClasses) {
      throw FormatError(path.string() + ": record " + std::to_string(i) + " has label " +
                        std::to_string(rec[0]));
    }
    split.labels[i] = rec[0];
    std::copy_n(rec + 1, kImageBytes, split.pixels.data() + i * kImageBytes);
  }
  return split;
}

namespace {
void append(DatasetSplit& dst, DatasetSplit&& src) {
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
  dst.pixels.insert(dst.pixels.end(), src.pixels.begin(), src.pixels.end());
}
}  // namespace

Cifar10 load_cifar10(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("data directory " + dir.string() + " does not exist");
  Cifar10 c;
  c.train.role = "train";
  c.test.role = "test";
  for (const auto& f : train_batch_files()) {
    auto part = read_batch_file(dir / f, "train");
    if (part.size() != kRecordsPerFile) {
      throw FormatError((dir / f).string() + " holds " + std::to_string(part.size()) + " records, expected " +
                        std::to_string(kRecordsPerFile));
    }
    append(c.train, std::move(part));
  }
  c.test = read_batch_file(dir / test_batch_file(), "test");
  if (c.test.size() != kRecordsPerFile) {
    throw FormatError("test split holds " + std::to_string(c.test.size()) + " records, expected 10000");
  }
  return c;
}

std::vector<std::uint8_t> encode_records(const DatasetSplit& split) {
  std::vector<std::uint8_t> out(split.size() * kRecordBytes);
  for (std::size_t i = 0; i < split.size(); ++i) {
    out[i * kRecordBytes] = static_cast<std::uint8_t>(split.labels[i]);
    auto img = split.image(i);
    std::copy(img.begin(), img.end(), out.begin() + static_cast<std::ptrdiff_t>(i * kRecordBytes + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

ChannelStats compute_channel_stats(const DatasetSplit& split) {
  if (split.size() == 0) throw DataError("cannot compute statistics of an empty split");
  ChannelStats s;
  const double count = static_cast<double>(split.size() * kPlane);
  for (std::size_t c = 0; c < kChannels; ++c) {
    double sum = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
      const std::uint8_t* p = split.pixels.data() + i * kImageBytes + c * kPlane;
      std::uint64_t acc = 0;
      for (std::size_t j = 0; j < kPlane; ++j) acc += p[j];
      sum += static_cast<double>(acc);
    }
    const double mean = sum / 255.0 / count;
    double ss = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
      const std::uint8_t* p = split.pixels.data() + i * kImageBytes + c * kPlane;
      for (std::size_t j = 0; j < kPlane; ++j) {
        const double d = p[j] / 255.0 - mean;
        ss += d * d;
      }
    }
    s.mean[c] = mean;
    s.std[c] = std::sqrt(ss / count);
  }
  return s;
}

void save_stats(const std::filesystem::path& path, const ChannelStats& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  out << s.mean[0] << ' ' << s.mean[1] << ' ' << s.mean[2] << '\n';
  out << s.std[0] << ' ' << s.std[1] << ' ' << s.std[2] << '\n';
  if (!out) throw IoError("error writing " + path.string());
}

ChannelStats load_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  ChannelStats s;
  for (auto& v : s.mean) in >> v;
  for (auto& v : s.std) in >> v;
  if (!in) throw FormatError(path.string() + ": expected six numbers");
  for (auto v : s.std) {
    if (!(v > 0)) throw FormatError(path.string() + ": standard deviations must be positive");
  }
  return s;
}

ChannelStats load_or_compute_stats(const std::filesystem::path& cache, const DatasetSplit& train) {
  if (std::filesystem::exists(cache)) return load_stats(cache);
  ChannelStats s = compute_channel_stats(train);
  try {
    save_stats(cache, s);
  } catch (const IoError&) {
    // Read-only data directories still work, just without the cache.
  }
  return s;
}

void normalize_image(std::span<const std::uint8_t> bytes, const ChannelStats& stats, float* out) {
  for (std::size_t c = 0; c < kChannels; ++c) {
    const double inv = 1.0 / stats.std[c];
    for (std::size_t j = 0; j < kPlane; ++j) {
      out[c * kPlane + j] = static_cast<float>((bytes[c * kPlane + j] / 255.0 - stats.mean[c]) * inv);
    }
  }
}

// ---------------------------------------------------------------------------
// Augmentation

void flip_horizontal(float* img, std::size_t channels, std::size_t h, std::size_t w) {
  for (std::size_t r = 0; r < channels * h; ++r) std::reverse(img + r * w, img + (r + 1) * w);
}

namespace {
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * (m - 1) - i;
  return static_cast<std::size_t>(i);
}
}  // namespace

void crop_reflect(const float* in, float* out, std::size_t channels, std::size_t h, std::size_t w,
                  std::size_t pad, std::size_t dy, std::size_t dx) {
  if (pad >= h || pad >= w) throw ShapeError("reflect padding must be smaller than the image");
  if (dy > 2 * pad || dx > 2 * pad) throw ShapeError("crop offset outside the padded image");
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad), h);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx =
            reflect(static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad), w);
        out[(c * h + y) * w + x] = in[(c * h + sy) * w + sx];
      }
    }
  }
}

AugmentParams sample_augment(Rng& rng, std::size_t pad) {
  AugmentParams p;
  std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
  p.flip = std::bernoulli_distribution(0.5)(rng);
  p.dy = off(rng);
  p.dx = off(rng);
  return p;
}

void augment_image(const float* in, float* out, const AugmentParams& p, std::size_t pad) {
  crop_reflect(in, out, kChannels, kImageSide, kImageSide, pad, p.dy, p.dx);
  if (p.flip) flip_horizontal(out, kChannels, kImageSide, kImageSide);
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch, bool shuffle) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (!shuffle || n < 2) return order;
  Rng rng = derive_rng({seed, epoch, 0x5348554646ULL});
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  return order;
}

std::size_t num_batches(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  return (n + batch_size - 1) / batch_size;
}

LabeledBatch make_batch(const DatasetSplit& split, const ChannelStats& stats,
                        std::span<const std::size_t> order, std::size_t b, const BatchOptions& opt) {
  const std::size_t begin = b * opt.batch_size;
  if (begin >= order.size()) throw StateError("batch index past the end of the epoch");
  const std::size_t n = std::min(opt.batch_size, order.size() - begin);
  LabeledBatch batch;
  batch.images = Tensor<float>(Shape{n, kChannels, kImageSide, kImageSide});
  batch.labels.resize(n);
  float* dst = batch.images.mutable_data().data();
  std::vector<float> scratch(kImageBytes);
  Rng rng = derive_rng({opt.seed, opt.epoch, b, 0x4155474dULL});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = order[begin + i];
    batch.labels[i] = split.labels[r];
    if (opt.augment) {
      normalize_image(split.image(r), stats, scratch.data());
      augment_image(scratch.data(), dst + i * kImageBytes, sample_augment(rng));
    } else {
      normalize_image(split.image(r), stats, dst + i * kImageBytes);
    }
  }
  return batch;
}

BatchStream::BatchStream(const DatasetSplit& split, const ChannelStats& stats, BatchOptions opt,
                         std::size_t depth)
    : split_(split), stats_(stats), opt_(opt), depth_(depth) {
  order_ = epoch_order(split.size(), opt.seed, opt.epoch, opt.shuffle);
  total_ = num_batches(split.size(), opt.batch_size);
  if (depth_ > 0 && total_ > 0) worker_ = std::thread([this] { produce(); });
}

BatchStream::~BatchStream() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void BatchStream::produce() {
  for (std::size_t b = 0; b < total_; ++b) {
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stop_ || queue_.size() < depth_; });
      if (stop_) return;
    }
    try {
      LabeledBatch batch = make_batch(split_, stats_, order_, b, opt_);
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(batch));
    } catch (...) {
      std::lock_guard lock(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
      return;
    }
    cv_.notify_all();
  }
}

std::optional<LabeledBatch> BatchStream::next() {
  if (consumed_ >= total_) return std::nullopt;
  if (depth_ == 0) return make_batch(split_, stats_, order_, consumed_++, opt_);
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return !queue_.empty() || error_; });
  if (queue_.empty() && error_) std::rethrow_exception(error_);
  LabeledBatch batch = std::move(queue_.front());
  queue_.pop_front();
  ++consumed_;
  lock.unlock();
  cv_.notify_all();
  return batch;
}

}  // namespace yynet::data
