#include "yynet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "yynet/errors.hpp"

namespace yynet {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "YYNET-CHECKPOINT 1";

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

std::string dims_string(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.rank(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError("checkpoint: bad tensor dims '" + text + "'");
    }
    dims.push_back(std::stoull(part));
    if (dims.back() == 0) throw FormatError("checkpoint: zero tensor dim in '" + text + "'");
  }
  if (dims.empty()) throw FormatError("checkpoint: empty tensor dims");
  return Shape(std::move(dims));
}

json state_json(const TrainState& s) {
  return json{{"epochs_completed", s.epochs_completed}, {"global_step", s.global_step},
              {"current_wd", s.current_wd},             {"adam_step", s.adam_step},
              {"ema_active", s.ema_active},             {"ema_updates", s.ema_updates},
              {"last_test_accuracy", s.last_test_accuracy}, {"wall_time_s", s.wall_time_s}};
}

TrainState parse_state(const std::string& text) {
  try {
    const json j = json::parse(text);
    TrainState s;
    s.epochs_completed = j.at("epochs_completed").get<std::size_t>();
    s.global_step = j.at("global_step").get<std::uint64_t>();
    s.current_wd = j.at("current_wd").get<double>();
    s.adam_step = j.at("adam_step").get<std::uint64_t>();
    s.ema_active = j.at("ema_active").get<bool>();
    s.ema_updates = j.at("ema_updates").get<std::uint64_t>();
    s.last_test_accuracy = j.at("last_test_accuracy").get<double>();
    s.wall_time_s = j.at("wall_time_s").get<double>();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad state record: ") + e.what());
  }
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream head;
  head << kMagic << '\n';
  head << "config " << to_json(ckpt.config) << '\n';
  head << "state " << state_json(ckpt.state).dump() << '\n';
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.name.find_first_of(" \n") != std::string::npos) throw FormatError("tensor name with whitespace: " + t.name);
    if (t.shape.numel() != t.values.size()) throw ShapeError("checkpoint tensor " + t.name + " size mismatch");
    const std::size_t nbytes = t.values.size() * sizeof(float);
    head << "tensor " << t.name << " f32 " << dims_string(t.shape) << ' ' << offset << ' ' << nbytes << '\n';
    offset += nbytes;
  }
  head << "end " << offset << '\n';
  std::string out = head.str();
  const std::size_t start = out.size();
  out.resize(start + offset);
  std::size_t pos = start;
  for (const auto& t : ckpt.tensors) {
    std::memcpy(out.data() + pos, t.values.data(), t.values.size() * sizeof(float));
    pos += t.values.size() * sizeof(float);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("checkpoint: truncated manifest");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) throw FormatError("checkpoint: missing magic header");

  Checkpoint ckpt;
  std::string line = next_line();
  if (line.rfind("config ", 0) != 0) throw FormatError("checkpoint: expected config record");
  try {
    ckpt.config = parse_run_config(line.substr(7));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad config record: ") + e.what());
  }
  line = next_line();
  if (line.rfind("state ", 0) != 0) throw FormatError("checkpoint: expected state record");
  ckpt.state = parse_state(line.substr(6));

  struct Entry {
    std::size_t offset, nbytes;
  };
  std::vector<Entry> entries;
  std::size_t payload = 0;
  for (;;) {
    line = next_line();
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "end") {
      if (!(ls >> payload)) throw FormatError("checkpoint: bad end record");
      break;
    }
    if (kind != "tensor") throw FormatError("checkpoint: unexpected record '" + kind + "'");
    std::string name, dtype, dims;
    Entry e{};
    if (!(ls >> name >> dtype >> dims >> e.offset >> e.nbytes)) throw FormatError("checkpoint: bad tensor record");
    if (dtype != "f32") throw FormatError("checkpoint: unsupported dtype " + dtype);
    CheckpointTensor t;
    t.name = name;
    t.shape = parse_dims(dims);
    if (t.shape.numel() * sizeof(float) != e.nbytes) throw FormatError("checkpoint: size mismatch for " + name);
    ckpt.tensors.push_back(std::move(t));
    entries.push_back(e);
  }
  if (bytes.size() - pos != payload) {
    throw FormatError("checkpoint: payload holds " + std::to_string(bytes.size() - pos) + " bytes, manifest says " +
                      std::to_string(payload));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.offset > payload || e.nbytes > payload - e.offset) throw FormatError("checkpoint: tensor outside payload");
    auto& values = ckpt.tensors[i].values;
    values.resize(e.nbytes / sizeof(float));
    std::memcpy(values.data(), bytes.data() + pos + e.offset, e.nbytes);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace yynet
