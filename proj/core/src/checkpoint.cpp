#include "spanner/checkpoint.hpp"

#include "spanner/errors.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace spanner {
namespace {

constexpr char kMagic[8] = {'S', 'P', 'N', 'R', 'C', 'K', 'P', 'T'};

std::uint32_t checksum(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // crc32 takes a uInt length; feed large buffers in chunks.
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, std::size_t begin, std::size_t end)
      : data_(data), pos_(begin), end_(end) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) {
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * k);
    }
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  // Element count; each element takes at least one byte.
  std::uint64_t count() {
    const std::uint64_t n = u64();
    need(n);
    return n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::uint64_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint is truncated");
  }

  const std::string& data_;
  std::size_t pos_;
  std::size_t end_;
};

std::string shape(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

std::string serialize_checkpoint(const SpanNerModel& model, const TrainConfig& train) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u8(kCheckpointVersion);
  w.u64(model.seed());
  w.str(to_config_text(RunConfig{train, model.config()}));
  const auto tokens = model.vocab().entries();
  w.u64(tokens.size());
  for (const auto& t : tokens) w.str(t);
  w.u64(model.descriptions().size());
  for (const auto& d : model.descriptions()) {
    w.str(d.name);
    w.str(d.text);
  }
  const auto params = model.parameters();
  w.u64(params.size());
  for (const auto* p : params) {
    w.str(p->name);
    w.u8(p->frozen ? 1 : 0);
    w.u64(static_cast<std::uint64_t>(p->value.rows()));
    w.u64(static_cast<std::uint64_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) w.f64(p->value.data()[i]);
  }
  w.u32(checksum(w.buffer().data(), w.buffer().size()));
  return std::move(w.buffer());
}

void save_checkpoint(const SpanNerModel& model, const TrainConfig& train,
                     const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model, train);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

void copy_parameters(const SpanNerModel& source, SpanNerModel& target) {
  const auto from = source.parameters();
  const auto to = target.parameters();
  if (from.size() != to.size()) {
    throw CheckpointError("parameter count mismatch: " + std::to_string(from.size()) +
                          " vs " + std::to_string(to.size()));
  }
  for (std::size_t k = 0; k < from.size(); ++k) {
    if (from[k]->name != to[k]->name) {
      throw CheckpointError("parameter " + std::to_string(k) + " is '" + from[k]->name +
                            "', expected '" + to[k]->name + "'");
    }
    if (from[k]->value.rows() != to[k]->value.rows() ||
        from[k]->value.cols() != to[k]->value.cols()) {
      throw CheckpointError("shape mismatch for " + to[k]->name + ": " +
                            shape(from[k]->value.rows(), from[k]->value.cols()) +
                            " vs " + shape(to[k]->value.rows(), to[k]->value.cols()));
    }
  }
  for (std::size_t k = 0; k < from.size(); ++k) to[k]->value = from[k]->value;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t kHeader = sizeof kMagic + 1;
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  if (bytes.size() < kHeader + 4) throw CheckpointError("checkpoint is truncated");
  const auto version = static_cast<std::uint8_t>(bytes[sizeof kMagic]);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body_end = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int k = 0; k < 4; ++k) {
    stored |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[body_end + k]))
              << (8 * k);
  }
  if (stored != checksum(bytes.data(), body_end)) {
    throw CheckpointError("checkpoint checksum mismatch (corrupted or truncated file)");
  }

  Reader r(bytes, kHeader, body_end);
  const std::uint64_t seed = r.u64();
  RunConfig config;
  try {
    config = parse_run_config(r.str());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  std::vector<std::string> tokens(r.count());
  for (auto& t : tokens) t = r.str();
  std::vector<ClassDescription> descriptions(r.count());
  for (auto& d : descriptions) {
    d.name = r.str();
    d.text = r.str();
  }

  SpanNerModel model(Vocabulary(tokens), config.model, seed);
  auto params = model.parameters();
  const std::uint64_t count = r.u64();
  if (count != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(count) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  for (auto* p : params) {
    const std::string name = r.str();
    const bool frozen = r.u8() != 0;
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    if (name != p->name) {
      throw CheckpointError("tensor '" + name + "' found where '" + p->name + "' expected");
    }
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw CheckpointError("shape mismatch for " + name + ": stored " + shape(rows, cols) +
                            ", model " + shape(p->value.rows(), p->value.cols()));
    }
    if (frozen != p->frozen) throw CheckpointError("frozen flag mismatch for " + name);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = r.f64();
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  if (!descriptions.empty()) model.set_descriptions(std::move(descriptions));
  return Checkpoint{std::move(model), config.train};
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

}  // namespace spanner
