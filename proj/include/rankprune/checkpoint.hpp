#pragma once

// Binary training checkpoints.
//
// Layout (all integers little-endian):
//   "RKPRCKPT"  u32 version  u64 step  u64 config_hash  u32 record_count
//   record*:    u32 name_len  name  u8 dtype  u32 ndim  u64 dims[ndim]  u64 nbytes  bytes
//   u64 FNV-1a of everything before it
//
// dtype: 0 = f64, 1 = u8, 2 = u64, 3 = utf-8 text.

#include "rankprune/config.hpp"
#include "rankprune/errors.hpp"
#include "rankprune/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace rankprune {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "RKPRCKPT";

enum class DType : std::uint8_t { f64 = 0, u8 = 1, u64 = 2, text = 3 };

struct Record {
  DType dtype = DType::f64;
  Shape shape;
  std::vector<unsigned char> bytes;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  ExperimentConfig config;
  TrainerState state;
};

namespace detail {

class ByteWriter {
public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i)
      buf_.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xFF));
  }
  [[nodiscard]] const std::vector<unsigned char>& bytes() const noexcept { return buf_; }

private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
public:
  ByteReader(const std::vector<unsigned char>& b, std::size_t end) : b_(b), end_(end) {}

  template <class T>
  T le() {
    need(sizeof(T), "integer");
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  std::vector<unsigned char> take(std::uint64_t n) {
    need(n, "payload");
    std::vector<unsigned char> out(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                   b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += static_cast<std::size_t>(n);
    return out;
  }
  [[nodiscard]] std::size_t pos() const noexcept { return pos_; }

private:
  void need(std::uint64_t n, const char* what) const {
    if (n > end_ - pos_)
      throw FormatError("checkpoint: truncated " + std::string(what) + " at byte " + std::to_string(pos_));
  }
  const std::vector<unsigned char>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a_bytes(const unsigned char* p, std::size_t n) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(p), n));
}

inline Record f64_record(const Shape& shape, std::span<const double> v) {
  Record r{DType::f64, shape, {}};
  ByteWriter w;
  for (double x : v)
    w.le(std::bit_cast<std::uint64_t>(x));
  r.bytes = w.bytes();
  return r;
}

inline Record u8_record(const Shape& shape, std::span<const std::uint8_t> v) {
  return {DType::u8, shape, {v.begin(), v.end()}};
}

inline Record u64_record(std::span<const std::uint64_t> v) {
  ByteWriter w;
  for (auto x : v)
    w.le(x);
  return {DType::u64, {v.size()}, w.bytes()};
}

inline Record text_record(const std::string& s) { return {DType::text, {s.size()}, {s.begin(), s.end()}}; }

inline std::size_t element_size(DType d) {
  switch (d) {
  case DType::f64:
  case DType::u64:
    return 8;
  case DType::u8:
  case DType::text:
    return 1;
  }
  throw FormatError("checkpoint: unknown dtype " + std::to_string(static_cast<int>(d)));
}

inline const Record& require(const std::map<std::string, Record>& recs, const std::string& name, DType dtype,
                             const Shape& shape) {
  const auto it = recs.find(name);
  if (it == recs.end())
    throw FormatError("checkpoint: missing record '" + name + "'");
  if (it->second.dtype != dtype)
    throw FormatError("checkpoint: record '" + name + "' has the wrong dtype");
  if (!shape.empty() && it->second.shape != shape)
    throw FormatError("checkpoint: record '" + name + "' has shape " + shape_string(it->second.shape) +
                      ", expected " + shape_string(shape));
  return it->second;
}

inline std::vector<double> as_f64(const Record& r) {
  std::vector<double> out(r.bytes.size() / 8);
  ByteReader rd(r.bytes, r.bytes.size());
  for (double& x : out)
    x = std::bit_cast<double>(rd.le<std::uint64_t>());
  return out;
}

inline std::vector<std::uint64_t> as_u64(const Record& r) {
  std::vector<std::uint64_t> out(r.bytes.size() / 8);
  ByteReader rd(r.bytes, r.bytes.size());
  for (auto& x : out)
    x = rd.le<std::uint64_t>();
  return out;
}

// Metrics rows as an N x 8 f64 table; the last column flags a present eval accuracy.
inline Record metrics_record(const std::vector<MetricsRecord>& m) {
  std::vector<double> v;
  for (const auto& r : m) {
    v.insert(v.end(), {static_cast<double>(r.step), r.sparsity, r.task_loss, r.rank_loss, r.avg_delta_rank,
                       r.train_accuracy, r.eval_accuracy.value_or(0.0), r.eval_accuracy ? 1.0 : 0.0});
  }
  return f64_record({m.size(), 8}, v);
}

inline std::vector<MetricsRecord> metrics_from(const Record& r) {
  if (r.shape.size() != 2 || r.shape[1] != 8)
    throw FormatError("checkpoint: metrics record must be N x 8");
  const auto v = as_f64(r);
  std::vector<MetricsRecord> out(r.shape[0]);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = v.data() + 8 * i;
    out[i].step = static_cast<std::size_t>(row[0]);
    out[i].sparsity = row[1];
    out[i].task_loss = row[2];
    out[i].rank_loss = row[3];
    out[i].avg_delta_rank = row[4];
    out[i].train_accuracy = row[5];
    if (row[7] != 0.0)
      out[i].eval_accuracy = row[6];
  }
  return out;
}

} // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const ExperimentConfig& config, const TrainerState& s) {
  using namespace detail;
  std::vector<std::pair<std::string, Record>> recs;
  recs.emplace_back("config", text_record(serialize_config(config)));
  const Network& net = s.net;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& l = net.layer(i);
    const std::string p = "layer" + std::to_string(i) + ".";
    recs.emplace_back(p + "weight", f64_record(l.param.weight.shape, l.param.weight.data));
    recs.emplace_back(p + "mask", u8_record(l.param.mask.shape, l.param.mask.bits));
    recs.emplace_back(p + "bias", f64_record({l.bias.size()}, l.bias));
    recs.emplace_back(p + "momentum.weight", f64_record(s.opt.weight[i].shape, s.opt.weight[i].data));
    recs.emplace_back(p + "momentum.bias", f64_record({s.opt.bias[i].size()}, s.opt.bias[i]));
  }
  recs.emplace_back("metrics", metrics_record(s.metrics));
  const std::uint64_t skips = s.rank_skips;
  recs.emplace_back("rank_skips", u64_record({&skips, 1}));

  ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint64_t>(s.step));
  w.le(config_hash(config));
  w.le(static_cast<std::uint32_t>(recs.size()));
  for (const auto& [name, r] : recs) {
    w.le(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.le(static_cast<std::uint8_t>(r.dtype));
    w.le(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape)
      w.le(static_cast<std::uint64_t>(d));
    w.le(static_cast<std::uint64_t>(r.bytes.size()));
    w.raw(r.bytes.data(), r.bytes.size());
  }
  std::vector<unsigned char> out = w.bytes();
  ByteWriter tail;
  tail.le(fnv1a_bytes(out.data(), out.size()));
  out.insert(out.end(), tail.bytes().begin(), tail.bytes().end());
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  using namespace detail;
  if (bytes.size() < kCheckpointMagic.size() + 4 ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw FormatError("checkpoint: bad magic (not a checkpoint file)");
  ByteReader head(bytes, bytes.size());
  head.take(kCheckpointMagic.size());
  const auto version = head.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) +
                                 " is not supported (this build reads version " +
                                 std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < 8 + 28)
    throw FormatError("checkpoint: truncated header");
  const std::size_t body = bytes.size() - 8;
  ByteReader trailer(bytes, bytes.size());
  trailer.take(body);
  if (trailer.le<std::uint64_t>() != fnv1a_bytes(bytes.data(), body))
    throw FormatError("checkpoint: checksum mismatch (file is corrupted)");

  ByteReader rd(bytes, body);
  rd.take(kCheckpointMagic.size() + 4);
  Checkpoint ck;
  ck.version = version;
  const auto step = rd.le<std::uint64_t>();
  ck.config_hash = rd.le<std::uint64_t>();
  const auto count = rd.le<std::uint32_t>();
  std::map<std::string, Record> recs;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = rd.le<std::uint32_t>();
    const auto nb = rd.take(nlen);
    std::string name(nb.begin(), nb.end());
    Record r;
    r.dtype = static_cast<DType>(rd.le<std::uint8_t>());
    const auto ndim = rd.le<std::uint32_t>();
    for (std::uint32_t d = 0; d < ndim; ++d)
      r.shape.push_back(static_cast<std::size_t>(rd.le<std::uint64_t>()));
    const auto nbytes = rd.le<std::uint64_t>();
    if (nbytes != shape_size(r.shape) * element_size(r.dtype))
      throw FormatError("checkpoint: record '" + name + "' size disagrees with its shape");
    r.bytes = rd.take(nbytes);
    recs.emplace(std::move(name), std::move(r));
  }
  if (rd.pos() != body)
    throw FormatError("checkpoint: trailing bytes after the last record");

  const Record& text = require(recs, "config", DType::text, {});
  try {
    ck.config = parse_config(std::string(text.bytes.begin(), text.bytes.end()));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: embedded config is invalid: ") + e.what());
  }
  if (config_hash(ck.config) != ck.config_hash)
    throw FormatError("checkpoint: config hash does not match the embedded config");

  Network net = build_network(ck.config);
  OptimizerState opt(net);
  for (std::size_t i = 0; i < net.size(); ++i) {
    Layer& l = net.layer_mut(i);
    const std::string p = "layer" + std::to_string(i) + ".";
    const Shape& ws = l.param.weight.shape;
    l.param.weight.data = as_f64(require(recs, p + "weight", DType::f64, ws));
    const Record& m = require(recs, p + "mask", DType::u8, ws);
    for (auto b : m.bytes)
      if (b > 1)
        throw FormatError("checkpoint: mask '" + p + "mask' holds a value other than 0 or 1");
    l.param.mask.bits.assign(m.bytes.begin(), m.bytes.end());
    l.bias = as_f64(require(recs, p + "bias", DType::f64, {l.bias.size()}));
    opt.weight[i].data = as_f64(require(recs, p + "momentum.weight", DType::f64, ws));
    opt.bias[i] = as_f64(require(recs, p + "momentum.bias", DType::f64, {l.bias.size()}));
  }
  if (recs.contains("layer" + std::to_string(net.size()) + ".weight"))
    throw FormatError("checkpoint: more layers than the embedded config describes");
  ck.state.net = std::move(net);
  ck.state.opt = std::move(opt);
  ck.state.step = static_cast<std::size_t>(step);
  ck.state.metrics = metrics_from(require(recs, "metrics", DType::f64, {}));
  ck.state.rank_skips = static_cast<std::size_t>(as_u64(require(recs, "rank_skips", DType::u64, {1}))[0]);
  return ck;
}

/// Writes atomically: the file appears complete or not at all.
inline void save_checkpoint(const std::string& path, const ExperimentConfig& config, const TrainerState& s) {
  const auto bytes = encode_checkpoint(config, s);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(detail::read_file(path));
  } catch (const FormatError& e) {
    if (dynamic_cast<const CheckpointVersionError*>(&e))
      throw CheckpointVersionError("'" + path + "': " + e.what());
    throw FormatError("'" + path + "': " + e.what());
  }
}

} // namespace rankprune
