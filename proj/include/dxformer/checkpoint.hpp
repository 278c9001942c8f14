// Checkpoint layout (all integers little-endian):
//   magic "DXFORMER" | u32 version | u64 len | config JSON (len bytes)
//   | u64 vocabulary hash | u64 parameter count
//   | per parameter: u64 name len | name | u64 rows | u64 cols | rows*cols f64

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "dxformer/corpus.hpp"
#include "dxformer/error.hpp"
#include "dxformer/model.hpp"

namespace dxformer {

inline constexpr std::array<char, 8> kCheckpointMagic{'D', 'X', 'F', 'O', 'R', 'M', 'E', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Checkpoint {
  DxFormer model;
  std::uint64_t vocab_hash = 0;
  /// FNV-1a of the checkpoint bytes, reported by the service health endpoint.
  std::string content_hash;
};

namespace detail {

inline std::string fnv_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << h;
  return ss.str();
}

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_bytes(const std::string& s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& in) : in_(in) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw Error(ErrorCategory::checkpoint, "checkpoint is truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const DxFormer& model, std::uint64_t vocab_hash) {
  detail::ByteWriter w;
  w.put_bytes(std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()));
  w.put<std::uint32_t>(kCheckpointVersion);
  const auto config = model.config().to_json().dump();
  w.put<std::uint64_t>(config.size());
  w.put_bytes(config);
  w.put<std::uint64_t>(vocab_hash);
  const auto& params = model.parameters();
  w.put<std::uint64_t>(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    const auto& t = params[i];
    w.put<std::uint64_t>(name.size());
    w.put_bytes(name);
    w.put<std::uint64_t>(t.rows());
    w.put<std::uint64_t>(t.cols());
    for (double v : t.data()) w.put<double>(v);
  }
  return std::move(w.str());
}

inline void save_checkpoint(const DxFormer& model, std::uint64_t vocab_hash, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(model, vocab_hash));
}

inline Checkpoint parse_checkpoint(const std::string& bytes, std::optional<std::uint64_t> expected_vocab_hash) {
  detail::ByteReader r(bytes);
  const auto magic = r.get_bytes(kCheckpointMagic.size());
  if (magic != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
    throw Error(ErrorCategory::checkpoint, "not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error(ErrorCategory::checkpoint, "unsupported checkpoint version " + std::to_string(version));
  const auto config_len = r.get<std::uint64_t>();
  ModelConfig config;
  try {
    config = ModelConfig::from_json(json::parse(r.get_bytes(config_len)));
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::checkpoint, std::string("checkpoint config: ") + e.what());
  }
  Checkpoint ck;
  ck.vocab_hash = r.get<std::uint64_t>();
  if (expected_vocab_hash && *expected_vocab_hash != ck.vocab_hash)
    throw Error(ErrorCategory::checkpoint, "checkpoint was trained against a different vocabulary");
  ck.model = DxFormer(config, 0);
  auto& params = ck.model.parameters();
  const auto count = r.get<std::uint64_t>();
  if (count != params.size())
    throw Error(ErrorCategory::checkpoint, "checkpoint has " + std::to_string(count) + " parameters, expected " +
                                               std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = r.get_bytes(r.get<std::uint64_t>());
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    auto& t = params[i];
    if (name != params.name(i) || rows != t.rows() || cols != t.cols())
      throw Error(ErrorCategory::checkpoint, "parameter " + std::to_string(i) + " ('" + name +
                                                 "') does not match the model layout");
    for (auto& v : t.data()) v = r.get<double>();
  }
  if (!r.at_end()) throw Error(ErrorCategory::checkpoint, "trailing bytes after checkpoint");
  ck.content_hash = detail::fnv_hex(bytes);
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_vocab_hash = std::nullopt) {
  return parse_checkpoint(detail::read_file(path), expected_vocab_hash);
}

}  // namespace dxformer
