#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "spikekit/errors.hpp"
#include "spikekit/tensor.hpp"

namespace spikekit {

/// Named-tensor container with string metadata. Layout:
///   magic "SKCP" | u32 version | meta table | tensor table | payload
/// Tensor table entries hold (name, dtype tag, rank, dims, byte offset into
/// the payload); payloads are little-endian float32.
struct TensorContainer {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::string> meta;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

constexpr char kContainerMagic[4] = {'S', 'K', 'C', 'P'};
constexpr uint32_t kContainerVersion = 1;

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void write_str(std::ostream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct ByteReader {
  const std::vector<char>& bytes;
  size_t pos = 0;
  std::string path;

  void need(size_t n) const {
    if (pos + n > bytes.size()) {
      throw CheckpointError("truncated container '" + path + "'");
    }
  }
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str() {
    const uint32_t n = pod<uint32_t>();
    need(n);
    std::string s(bytes.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_container(const std::string& path, const TensorContainer& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write container '" + path + "'");
  out.write(detail::kContainerMagic, 4);
  detail::write_pod<uint32_t>(out, detail::kContainerVersion);
  detail::write_pod<uint32_t>(out, static_cast<uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    detail::write_str(out, k);
    detail::write_str(out, v);
  }
  detail::write_pod<uint32_t>(out, static_cast<uint32_t>(c.tensors.size()));
  uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    detail::write_str(out, name);
    detail::write_pod<uint8_t>(out, 0);  // dtype tag: float32
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) detail::write_pod<uint64_t>(out, static_cast<uint64_t>(d));
    detail::write_pod<uint64_t>(out, offset);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  for (const auto& [name, t] : c.tensors) {
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for container '" + path + "'");
}

inline TensorContainer load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r{bytes, 0, path};

  r.need(4);
  if (std::memcmp(bytes.data(), detail::kContainerMagic, 4) != 0) {
    throw CheckpointError("magic mismatch in container '" + path + "'");
  }
  r.pos = 4;
  const uint32_t version = r.pod<uint32_t>();
  if (version != detail::kContainerVersion) {
    throw CheckpointError("unsupported container version " + std::to_string(version) + " in '" +
                          path + "'");
  }

  TensorContainer c;
  const uint32_t n_meta = r.pod<uint32_t>();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }

  struct Entry {
    std::string name;
    Shape shape;
    uint64_t offset;
  };
  std::vector<Entry> entries;
  const uint32_t n_tensors = r.pod<uint32_t>();
  for (uint32_t i = 0; i < n_tensors; ++i) {
    Entry e;
    e.name = r.str();
    const uint8_t dtype = r.pod<uint8_t>();
    if (dtype != 0) {
      throw CheckpointError("unsupported dtype tag for tensor '" + e.name + "' in '" + path +
                            "'");
    }
    const uint32_t rank = r.pod<uint32_t>();
    for (uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(static_cast<int64_t>(r.pod<uint64_t>()));
    }
    e.offset = r.pod<uint64_t>();
    entries.push_back(std::move(e));
  }

  const size_t payload_base = r.pos;
  for (const Entry& e : entries) {
    const size_t count = static_cast<size_t>(shape_numel(e.shape));
    const size_t begin = payload_base + e.offset;
    if (begin + count * sizeof(float) > bytes.size()) {
      throw CheckpointError("truncated payload for tensor '" + e.name + "' in '" + path + "'");
    }
    std::vector<float> data(count);
    std::memcpy(data.data(), bytes.data() + begin, count * sizeof(float));
    c.tensors.emplace_back(e.name, Tensor::from_data(e.shape, std::move(data)));
  }
  return c;
}

}  // namespace spikekit
