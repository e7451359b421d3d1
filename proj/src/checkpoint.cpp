// Copyright 2026 The PMP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pmp/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>

#include "pmp/errors.hpp"
#include "pmp/image.hpp"

namespace pmp {

namespace {

constexpr std::uint8_t kMagic[4] = {'P', 'M', 'P', 'C'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw IoError("checkpoint is truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void append(Writer& w, const std::string& name, const Tensor& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ContractError("checkpoint tensor name too long: " + name.substr(0, 32));
  }
  if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
    throw ContractError("checkpoint tensor rank too large: " + name);
  }
  w.put(static_cast<std::uint16_t>(name.size()));
  w.put_bytes(name.data(), name.size());
  w.put(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) {
      throw ContractError("checkpoint extent too large: " + name);
    }
    w.put(static_cast<std::uint32_t>(e));
  }
  for (double v : t.data()) w.put(std::bit_cast<std::uint64_t>(v));
}

std::vector<std::uint8_t> finish(Writer& w) {
  w.put(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

void header(Writer& w, std::size_t count) {
  w.put_bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(count));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors) {
  Writer w;
  header(w, tensors.size());
  for (const NamedTensor& t : tensors) append(w, t.name, t.value);
  return finish(w);
}

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store) {
  Writer w;
  header(w, store.names().size());
  for (const std::string& name : store.names()) append(w, name, store.get(name));
  return finish(w);
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 4 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("not a checkpoint file");
  }
  const auto body = bytes.first(bytes.size() - 8);
  Reader trailer(bytes.last(8));
  if (trailer.get<std::uint64_t>() != fnv1a64(body)) {
    throw ChecksumError("checkpoint checksum mismatch");
  }
  Reader r(body.subspan(4));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string(r.get<std::uint16_t>());
    Shape shape(r.get<std::uint8_t>());
    std::size_t n = 1;
    for (auto& e : shape) {
      e = r.get<std::uint32_t>();
      n *= e;
    }
    if (n > r.remaining() / 8) throw IoError("checkpoint is truncated");
    std::vector<double> values(n);
    for (double& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    t.value = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw IoError("trailing bytes in checkpoint");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  write_file_bytes(path, encode_checkpoint(store));
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

void restore(ParamStore& store, std::span<const NamedTensor> tensors) {
  if (tensors.size() != store.names().size()) {
    throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) +
                      " tensors, model expects " + std::to_string(store.names().size()));
  }
  for (const NamedTensor& t : tensors) {
    if (!store.contains(t.name)) throw ConfigError("checkpoint tensor not in model: " + t.name);
    Tensor& dst = store.get(t.name);
    if (dst.shape() != t.value.shape()) {
      throw ConfigError("checkpoint tensor has the wrong shape: " + t.name);
    }
    std::copy(t.value.data().begin(), t.value.data().end(), dst.data().begin());
  }
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  const auto tensors = read_checkpoint(path);
  restore(store, tensors);
}

}  // namespace pmp
