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

#include "pmp/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pmp/errors.hpp"

namespace pmp {

void Image::validate() const {
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0) {
    throw DimensionError("image must be H x W with H, W positive multiples of "
                         "4, got " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  if (rgb.size() != height * width * 3) {
    throw DimensionError("image buffer size does not match H x W x 3");
  }
  for (double v : rgb) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DimensionError("image value outside [0, 1]");
    }
  }
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

Mask mask_or(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("mask_or: mask sizes differ");
  }
  Mask out(a.height, a.width);
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    out.bits[i] = (a.bits[i] | b.bits[i]) ? 1 : 0;
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                   text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::vector<std::uint8_t> netpbm_bytes(const char* magic, std::size_t h,
                                       std::size_t w,
                                       std::span<const std::uint8_t> payload) {
  const std::string header = std::string(magic) + "\n" + std::to_string(w) +
                             " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  return bytes;
}

// Parses "<magic> <w> <h> <maxval>" followed by one whitespace byte.
std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path,
                                      const std::string& magic,
                                      std::size_t channels, std::size_t* h,
                                      std::size_t* w) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto next_field = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string f;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) f += bytes[pos++];
    return f;
  };
  if (next_field() != magic) throw IoError(path.string() + ": expected " + magic);
  try {
    *w = std::stoul(next_field());
    *h = std::stoul(next_field());
    if (std::stoul(next_field()) != 255) {
      throw IoError(path.string() + ": only maxval 255 is supported");
    }
  } catch (const std::logic_error&) {
    throw IoError(path.string() + ": malformed header");
  }
  ++pos;
  const std::size_t need = *h * *w * channels;
  if (bytes.size() < pos + need) throw IoError(path.string() + ": truncated");
  return std::vector<std::uint8_t>(bytes.begin() + pos, bytes.begin() + pos + need);
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> payload(image.rgb.size());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    payload[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(image.rgb[i], 0.0, 1.0) * 255.0));
  }
  write_file_bytes(path, netpbm_bytes("P6", image.height, image.width, payload));
}

Image read_ppm(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto payload = read_netpbm(path, "P6", 3, &h, &w);
  Image image(h, w);
  for (std::size_t i = 0; i < payload.size(); ++i) image.rgb[i] = payload[i] / 255.0;
  return image;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> payload(mask.bits.size());
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = mask.bits[i] ? 255 : 0;
  write_file_bytes(path, netpbm_bytes("P5", mask.height, mask.width, payload));
}

Mask read_pgm(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto payload = read_netpbm(path, "P5", 1, &h, &w);
  Mask mask(h, w);
  for (std::size_t i = 0; i < payload.size(); ++i) mask.bits[i] = payload[i] >= 128;
  return mask;
}

void write_pgm_levels(const std::filesystem::path& path, std::size_t height,
                      std::size_t width, std::span<const std::uint8_t> levels) {
  write_file_bytes(path, netpbm_bytes("P5", height, width, levels));
}

std::vector<std::uint8_t> read_pgm_levels(const std::filesystem::path& path,
                                          std::size_t* height,
                                          std::size_t* width) {
  return read_netpbm(path, "P5", 1, height, width);
}

}  // namespace pmp
