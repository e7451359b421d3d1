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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pmp/params.hpp"
#include "pmp/tensor.hpp"

namespace pmp {

// Binary tensor archive:
//   "PMPC" | u32 version | u32 count
//   per tensor: u16 name length | name bytes | u8 rank | u32 extents | f64 values
//   u64 FNV-1a of every preceding byte
// All integers and floats are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store);
// ChecksumError when the trailer disagrees; IoError on truncated or
// malformed content.
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

// Copies tensors into an existing store. ConfigError when a name is missing
// on either side or a shape differs.
void restore(ParamStore& store, std::span<const NamedTensor> tensors);
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);

}  // namespace pmp
