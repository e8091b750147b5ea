// Copyright 2026-present the eclip project
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
#include <string>
#include <vector>

#include "eclip/tensor.hpp"

// ECLT tensor container: magic "ECLT", little-endian u32 rank, rank
// little-endian u64 extents, then a row-major little-endian payload. The
// canonical payload is f32. Two variants share the header: u32 (token ids,
// labels) and f64 (checkpoints, where resume must be bit-exact). Float
// readers tell f32 from f64 by payload length.
namespace eclip::eclt {

enum class Payload { kF32, kF64, kU32 };

struct U32Tensor {
  Shape dims;
  std::vector<std::uint32_t> values;
};

std::vector<std::uint8_t> encode(const Tensor& t, Payload payload);
std::vector<std::uint8_t> encode_u32(const U32Tensor& t);

// IntegrityError on bad magic, truncation or trailing bytes.
Tensor decode_float(const std::vector<std::uint8_t>& bytes, Payload* detected = nullptr);
U32Tensor decode_u32(const std::vector<std::uint8_t>& bytes);

// Writes go through a temporary file and a rename. IoError names the path.
void write(const std::filesystem::path& path, const Tensor& t, Payload payload = Payload::kF32);
void write_u32(const std::filesystem::path& path, const U32Tensor& t);
Tensor read_float(const std::filesystem::path& path, Payload* detected = nullptr);
U32Tensor read_u32(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace eclip::eclt
