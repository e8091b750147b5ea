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
#include "eclip/eclt.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "eclip/errors.hpp"

namespace eclip::eclt {
namespace {

constexpr char kMagic[4] = {'E', 'C', 'L', 'T'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

std::vector<std::uint8_t> header(const Shape& dims, std::size_t payload_bytes) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 8 * dims.size() + payload_bytes);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (std::size_t d : dims) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  return out;
}

// Parses the header; returns payload offset and fills dims.
std::size_t parse_header(const std::vector<std::uint8_t>& bytes, Shape& dims) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw IntegrityError("ECLT: bad magic or truncated header");
  const std::uint32_t rank = get_le<std::uint32_t>(bytes.data() + 4);
  if (bytes.size() < 8 + 8ull * rank) throw IntegrityError("ECLT: truncated extents");
  dims.clear();
  for (std::uint32_t i = 0; i < rank; ++i) dims.push_back(get_le<std::uint64_t>(bytes.data() + 8 + 8 * i));
  return 8 + 8ull * rank;
}

}  // namespace

std::vector<std::uint8_t> encode(const Tensor& t, Payload payload) {
  if (payload == Payload::kU32) throw ContractError("ECLT: use encode_u32 for integer payloads");
  const std::size_t width = payload == Payload::kF32 ? 4 : 8;
  auto out = header(t.dims(), t.size() * width);
  for (double v : t.data()) {
    if (payload == Payload::kF32)
      put_le<float>(out, static_cast<float>(v));
    else
      put_le<double>(out, v);
  }
  return out;
}

std::vector<std::uint8_t> encode_u32(const U32Tensor& t) {
  if (t.values.size() != shape_numel(t.dims)) throw ShapeError("ECLT: u32 payload length mismatch");
  auto out = header(t.dims, t.values.size() * 4);
  for (std::uint32_t v : t.values) put_le<std::uint32_t>(out, v);
  return out;
}

Tensor decode_float(const std::vector<std::uint8_t>& bytes, Payload* detected) {
  Shape dims;
  const std::size_t off = parse_header(bytes, dims);
  const std::size_t n = shape_numel(dims);
  const std::size_t payload = bytes.size() - off;
  std::vector<double> data(n);
  if (payload == 4 * n) {
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le<float>(bytes.data() + off + 4 * i);
    if (detected) *detected = Payload::kF32;
  } else if (payload == 8 * n) {
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le<double>(bytes.data() + off + 8 * i);
    if (detected) *detected = Payload::kF64;
  } else {
    throw IntegrityError("ECLT: payload of " + std::to_string(payload) + " bytes does not fit extents " +
                         shape_str(dims));
  }
  return Tensor(std::move(dims), std::move(data));
}

U32Tensor decode_u32(const std::vector<std::uint8_t>& bytes) {
  U32Tensor t;
  const std::size_t off = parse_header(bytes, t.dims);
  const std::size_t n = shape_numel(t.dims);
  if (bytes.size() - off != 4 * n)
    throw IntegrityError("ECLT: u32 payload length does not fit extents " + shape_str(t.dims));
  t.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.values[i] = get_le<std::uint32_t>(bytes.data() + off + 4 * i);
  return t;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write(const std::filesystem::path& path, const Tensor& t, Payload payload) {
  write_bytes(path, encode(t, payload));
}

void write_u32(const std::filesystem::path& path, const U32Tensor& t) { write_bytes(path, encode_u32(t)); }

Tensor read_float(const std::filesystem::path& path, Payload* detected) {
  try {
    return decode_float(read_bytes(path), detected);
  } catch (const IntegrityError& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
}

U32Tensor read_u32(const std::filesystem::path& path) {
  try {
    return decode_u32(read_bytes(path));
  } catch (const IntegrityError& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
}

}  // namespace eclip::eclt
