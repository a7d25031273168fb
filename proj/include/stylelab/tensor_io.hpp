#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stylelab/tensor.hpp"

namespace stylelab::io {

/// On-disk tensor container. Layout, all little-endian:
///   bytes 0-3   magic "STLS" (0x53 0x54 0x4C 0x53)
///   bytes 4-5   format version, u16, currently 1
///   byte  6     element type: 0 = float32, 1 = float64, 2 = uint8
///   byte  7     number of dimensions, u8
///   then        ndim extents as u32
///   then        row-major payload
/// Round-trips are bit-exact; loading validates magic, version, element type
/// and payload length.
enum class StorageDtype : std::uint8_t { F32 = 0, F64 = 1, U8 = 2 };

std::size_t storage_dtype_size(StorageDtype dt);

struct Stls1File {
  StorageDtype dtype = StorageDtype::F32;
  std::vector<int64_t> shape;
  std::vector<std::byte> payload;

  int64_t numel() const;
};

void save_stls1(const std::string& path, const Stls1File& file);
Stls1File load_stls1(const std::string& path);

/// float32/float64 tensors.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

/// uint8 arrays (images, label maps).
void save_u8(const std::string& path, const std::vector<int64_t>& shape,
             const std::vector<std::uint8_t>& data);
std::pair<std::vector<int64_t>, std::vector<std::uint8_t>> load_u8(
    const std::string& path);

}  // namespace stylelab::io
