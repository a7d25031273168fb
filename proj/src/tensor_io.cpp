#include "stylelab/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace stylelab::io {

namespace {

constexpr unsigned char kMagic[4] = {0x53, 0x54, 0x4C, 0x53};  // "STLS"
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("tensor file " + path + ": " + why);
}

}  // namespace

std::size_t storage_dtype_size(StorageDtype dt) {
  switch (dt) {
    case StorageDtype::F32:
      return 4;
    case StorageDtype::F64:
      return 8;
    case StorageDtype::U8:
      return 1;
  }
  throw std::logic_error("storage_dtype_size: bad element type");
}

int64_t Stls1File::numel() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

void save_stls1(const std::string& path, const Stls1File& file) {
  if (file.shape.size() > 255)
    fail(path, "more than 255 dimensions");
  for (int64_t d : file.shape)
    if (d < 0 || d > std::numeric_limits<std::uint32_t>::max())
      fail(path, "extent " + std::to_string(d) + " not representable");
  const auto expect =
      static_cast<std::size_t>(file.numel()) * storage_dtype_size(file.dtype);
  if (file.payload.size() != expect)
    fail(path, "payload is " + std::to_string(file.payload.size()) +
                   " bytes, shape implies " + std::to_string(expect));

  std::string header;
  header.append(reinterpret_cast<const char*>(kMagic), 4);
  put_u16(header, kVersion);
  header.push_back(static_cast<char>(file.dtype));
  header.push_back(static_cast<char>(file.shape.size()));
  for (int64_t d : file.shape) put_u32(header, static_cast<std::uint32_t>(d));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(path, "cannot open for writing");
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(file.payload.data()),
           static_cast<std::streamsize>(file.payload.size()));
  if (!os) fail(path, "write failed");
}

Stls1File load_stls1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 8) fail(path, "truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(path, "bad magic");
  const std::uint16_t version = get_u16(bytes.data() + 4);
  if (version != kVersion)
    fail(path, "unsupported version " + std::to_string(version));
  const unsigned char dt = bytes[6];
  if (dt > 2) fail(path, "unknown element type " + std::to_string(dt));
  const unsigned char ndim = bytes[7];
  const std::size_t dims_end = 8 + std::size_t{4} * ndim;
  if (bytes.size() < dims_end) fail(path, "truncated dimension list");

  Stls1File file;
  file.dtype = static_cast<StorageDtype>(dt);
  file.shape.reserve(ndim);
  for (unsigned i = 0; i < ndim; ++i)
    file.shape.push_back(get_u32(bytes.data() + 8 + 4 * i));

  const auto expect =
      static_cast<std::size_t>(file.numel()) * storage_dtype_size(file.dtype);
  if (bytes.size() - dims_end != expect)
    fail(path, "payload is " + std::to_string(bytes.size() - dims_end) +
                   " bytes, header implies " + std::to_string(expect));
  file.payload.resize(expect);
  std::memcpy(file.payload.data(), bytes.data() + dims_end, expect);
  return file;
}

void save_tensor(const std::string& path, const Tensor& t) {
  if (!t.defined()) fail(path, "undefined tensor");
  Stls1File file;
  file.dtype =
      t.dtype() == Dtype::F32 ? StorageDtype::F32 : StorageDtype::F64;
  file.shape = t.shape();
  file.payload.assign(t.raw(), t.raw() + t.nbytes());
  save_stls1(path, file);
}

Tensor load_tensor(const std::string& path) {
  Stls1File file = load_stls1(path);
  if (file.dtype == StorageDtype::U8)
    fail(path, "holds uint8 data, expected float");
  Tensor t = Tensor::zeros(
      file.shape, file.dtype == StorageDtype::F32 ? Dtype::F32 : Dtype::F64);
  std::memcpy(const_cast<std::byte*>(t.raw()), file.payload.data(),
              file.payload.size());
  return t;
}

void save_u8(const std::string& path, const std::vector<int64_t>& shape,
             const std::vector<std::uint8_t>& data) {
  Stls1File file;
  file.dtype = StorageDtype::U8;
  file.shape = shape;
  file.payload.resize(data.size());
  std::memcpy(file.payload.data(), data.data(), data.size());
  save_stls1(path, file);
}

std::pair<std::vector<int64_t>, std::vector<std::uint8_t>> load_u8(
    const std::string& path) {
  Stls1File file = load_stls1(path);
  if (file.dtype != StorageDtype::U8)
    fail(path, "holds float data, expected uint8");
  std::vector<std::uint8_t> data(file.payload.size());
  std::memcpy(data.data(), file.payload.data(), data.size());
  return {std::move(file.shape), std::move(data)};
}

}  // namespace stylelab::io
