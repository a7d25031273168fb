#include "stylelab/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stylelab {

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size())));
  put_u32_be(out, crc);
}

}  // namespace

RgbImage to_rgb(const Tensor& image) {
  if (!image.defined() || image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("to_rgb: want 3xHxW image");
  const int64_t h = image.dim(1), w = image.dim(2);
  RgbImage out(h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at((c * h + y) * w + x), 0.0, 1.0);
        out.at(y, x)[c] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
      }
  return out;
}

RgbImage labels_to_rgb(const Tensor& labels) {
  if (!labels.defined() || labels.ndim() != 2)
    throw std::invalid_argument("labels_to_rgb: want HxW class ids");
  // background, road, vehicle, vulnerable
  static constexpr std::uint8_t palette[4][3] = {
      {60, 60, 60}, {128, 64, 128}, {0, 0, 200}, {220, 20, 60}};
  const int64_t h = labels.dim(0), w = labels.dim(1);
  RgbImage out(h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const auto id = static_cast<int64_t>(labels.at(y * w + x));
      const auto k = static_cast<std::size_t>(std::clamp<int64_t>(id, 0, 3));
      std::memcpy(out.at(y, x), palette[k], 3);
    }
  return out;
}

RgbImage tile_grid(const std::vector<std::vector<RgbImage>>& rows,
                   int64_t pad) {
  if (rows.empty() || rows.front().empty())
    throw std::invalid_argument("tile_grid: no cells");
  const int64_t ch = rows.front().front().h, cw = rows.front().front().w;
  std::size_t max_cols = 0;
  for (const auto& r : rows) {
    max_cols = std::max(max_cols, r.size());
    for (const auto& cell : r)
      if (cell.h != ch || cell.w != cw)
        throw std::invalid_argument("tile_grid: cell sizes differ");
  }
  const auto n_rows = static_cast<int64_t>(rows.size());
  const auto n_cols = static_cast<int64_t>(max_cols);
  RgbImage out(n_rows * ch + (n_rows + 1) * pad,
               n_cols * cw + (n_cols + 1) * pad);
  std::fill(out.pixels.begin(), out.pixels.end(), std::uint8_t{255});
  for (int64_t r = 0; r < n_rows; ++r)
    for (std::size_t c = 0; c < rows[static_cast<std::size_t>(r)].size(); ++c) {
      const RgbImage& cell = rows[static_cast<std::size_t>(r)][c];
      const int64_t oy = pad + r * (ch + pad);
      const int64_t ox = pad + static_cast<int64_t>(c) * (cw + pad);
      for (int64_t y = 0; y < ch; ++y)
        std::memcpy(out.at(oy + y, ox), cell.at(y, 0),
                    static_cast<std::size_t>(cw * 3));
    }
  return out;
}

void write_png(const std::string& path, const RgbImage& img) {
  if (img.h < 1 || img.w < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.h * img.w * 3))
    throw std::invalid_argument("write_png: malformed image");

  // Raw scanlines, each with a leading filter-type-0 byte.
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.h * (img.w * 3 + 1)));
  for (int64_t y = 0; y < img.h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.at(y, 0), img.at(y, 0) + img.w * 3);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: deflate failed");
  comp.resize(comp_len);

  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.w));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // no interlace

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A,
                                   '\n'};
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", comp);
  put_chunk(png, "IEND", {});

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_png: cannot write " + path);
  os.write(reinterpret_cast<const char*>(png.data()),
           static_cast<std::streamsize>(png.size()));
}

}  // namespace stylelab
