#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "chargrid/inference.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Minimal RGB8 PNG writer (filter 0 scanlines deflated with zlib) plus the
// prediction overlay: chargrid tokens in grayscale, segmentation classes as
// translucent tint, detected boxes as red outlines.
// ---------------------------------------------------------------------------

namespace pngdetail {

inline void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

inline void put_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace pngdetail

// rgb: H*W*3 bytes, row-major.
inline void write_png_rgb(const std::string& path, const std::vector<unsigned char>& rgb,
                          int width, int height) {
  check(static_cast<std::size_t>(width) * height * 3 == rgb.size(), "write_png_rgb: size mismatch");
  std::vector<unsigned char> raw;
  raw.reserve(rgb.size() + static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter type none
    const unsigned char* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * 3);
  }
  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_size);
  check(compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) == Z_OK,
        "PNG deflate failed");
  comp.resize(comp_size);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<unsigned char> ihdr;
  pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(width));
  pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  pngdetail::put_chunk(out, "IHDR", ihdr);
  pngdetail::put_chunk(out, "IDAT", comp);
  pngdetail::put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  check(f.good(), "write failed: " + path);
}

inline std::array<unsigned char, 3> field_class_color(int cls) {
  static const std::array<std::array<unsigned char, 3>, kNumFieldClasses> colors = {{
      {0, 0, 0},        // background
      {230, 60, 60},    // invoice_number
      {60, 160, 230},   // invoice_date
      {60, 200, 90},    // invoice_amount
      {240, 180, 40},   // vendor_name
      {180, 100, 240},  // vendor_address
      {50, 220, 220},   // lineitem_description
      {240, 120, 200},  // lineitem_quantity
      {160, 220, 60},   // lineitem_amount
  }};
  return colors[static_cast<std::size_t>(cls)];
}

inline void render_overlay(const std::string& path, const Chargrid& tokens,
                           const Tensor<int>& seg_argmax, const std::vector<DetectedBox>& boxes) {
  const int h = tokens.height, w = tokens.width;
  check(seg_argmax.dim(0) == h && seg_argmax.dim(1) == w, "render_overlay: shape mismatch");
  std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * w * 3, 255);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      unsigned char* px = &rgb[(static_cast<std::size_t>(i) * w + j) * 3];
      const int tok = tokens.cells.at(i, j);
      const unsigned char base = tok == 0 ? 255 : static_cast<unsigned char>(40 + (tok * 13) % 120);
      px[0] = px[1] = px[2] = base;
      const int cls = seg_argmax.at(i, j);
      if (cls != 0) {
        const auto c = field_class_color(cls);
        for (int k = 0; k < 3; ++k) {
          px[k] = static_cast<unsigned char>((px[k] + 2 * c[static_cast<std::size_t>(k)]) / 3);
        }
      }
    }
  }
  auto put_red = [&](int i, int j) {
    if (i < 0 || i >= h || j < 0 || j >= w) return;
    unsigned char* px = &rgb[(static_cast<std::size_t>(i) * w + j) * 3];
    px[0] = 255;
    px[1] = 0;
    px[2] = 0;
  };
  for (const DetectedBox& b : boxes) {
    const int y0 = static_cast<int>(b.rect.y), y1 = static_cast<int>(b.rect.bottom()) - 1;
    const int x0 = static_cast<int>(b.rect.x), x1 = static_cast<int>(b.rect.right()) - 1;
    for (int j = x0; j <= x1; ++j) {
      put_red(y0, j);
      put_red(y1, j);
    }
    for (int i = y0; i <= y1; ++i) {
      put_red(i, x0);
      put_red(i, x1);
    }
  }
  write_png_rgb(path, rgb, w, h);
}

}  // namespace chargrid
