#include "semimoe/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace semimoe {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path);
  return f;
}

void write_png_bytes(const std::string& path, const std::vector<uint8_t>& bytes, int64_t H,
                     int64_t W, int color_type) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng write error for " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int64_t stride = W * (color_type == PNG_COLOR_TYPE_RGB ? 3 : 1);
  std::vector<png_bytep> rows(static_cast<size_t>(H));
  for (int64_t y = 0; y < H; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(bytes.data() + y * stride);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads any 8/16-bit PNG and normalizes it to 8-bit gray or RGB.
std::vector<uint8_t> read_png_bytes(const std::string& path, bool want_rgb, int64_t& H,
                                    int64_t& W) {
  FilePtr f = open_file(path, "rb");
  uint8_t header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw std::runtime_error(path + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng read error for " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_expand(png);
  if (want_rgb)
    png_set_gray_to_rgb(png);
  else
    png_set_rgb_to_gray(png, 1, -1.0, -1.0);
  png_read_update_info(png, info);

  H = png_get_image_height(png, info);
  W = png_get_image_width(png, info);
  const int64_t ch = want_rgb ? 3 : 1;
  std::vector<uint8_t> bytes(static_cast<size_t>(H * W * ch));
  std::vector<png_bytep> rows(static_cast<size_t>(H));
  for (int64_t y = 0; y < H; ++y) rows[static_cast<size_t>(y)] = bytes.data() + y * W * ch;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return bytes;
}

}  // namespace

void write_mask_png(const std::string& path, const Tensor& mask) {
  if (mask.dim() != 2) throw std::invalid_argument("write_mask_png: mask must be 2-D");
  const int64_t H = mask.size(0), W = mask.size(1);
  std::vector<uint8_t> bytes(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H * W; ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0)
      throw std::invalid_argument("write_mask_png: mask values must be 0 or 1");
    bytes[static_cast<size_t>(i)] = mask[i] == 1.0 ? 255 : 0;
  }
  write_png_bytes(path, bytes, H, W, PNG_COLOR_TYPE_GRAY);
}

Tensor read_mask_png(const std::string& path) {
  int64_t H = 0, W = 0;
  const auto bytes = read_png_bytes(path, false, H, W);
  Tensor mask({H, W});
  std::set<int> bad;
  for (int64_t i = 0; i < H * W; ++i) {
    const uint8_t v = bytes[static_cast<size_t>(i)];
    if (v == 0)
      mask[i] = 0.0;
    else if (v == 255)
      mask[i] = 1.0;
    else
      bad.insert(v);
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << path << " is not a binary mask; found non-{0,255} values:";
    for (int v : bad) os << " " << v;
    throw std::runtime_error(os.str());
  }
  return mask;
}

void write_rgb_png(const std::string& path, const Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3)
    throw std::invalid_argument("write_rgb_png: expected 3×H×W image");
  const int64_t H = image.size(1), W = image.size(2);
  std::vector<uint8_t> bytes(static_cast<size_t>(H * W * 3));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at3(c, y, x), 0.0, 1.0);
        bytes[static_cast<size_t>((y * W + x) * 3 + c)] =
            static_cast<uint8_t>(std::lround(v * 255.0));
      }
  write_png_bytes(path, bytes, H, W, PNG_COLOR_TYPE_RGB);
}

Tensor read_rgb_png(const std::string& path) {
  int64_t H = 0, W = 0;
  const auto bytes = read_png_bytes(path, true, H, W);
  Tensor image({3, H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        image.at3(c, y, x) = bytes[static_cast<size_t>((y * W + x) * 3 + c)] / 255.0;
  return image;
}

void write_npy_f32(const std::string& path, const Tensor& grid) {
  if (grid.dim() != 2) throw std::invalid_argument("write_npy_f32: expected 2-D grid");
  const int64_t H = grid.size(0), W = grid.size(1);
  std::ostringstream dict;
  dict << "{'descr': '<f4', 'fortran_order': False, 'shape': (" << H << ", " << W << "), }";
  std::string header = dict.str();
  // magic(6) + version(2) + headerlen(2) + header, padded to 64 bytes.
  const size_t base = 10 + header.size() + 1;
  const size_t padded = (base + 63) / 64 * 64;
  header.append(padded - 10 - header.size() - 1, ' ');
  header.push_back('\n');

  FilePtr f = open_file(path, "wb");
  const uint8_t magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  std::fwrite(magic, 1, 8, f.get());
  const uint16_t hlen = static_cast<uint16_t>(header.size());
  const uint8_t hl[2] = {static_cast<uint8_t>(hlen & 0xff), static_cast<uint8_t>(hlen >> 8)};
  std::fwrite(hl, 1, 2, f.get());
  std::fwrite(header.data(), 1, header.size(), f.get());
  std::vector<float> data(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H * W; ++i) data[static_cast<size_t>(i)] = static_cast<float>(grid[i]);
  if (std::fwrite(data.data(), sizeof(float), data.size(), f.get()) != data.size())
    throw std::runtime_error("short write to " + path);
}

Tensor read_npy_f32(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  uint8_t magic[8];
  if (std::fread(magic, 1, 8, f.get()) != 8 || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    throw std::runtime_error(path + " is not an NPY file");
  if (magic[6] != 1) throw std::runtime_error(path + ": unsupported NPY version");
  uint8_t hl[2];
  if (std::fread(hl, 1, 2, f.get()) != 2) throw std::runtime_error("truncated NPY header");
  const uint16_t hlen = static_cast<uint16_t>(hl[0] | (hl[1] << 8));
  std::string header(hlen, '\0');
  if (std::fread(header.data(), 1, hlen, f.get()) != hlen)
    throw std::runtime_error("truncated NPY header");
  if (header.find("'<f4'") == std::string::npos || header.find("False") == std::string::npos)
    throw std::runtime_error(path + ": expected little-endian float32 C-order NPY");
  const auto lp = header.find('(');
  const auto comma = header.find(',', lp);
  const auto rp = header.find(')', lp);
  const int64_t H = std::stoll(header.substr(lp + 1, comma - lp - 1));
  const int64_t W = std::stoll(header.substr(comma + 1, rp - comma - 1));
  std::vector<float> data(static_cast<size_t>(H * W));
  if (std::fread(data.data(), sizeof(float), data.size(), f.get()) != data.size())
    throw std::runtime_error("truncated NPY payload in " + path);
  Tensor grid({H, W});
  for (int64_t i = 0; i < H * W; ++i) grid[i] = data[static_cast<size_t>(i)];
  return grid;
}

}  // namespace semimoe
