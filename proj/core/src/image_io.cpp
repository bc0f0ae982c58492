#include "masdt/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "masdt/utils.hpp"

namespace masdt {

namespace {

std::uint8_t to_byte(double v) {
  const double x = std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::lround(x * 255.0));
}

struct PngWriteSink {
  std::string bytes;
};

void png_sink_write(png_structp png, png_bytep data, png_size_t len) {
  auto* sink = static_cast<PngWriteSink*>(png_get_io_ptr(png));
  sink->bytes.append(reinterpret_cast<const char*>(data), len);
}

void png_sink_flush(png_structp) {}

struct PngReadSource {
  const std::string* bytes;
  std::size_t pos;
};

void png_source_read(png_structp png, png_bytep out, png_size_t len) {
  auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
  if (src->pos + len > src->bytes->size()) {
    png_error(png, "unexpected end of file");
  }
  std::copy_n(src->bytes->data() + src->pos, len, reinterpret_cast<char*>(out));
  src->pos += len;
}

}  // namespace

void write_png_rgb(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("write_png_rgb: expected [3 x H x W], got " + shape_str(image.shape()));
  }
  const std::size_t H = image.dim(1), W = image.dim(2);
  const auto& v = image.values();
  std::vector<std::uint8_t> rows(H * W * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        rows[(y * W + x) * 3 + c] = to_byte(v[c * H * W + y * W + x]);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png_rgb: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png_rgb: png_create_info_struct failed");
  }
  PngWriteSink sink;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png_rgb: encode failed for " + path);
  }
  png_set_write_fn(png, &sink, png_sink_write, png_sink_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> row_ptrs(H);
  for (std::size_t y = 0; y < H; ++y) row_ptrs[y] = rows.data() + y * W * 3;
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  write_file_atomic(path, sink.bytes);
}

Tensor read_png_rgb(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw std::runtime_error("read_png_rgb: " + path + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png_rgb: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png_rgb: png_create_info_struct failed");
  }
  PngReadSource src{&bytes, 0};
  std::vector<std::uint8_t> pixels;
  std::size_t H = 0, W = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png_rgb: decode failed for " + path);
  }
  png_set_read_fn(png, &src, png_source_read);
  png_read_info(png, info);
  W = png_get_image_width(png, info);
  H = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != W * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png_rgb: unexpected row size in " + path);
  }
  pixels.resize(H * W * 3);
  std::vector<png_bytep> row_ptrs(H);
  for (std::size_t y = 0; y < H; ++y) row_ptrs[y] = pixels.data() + y * W * 3;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<double> out(3 * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out[c * H * W + y * W + x] = pixels[(y * W + x) * 3 + c] / 255.0;
  return Tensor::from_data({3, H, W}, std::move(out));
}

void write_pgm(const std::string& path, const Tensor& gray) {
  if (gray.ndim() != 2) throw std::invalid_argument("write_pgm: expected [H x W], got " + shape_str(gray.shape()));
  const std::size_t H = gray.dim(0), W = gray.dim(1);
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + H * W);
  for (double v : gray.values()) out.push_back(static_cast<char>(to_byte(v)));
  write_file_atomic(path, out);
}

}  // namespace masdt
