#include "medcl/png_io.hpp"

#include <png.h>
#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace medcl {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors via longjmp; wrap each call site in a fresh
// setjmp context and convert to exceptions at the boundary.
void write_gray(const std::filesystem::path& path, int height, int width, int bit_depth,
                const std::vector<png_bytep>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, ErrorCode::IoError, "cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrorCode::InternalError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::InternalError, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoError, "libpng write failure: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // in-memory rows are little-endian
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

void read_gray(const std::filesystem::path& path, int expected_depth, int& height, int& width,
               std::vector<uint8_t>& bytes) {
  require(std::filesystem::exists(path), ErrorCode::IoError, "missing file: " + path.string());
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, ErrorCode::IoError, "cannot open for reading: " + path.string());

  PngReader reader;
  reader.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(reader.png != nullptr, ErrorCode::InternalError, "png_create_read_struct failed");
  reader.info = png_create_info_struct(reader.png);
  require(reader.info != nullptr, ErrorCode::InternalError, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(reader.png))) {
    fail(ErrorCode::FormatError, "not a decodable PNG: " + path.string());
  }
  png_init_io(reader.png, fp.get());
  png_read_info(reader.png, reader.info);

  int depth = png_get_bit_depth(reader.png, reader.info);
  int color = png_get_color_type(reader.png, reader.info);
  require(color == PNG_COLOR_TYPE_GRAY, ErrorCode::FormatError,
          "expected grayscale PNG: " + path.string());
  require(depth == expected_depth, ErrorCode::FormatError,
          "expected bit depth " + std::to_string(expected_depth) + ": " + path.string());

  height = static_cast<int>(png_get_image_height(reader.png, reader.info));
  width = static_cast<int>(png_get_image_width(reader.png, reader.info));
  if (depth == 16) png_set_swap(reader.png);

  size_t row_bytes = png_get_rowbytes(reader.png, reader.info);
  bytes.resize(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) rows[r] = bytes.data() + r * row_bytes;
  png_read_image(reader.png, rows.data());
  png_read_end(reader.png, nullptr);
}

}  // namespace

void write_png16(const std::filesystem::path& path, const Grid<uint16_t>& img) {
  std::vector<png_bytep> rows(img.height());
  for (int r = 0; r < img.height(); ++r) {
    rows[r] = const_cast<png_bytep>(
        reinterpret_cast<const png_byte*>(img.data() + static_cast<size_t>(r) * img.width()));
  }
  write_gray(path, img.height(), img.width(), 16, rows);
}

Grid<uint16_t> read_png16(const std::filesystem::path& path) {
  int h = 0, w = 0;
  std::vector<uint8_t> bytes;
  read_gray(path, 16, h, w, bytes);
  Grid<uint16_t> img(h, w);
  std::memcpy(img.data(), bytes.data(), bytes.size());
  return img;
}

void write_png8(const std::filesystem::path& path, const Grid<uint8_t>& img) {
  std::vector<png_bytep> rows(img.height());
  for (int r = 0; r < img.height(); ++r) {
    rows[r] = const_cast<png_bytep>(img.data() + static_cast<size_t>(r) * img.width());
  }
  write_gray(path, img.height(), img.width(), 8, rows);
}

Grid<uint8_t> read_png8(const std::filesystem::path& path) {
  int h = 0, w = 0;
  std::vector<uint8_t> bytes;
  read_gray(path, 8, h, w, bytes);
  Grid<uint8_t> img(h, w);
  std::memcpy(img.data(), bytes.data(), bytes.size());
  return img;
}

void write_png_rgb(const std::filesystem::path& path, int height, int width,
                   const std::vector<uint8_t>& rgb) {
  require(rgb.size() == static_cast<size_t>(height) * width * 3, ErrorCode::InvalidArgument,
          "rgb buffer size mismatch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, ErrorCode::IoError, "cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrorCode::InternalError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::InternalError, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoError, "libpng write failure: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) {
    rows[r] = const_cast<png_bytep>(rgb.data() + static_cast<size_t>(r) * width * 3);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "missing file: " + path.string());
  uLong crc = crc32(0L, Z_NULL, 0);
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(in.gcount()));
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace medcl
