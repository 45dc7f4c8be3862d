#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "medcl/grid.hpp"

namespace medcl {

// Grayscale PNG I/O. 16-bit carries image intensities (value = intensity *
// 65535), 8-bit carries label and scribble maps. Reads validate bit depth and
// color type and throw FormatError on anything unexpected.
void write_png16(const std::filesystem::path& path, const Grid<uint16_t>& img);
Grid<uint16_t> read_png16(const std::filesystem::path& path);

void write_png8(const std::filesystem::path& path, const Grid<uint8_t>& img);
Grid<uint8_t> read_png8(const std::filesystem::path& path);

// Interleaved RGB, row-major; used by the plot writer.
void write_png_rgb(const std::filesystem::path& path, int height, int width,
                   const std::vector<uint8_t>& rgb);

// CRC-32 (zlib polynomial) over a file's raw bytes, for manifest checksums.
uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace medcl
