#pragma once

#include <filesystem>

#include "diffbody/image.hpp"

namespace diffbody {

// 8-bit PNG, gray or RGB (RGBA/gray-alpha inputs drop alpha). Values are
// quantized as round(v * 255) on write and v / 255 on read.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// Single-channel PNG; any nonzero sample reads as 1, written as {0,255}.
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

// Heatmap container ("DBHM"): little-endian
//   char[4] magic "DBHM", u32 version (1), u32 joints, u32 height, u32 width,
//   then joints*height*width float32 values, joint-major then row-major.
void write_heatmap(const std::filesystem::path& path, const Heatmap& heatmap);
Heatmap read_heatmap(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void write_png_atomic(const std::filesystem::path& path, const Image& image);

}  // namespace diffbody
