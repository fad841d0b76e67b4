#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dscene/array.hpp"
#include "dscene/geometry.hpp"

namespace dscene::io {

// "GPC1" | u32 count | count x (f32 x, y, z, intensity), little-endian.
std::string encode_cloud(const PointCloud& cloud);
PointCloud decode_cloud(std::string_view bytes);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_cloud(const std::filesystem::path& path);

// "GBV1" | u32 H | u32 W | u32 C | H*W*C f32, row-major channel-last.
std::string encode_grid(const HwcArray& grid);
HwcArray decode_grid(std::string_view bytes);
void write_grid(const std::filesystem::path& path, const HwcArray& grid);
HwcArray read_grid(const std::filesystem::path& path);

/// Rounds every value through f32, i.e. what a GBV1 round trip yields.
HwcArray quantize_f32(HwcArray grid);

// {"views": [{"view_id", "fx", "fy", "cx", "cy", "width", "height",
//             "rotation": 3x3 row-major, "translation": [3]}]}
std::string calibration_to_json(const std::vector<CameraView>& views);
std::vector<CameraView> calibration_from_json(std::string_view text);
void write_calibration(const std::filesystem::path& path, const std::vector<CameraView>& views);
std::vector<CameraView> read_calibration(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace dscene::io
