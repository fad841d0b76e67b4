#include "dscene/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include "dscene/error.hpp"
#include "json.hpp"

namespace dscene::io {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

constexpr std::string_view kCloudMagic = "GPC1";
constexpr std::string_view kGridMagic = "GBV1";

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_f32(std::string& out, float v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view what) : bytes_(bytes), what_(what) {}

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() || bytes_.substr(0, magic.size()) != magic) {
      throw FormatError(std::string(what_) + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
    pos_ = magic.size();
  }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  float f32() {
    float v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError(std::string(what_) + ": trailing bytes after payload");
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string(what_) + ": truncated payload");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::string_view bytes_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t n, std::string_view what) {
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError(std::string(what) + ": dimension exceeds u32");
  }
  return static_cast<std::uint32_t>(n);
}

}  // namespace

std::string encode_cloud(const PointCloud& cloud) {
  cloud.validate();
  std::string out;
  out.reserve(8 + cloud.size() * 16);
  out.append(kCloudMagic);
  put_u32(out, checked_u32(cloud.size(), "GPC1"));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    put_f32(out, cloud.points[i].x());
    put_f32(out, cloud.points[i].y());
    put_f32(out, cloud.points[i].z());
    put_f32(out, cloud.intensity[i]);
  }
  return out;
}

PointCloud decode_cloud(std::string_view bytes) {
  Reader r(bytes, "GPC1");
  r.expect_magic(kCloudMagic);
  const std::uint32_t n = r.u32();
  if (r.remaining() != std::size_t{n} * 16) throw FormatError("GPC1: payload size does not match point count");
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const float x = r.f32();
    const float y = r.f32();
    const float z = r.f32();
    cloud.points.emplace_back(x, y, z);
    cloud.intensity.push_back(r.f32());
  }
  r.expect_end();
  try {
    cloud.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("GPC1: ") + e.what());
  }
  return cloud;
}

std::string encode_grid(const HwcArray& grid) {
  if (grid.data.size() != grid.h * grid.w * grid.c) throw ShapeError("GBV1: value count does not match H*W*C");
  std::string out;
  out.reserve(16 + grid.data.size() * 4);
  out.append(kGridMagic);
  put_u32(out, checked_u32(grid.h, "GBV1"));
  put_u32(out, checked_u32(grid.w, "GBV1"));
  put_u32(out, checked_u32(grid.c, "GBV1"));
  for (double v : grid.data) put_f32(out, static_cast<float>(v));
  return out;
}

HwcArray decode_grid(std::string_view bytes) {
  Reader r(bytes, "GBV1");
  r.expect_magic(kGridMagic);
  const std::size_t h = r.u32();
  const std::size_t w = r.u32();
  const std::size_t c = r.u32();
  if (r.remaining() != h * w * c * 4) throw FormatError("GBV1: payload size does not match H*W*C");
  HwcArray grid(h, w, c);
  for (auto& v : grid.data) v = r.f32();
  r.expect_end();
  return grid;
}

HwcArray quantize_f32(HwcArray grid) {
  for (auto& v : grid.data) v = static_cast<float>(v);
  return grid;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) { write_text(path, encode_cloud(cloud)); }
PointCloud read_cloud(const std::filesystem::path& path) { return decode_cloud(read_text(path)); }
void write_grid(const std::filesystem::path& path, const HwcArray& grid) { write_text(path, encode_grid(grid)); }
HwcArray read_grid(const std::filesystem::path& path) { return decode_grid(read_text(path)); }

std::string calibration_to_json(const std::vector<CameraView>& views) {
  json arr = json::array();
  for (const auto& v : views) {
    const auto& k = v.intrinsics;
    const auto& r = v.extrinsics.rotation();
    const auto& t = v.extrinsics.translation();
    arr.push_back({{"view_id", v.view_id},
                   {"fx", k.fx},
                   {"fy", k.fy},
                   {"cx", k.cx},
                   {"cy", k.cy},
                   {"width", k.width},
                   {"height", k.height},
                   {"rotation", {{r(0, 0), r(0, 1), r(0, 2)}, {r(1, 0), r(1, 1), r(1, 2)}, {r(2, 0), r(2, 1), r(2, 2)}}},
                   {"translation", {t.x(), t.y(), t.z()}}});
  }
  return json{{"views", arr}}.dump(2);
}

std::vector<CameraView> calibration_from_json(std::string_view text) {
  std::vector<CameraView> out;
  std::set<int> ids;
  try {
    const json doc = json::parse(text);
    for (const auto& jv : doc.at("views")) {
      CameraView v;
      v.view_id = jv.at("view_id").get<int>();
      v.intrinsics.fx = jv.at("fx").get<double>();
      v.intrinsics.fy = jv.at("fy").get<double>();
      v.intrinsics.cx = jv.at("cx").get<double>();
      v.intrinsics.cy = jv.at("cy").get<double>();
      v.intrinsics.width = jv.at("width").get<int>();
      v.intrinsics.height = jv.at("height").get<int>();
      v.intrinsics.validate();
      Mat3 r;
      const auto& jr = jv.at("rotation");
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = jr.at(i).at(j).get<double>();
      const auto& jt = jv.at("translation");
      v.extrinsics = Pose(r, Vec3(jt.at(0).get<double>(), jt.at(1).get<double>(), jt.at(2).get<double>()));
      if (!ids.insert(v.view_id).second) throw ValidationError("calibration: duplicate view_id");
      out.push_back(v);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("calibration JSON: ") + e.what());
  }
  return out;
}

void write_calibration(const std::filesystem::path& path, const std::vector<CameraView>& views) {
  write_text(path, calibration_to_json(views));
}

std::vector<CameraView> read_calibration(const std::filesystem::path& path) {
  return calibration_from_json(read_text(path));
}

}  // namespace dscene::io
