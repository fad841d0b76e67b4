#pragma once

#include <cstddef>
#include <vector>

namespace dscene {

/// Dense height x width x channel array, channel-last row-major. Backs BEV
/// grids, occupancy volumes, control maps and image feature maps.
struct HwcArray {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  std::vector<double> data;

  HwcArray() = default;
  HwcArray(std::size_t h_, std::size_t w_, std::size_t c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), data(h_ * w_ * c_, fill) {}

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * w + j) * c + k; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data[index(i, j, k)]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data[index(i, j, k)]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const HwcArray& o) const { return h == o.h && w == o.w && c == o.c; }

  friend bool operator==(const HwcArray&, const HwcArray&) = default;
};

}  // namespace dscene
