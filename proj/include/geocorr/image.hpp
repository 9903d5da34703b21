#pragma once

#include "geocorr/core.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

namespace geocorr {

/// Binary raster mask, row-major, (row, col) indexing.
struct MaskImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // 0 = background, 1 = foreground

  MaskImage() = default;
  MaskImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {
    require(h > 0 && w > 0, "mask: dimensions must be positive");
  }

  std::uint8_t& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }

  long count() const {
    long n = 0;
    for (auto v : data) n += v ? 1 : 0;
    return n;
  }
  bool empty_mask() const { return count() == 0; }
  bool full_mask() const { return count() == static_cast<long>(data.size()); }
};

/// Morphological dilation with a Euclidean disk of radius r (pixels at
/// squared center distance <= r*r). r = 0 is the identity; r = 1 adds the
/// 4-neighborhood.
inline MaskImage dilate(const MaskImage& mask, int radius) {
  require(radius >= 0, "dilate: negative radius");
  if (radius == 0) return mask;
  std::vector<std::pair<int, int>> offsets;
  for (int dr = -radius; dr <= radius; ++dr)
    for (int dc = -radius; dc <= radius; ++dc)
      if (dr * dr + dc * dc <= radius * radius) offsets.emplace_back(dr, dc);
  MaskImage out(mask.height, mask.width);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      for (const auto& [dr, dc] : offsets) {
        const int rr = r + dr, cc = c + dc;
        if (rr >= 0 && rr < mask.height && cc >= 0 && cc < mask.width) out.at(rr, cc) = 1;
      }
    }
  return out;
}

/// Hard intersection-over-union of two binary masks. Errors when both are
/// empty (the ratio is undefined).
inline double hard_iou(const MaskImage& a, const MaskImage& b) {
  require(a.height == b.height && a.width == b.width, "hard_iou: size mismatch");
  long inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const bool pa = a.data[i] != 0, pb = b.data[i] != 0;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  require(uni > 0, "hard_iou: both masks are empty");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Binarize a soft mask at 0.5.
inline MaskImage binarize(const Eigen::MatrixXd& soft, double threshold = 0.5) {
  MaskImage out(static_cast<int>(soft.rows()), static_cast<int>(soft.cols()));
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      out.at(r, c) = soft(r, c) >= threshold ? 1 : 0;
  return out;
}

}  // namespace geocorr
