#pragma once

// Dense per-patch feature grids: normalization, sqrt-weighted fusion,
// bilinear resampling, rasterization of per-vertex mesh descriptors into
// the image plane, nearest-neighbor matching, and the relaxed cyclic
// consistency filter.

#include "geocorr/camera.hpp"
#include "geocorr/core.hpp"
#include "geocorr/image.hpp"
#include "geocorr/mesh.hpp"
#include "geocorr/raycast.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace geocorr {

// A grid_h x grid_w grid of feature vectors. Cell (r, c) covers a
// patch_size x patch_size block of pixels whose top-left pixel is
// (origin_row + r*patch_size, origin_col + c*patch_size). Rows of `values`
// are cells in row-major order (flat index r*grid_w + c).
struct DenseFeatureMap {
  int grid_h = 0;
  int grid_w = 0;
  int channels = 0;
  int patch_size = 1;
  int origin_row = 0;
  int origin_col = 0;
  Eigen::MatrixXd values;  // (grid_h*grid_w) x channels
  // Set by l2_normalize_map for cells whose vector had vanishing norm;
  // empty means "no cell flagged".
  std::vector<uint8_t> zero_flags;

  int cell_count() const { return grid_h * grid_w; }
  int flat(int r, int c) const { return r * grid_w + c; }
  int cell_row(int flat_index) const { return flat_index / grid_w; }
  int cell_col(int flat_index) const { return flat_index % grid_w; }

  // Representative pixel of a cell: the (patch_size/2)-th pixel inside the
  // patch along each axis (the exact center for odd patch sizes).
  int center_pixel_row(int r) const {
    return origin_row + r * patch_size + patch_size / 2;
  }
  int center_pixel_col(int c) const {
    return origin_col + c * patch_size + patch_size / 2;
  }
  Vec2 center_pixel(int flat_index) const {
    return Vec2(center_pixel_col(cell_col(flat_index)),
                center_pixel_row(cell_row(flat_index)));
  }

  // Grid cell containing a pixel coordinate (may fall outside the grid).
  int patch_row_of(double pixel_row) const {
    return static_cast<int>(
        std::floor((pixel_row - origin_row) / patch_size));
  }
  int patch_col_of(double pixel_col) const {
    return static_cast<int>(
        std::floor((pixel_col - origin_col) / patch_size));
  }

  bool flagged(int flat_index) const {
    return !zero_flags.empty() &&
           zero_flags[static_cast<size_t>(flat_index)] != 0;
  }
};

inline DenseFeatureMap make_feature_map(int grid_h, int grid_w, int channels,
                                        int patch_size = 1, int origin_row = 0,
                                        int origin_col = 0) {
  require(grid_h > 0 && grid_w > 0, "feature map grid dims must be positive");
  require(channels > 0, "feature map channel count must be positive");
  require(patch_size >= 1, "feature map patch size must be >= 1");
  DenseFeatureMap map;
  map.grid_h = grid_h;
  map.grid_w = grid_w;
  map.channels = channels;
  map.patch_size = patch_size;
  map.origin_row = origin_row;
  map.origin_col = origin_col;
  map.values = Eigen::MatrixXd::Zero(grid_h * grid_w, channels);
  return map;
}

inline void validate_feature_map(const DenseFeatureMap& map) {
  require(map.grid_h > 0 && map.grid_w > 0, "feature map grid dims must be positive");
  require(map.channels > 0, "feature map channel count must be positive");
  require(map.patch_size >= 1, "feature map patch size must be >= 1");
  require(map.values.rows() == map.cell_count() &&
              map.values.cols() == map.channels,
          "feature map value matrix has wrong shape");
  require(map.values.allFinite(), "feature map contains non-finite values");
  require(map.zero_flags.empty() ||
              static_cast<int>(map.zero_flags.size()) == map.cell_count(),
          "feature map zero-flag vector has wrong length");
}

// Divide every cell vector by its L2 norm. Vanishing-norm cells are left as
// zero and flagged so matching can exclude them.
inline DenseFeatureMap l2_normalize_map(const DenseFeatureMap& map) {
  validate_feature_map(map);
  DenseFeatureMap out = map;
  out.zero_flags.assign(static_cast<size_t>(map.cell_count()), 0);
  for (int i = 0; i < map.cell_count(); ++i) {
    const double norm = out.values.row(i).norm();
    if (norm > 0.0) {
      out.values.row(i) /= norm;
    } else {
      out.zero_flags[static_cast<size_t>(i)] = 1;
    }
  }
  return out;
}

struct FusionWeights {
  double alpha = 0.5;
  double beta = 1.0 / 3.0;
  double gamma = 1.0 / 6.0;
};

inline void validate_weights(const FusionWeights& w) {
  require(std::isfinite(w.alpha) && std::isfinite(w.beta) &&
              std::isfinite(w.gamma),
          "fusion weights must be finite");
  require(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0,
          "fusion weights must be non-negative");
  require(std::abs(w.alpha + w.beta + w.gamma - 1.0) <= 1e-9,
          "fusion weights must sum to 1");
}

// Channel-wise concatenation of sqrt(alpha)*a, sqrt(beta)*b, sqrt(gamma)*c.
// Inputs must share grid geometry and should already be unit-normalized per
// cell; then the fused dot product of two cells equals the weighted average
// of the three per-source cosine similarities.
inline DenseFeatureMap fuse(const DenseFeatureMap& a, const DenseFeatureMap& b,
                            const DenseFeatureMap& c,
                            const FusionWeights& weights) {
  validate_weights(weights);
  validate_feature_map(a);
  validate_feature_map(b);
  validate_feature_map(c);
  const DenseFeatureMap* maps[3] = {&a, &b, &c};
  for (const DenseFeatureMap* m : maps) {
    require(m->grid_h == a.grid_h && m->grid_w == a.grid_w,
            "fuse: grid dimension mismatch");
    require(m->patch_size == a.patch_size && m->origin_row == a.origin_row &&
                m->origin_col == a.origin_col,
            "fuse: patch geometry mismatch");
  }
  DenseFeatureMap out = make_feature_map(a.grid_h, a.grid_w,
                                         a.channels + b.channels + c.channels,
                                         a.patch_size, a.origin_row,
                                         a.origin_col);
  out.values.block(0, 0, out.cell_count(), a.channels) =
      std::sqrt(weights.alpha) * a.values;
  out.values.block(0, a.channels, out.cell_count(), b.channels) =
      std::sqrt(weights.beta) * b.values;
  out.values.block(0, a.channels + b.channels, out.cell_count(), c.channels) =
      std::sqrt(weights.gamma) * c.values;
  out.zero_flags.assign(static_cast<size_t>(out.cell_count()), 0);
  bool any = false;
  for (int i = 0; i < out.cell_count(); ++i) {
    const bool f = a.flagged(i) || b.flagged(i) || c.flagged(i);
    out.zero_flags[static_cast<size_t>(i)] = f ? 1 : 0;
    any = any || f;
  }
  if (!any) out.zero_flags.clear();
  return out;
}

// Resample onto a new grid geometry, bilinearly per channel in pixel space.
// Each cell's value is anchored at its representative center pixel (the same
// ps/2 convention as center_pixel); sample positions outside the source grid
// clamp to its border cells.
inline DenseFeatureMap resample_bilinear(const DenseFeatureMap& map,
                                         int grid_h, int grid_w,
                                         int patch_size, int origin_row = 0,
                                         int origin_col = 0) {
  validate_feature_map(map);
  DenseFeatureMap out = make_feature_map(grid_h, grid_w, map.channels,
                                         patch_size, origin_row, origin_col);
  const auto clampi = [](double v, int hi) {
    return std::min(std::max(v, 0.0), static_cast<double>(hi));
  };
  for (int r = 0; r < grid_h; ++r) {
    for (int c = 0; c < grid_w; ++c) {
      // source-grid coordinates of this output cell's center pixel
      const double py = out.center_pixel_row(r);
      const double px = out.center_pixel_col(c);
      const double gr = clampi(
          (py - map.origin_row - map.patch_size / 2) / map.patch_size,
          map.grid_h - 1);
      const double gc = clampi(
          (px - map.origin_col - map.patch_size / 2) / map.patch_size,
          map.grid_w - 1);
      const int r0 = std::min(static_cast<int>(std::floor(gr)), map.grid_h - 1);
      const int c0 = std::min(static_cast<int>(std::floor(gc)), map.grid_w - 1);
      const int r1 = std::min(r0 + 1, map.grid_h - 1);
      const int c1 = std::min(c0 + 1, map.grid_w - 1);
      const double fr = gr - r0;
      const double fc = gc - c0;
      out.values.row(out.flat(r, c)) =
          (1 - fr) * (1 - fc) * map.values.row(map.flat(r0, c0)) +
          (1 - fr) * fc * map.values.row(map.flat(r0, c1)) +
          fr * (1 - fc) * map.values.row(map.flat(r1, c0)) +
          fr * fc * map.values.row(map.flat(r1, c1));
    }
  }
  return out;
}

struct RasterizedDescriptors {
  DenseFeatureMap map;
  MaskImage coverage;  // grid-sized; nonzero where the cell ray hit the mesh
};

// Project per-vertex descriptors into the image plane: per grid cell, cast
// the ray through the cell's representative pixel, take the barycentrically
// interpolated descriptor at the nearest hit. Cells outside the foreground
// mask are zeroed; foreground cells whose ray misses are filled from the
// nearest covered foreground cell (Euclidean grid distance, ties broken
// toward the smaller row, then the smaller column).
inline RasterizedDescriptors rasterize_vertex_descriptors(
    const TriangleMesh& mesh, const CameraModel& cam, const PoseParams& pose,
    const MaskImage& fg_mask, int grid_h, int grid_w) {
  require(mesh.descriptors.rows() == mesh.vertex_count() &&
              mesh.descriptors.cols() > 0,
          "rasterize: mesh has no per-vertex descriptors");
  require(grid_h > 0 && grid_w > 0, "rasterize: grid dims must be positive");
  require(fg_mask.height == cam.height && fg_mask.width == cam.width,
          "rasterize: foreground mask size must match the camera frame");
  require(cam.height % grid_h == 0 && cam.width % grid_w == 0,
          "rasterize: frame dims must be integer multiples of the grid");
  const int ps = cam.height / grid_h;
  require(cam.width / grid_w == ps,
          "rasterize: grid patches must be square pixels");

  const int dim = static_cast<int>(mesh.descriptors.cols());
  const double diag = bounding_diag(mesh);
  RasterizedDescriptors out;
  out.map = make_feature_map(grid_h, grid_w, dim, ps);
  out.coverage = MaskImage(grid_h, grid_w);

  std::vector<uint8_t> fg_cell(static_cast<size_t>(grid_h * grid_w), 0);
  for (int r = 0; r < grid_h; ++r) {
    for (int c = 0; c < grid_w; ++c) {
      const int py = out.map.center_pixel_row(r);
      const int px = out.map.center_pixel_col(c);
      if (!fg_mask.at(py, px)) continue;
      fg_cell[static_cast<size_t>(out.map.flat(r, c))] = 1;
      const ObjectRay ray = pixel_ray(cam, pose, px, py);
      const auto hit = raycast(ray.origin, ray.direction, mesh, diag);
      if (!hit) continue;
      Eigen::RowVectorXd desc = Eigen::RowVectorXd::Zero(dim);
      const auto& face = mesh.faces[static_cast<size_t>(hit->face)];
      for (int k = 0; k < 3; ++k)
        desc += hit->bary[static_cast<size_t>(k)] *
                mesh.descriptors.row(face[static_cast<size_t>(k)]);
      out.map.values.row(out.map.flat(r, c)) = desc;
      out.coverage.at(r, c) = 255;
    }
  }

  // nearest-covered-cell fill for foreground cells the rays missed
  std::vector<int> covered;
  for (int i = 0; i < out.map.cell_count(); ++i)
    if (out.coverage.at(out.map.cell_row(i), out.map.cell_col(i)))
      covered.push_back(i);
  if (!covered.empty()) {
    for (int i = 0; i < out.map.cell_count(); ++i) {
      if (!fg_cell[static_cast<size_t>(i)]) continue;
      if (out.coverage.at(out.map.cell_row(i), out.map.cell_col(i))) continue;
      const int r = out.map.cell_row(i), c = out.map.cell_col(i);
      long best_d2 = -1;
      int best = -1;
      for (int j : covered) {  // ascending flat order resolves ties
        const long dr = out.map.cell_row(j) - r;
        const long dc = out.map.cell_col(j) - c;
        const long d2 = dr * dr + dc * dc;
        if (best < 0 || d2 < best_d2) {
          best_d2 = d2;
          best = j;
        }
      }
      out.map.values.row(i) = out.map.values.row(best);
    }
  }
  return out;
}

// A proposed correspondence between one source pixel and one target pixel,
// optionally annotated by the geometric verification stages.
struct CandidateMatch {
  Vec2 p_src = Vec2::Zero();  // (x, y) pixels
  Vec2 p_tgt = Vec2::Zero();
  int src_cell = -1;  // flat grid indices when grid-born, else -1
  int tgt_cell = -1;
  std::optional<SurfacePoint> lifted_src;
  std::optional<SurfacePoint> lifted_tgt;
  int snapped_src = -1;  // dominant vertex of the lifted point
  int snapped_tgt = -1;
  std::optional<double> geo_error;
};

/// Downsample a pixel-resolution foreground mask to the feature grid: a cell
/// is foreground when its representative (center) pixel is.
inline MaskImage cell_mask_from_pixels(const DenseFeatureMap& map,
                                       const MaskImage& pixels) {
  MaskImage cells(map.grid_h, map.grid_w);
  for (int r = 0; r < map.grid_h; ++r)
    for (int c = 0; c < map.grid_w; ++c) {
      const int py = map.center_pixel_row(r);
      const int px = map.center_pixel_col(c);
      require(py >= 0 && py < pixels.height && px >= 0 && px < pixels.width,
              "cell_mask_from_pixels: cell center outside the pixel mask");
      cells.at(r, c) = pixels.at(py, px) ? 1 : 0;
    }
  return cells;
}

namespace detail {

// Foreground, non-zero-flagged cells in ascending flat order.
inline std::vector<int> matchable_cells(const DenseFeatureMap& map,
                                        const MaskImage& fg_cells) {
  require(fg_cells.height == map.grid_h && fg_cells.width == map.grid_w,
          "cell mask size must match the feature grid");
  std::vector<int> cells;
  for (int i = 0; i < map.cell_count(); ++i)
    if (fg_cells.at(map.cell_row(i), map.cell_col(i)) && !map.flagged(i))
      cells.push_back(i);
  return cells;
}

// Best cell by dot product; ascending scan with strict > keeps the smaller
// flat index on ties.
inline int nn_cell(const Eigen::RowVectorXd& query,
                   const DenseFeatureMap& map, const std::vector<int>& cells) {
  int best = cells.front();
  double best_dot = query.dot(map.values.row(best));
  for (size_t k = 1; k < cells.size(); ++k) {
    const double d = query.dot(map.values.row(cells[k]));
    if (d > best_dot) {
      best_dot = d;
      best = cells[k];
    }
  }
  return best;
}

}  // namespace detail

// For every matchable source cell, the target cell maximizing the fused dot
// product. Zero-flagged cells neither query nor serve as candidates.
inline std::vector<CandidateMatch> nn_match(const DenseFeatureMap& src,
                                            const DenseFeatureMap& tgt,
                                            const MaskImage& src_fg,
                                            const MaskImage& tgt_fg) {
  validate_feature_map(src);
  validate_feature_map(tgt);
  require(src.channels == tgt.channels,
          "nn_match: feature maps have different channel layouts");
  const auto src_cells = detail::matchable_cells(src, src_fg);
  const auto tgt_cells = detail::matchable_cells(tgt, tgt_fg);
  require(!src_cells.empty() && !tgt_cells.empty(),
          "nn_match: empty foreground on one side");
  std::vector<CandidateMatch> out;
  out.reserve(src_cells.size());
  for (int i : src_cells) {
    const Eigen::RowVectorXd q = src.values.row(i);
    const int j = detail::nn_cell(q, tgt, tgt_cells);
    CandidateMatch cand;
    cand.src_cell = i;
    cand.tgt_cell = j;
    cand.p_src = src.center_pixel(i);
    cand.p_tgt = tgt.center_pixel(j);
    out.push_back(cand);
  }
  return out;
}

struct CyclicFilterResult {
  std::vector<CandidateMatch> kept;
  int rejected = 0;
};

// Relaxed cyclic consistency: keep (p_s, p_t) iff the backward match of p_t
// lands within max(tau_cc * max(h, w), patch_size) pixels of p_s. (h, w) are
// the object's bounding-box dimensions in pixels; the patch-size lower bound
// keeps the tolerance meaningful for small objects.
inline CyclicFilterResult cyclic_filter(const std::vector<CandidateMatch>& cands,
                                        const DenseFeatureMap& src,
                                        const DenseFeatureMap& tgt,
                                        const MaskImage& src_fg,
                                        const MaskImage& tgt_fg, double bbox_h,
                                        double bbox_w, double tau_cc,
                                        int patch_size) {
  require(tau_cc >= 0.0, "cyclic_filter: tolerance must be non-negative");
  require(patch_size >= 1, "cyclic_filter: patch size must be >= 1");
  CyclicFilterResult result;
  if (cands.empty()) return result;
  const auto src_cells = detail::matchable_cells(src, src_fg);
  require(!src_cells.empty(), "cyclic_filter: empty source foreground");
  const double tol =
      std::max(tau_cc * std::max(bbox_h, bbox_w),
               static_cast<double>(patch_size));
  std::vector<int> back(static_cast<size_t>(tgt.cell_count()), -1);
  for (const CandidateMatch& cand : cands) {
    require(cand.tgt_cell >= 0 && cand.tgt_cell < tgt.cell_count(),
            "cyclic_filter: candidate has no target cell");
    int& b = back[static_cast<size_t>(cand.tgt_cell)];
    if (b < 0) {
      const Eigen::RowVectorXd q = tgt.values.row(cand.tgt_cell);
      b = detail::nn_cell(q, src, src_cells);
    }
    const Vec2 back_pixel = src.center_pixel(b);
    if ((back_pixel - cand.p_src).norm() < tol) {
      result.kept.push_back(cand);
    } else {
      ++result.rejected;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// binary feature-map format: magic "GCFM", u32 version, grid_h, grid_w,
// channels, patch_size, then row-major cell-major float32 little-endian.

inline void save_feature_map(const DenseFeatureMap& map,
                             const std::string& path) {
  validate_feature_map(map);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open feature map file for writing: " + path);
  out.write("GCFM", 4);
  const auto put_u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(1u);
  put_u32(static_cast<uint32_t>(map.grid_h));
  put_u32(static_cast<uint32_t>(map.grid_w));
  put_u32(static_cast<uint32_t>(map.channels));
  put_u32(static_cast<uint32_t>(map.patch_size));
  static_assert(std::endian::native == std::endian::little,
                "feature map serialization assumes a little-endian host");
  for (int i = 0; i < map.cell_count(); ++i)
    for (int ch = 0; ch < map.channels; ++ch) {
      const float f = static_cast<float>(map.values(i, ch));
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  require(out.good(), "failed writing feature map: " + path);
}

inline DenseFeatureMap load_feature_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open feature map file: " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, "GCFM", 4) == 0,
          "not a feature map file (bad magic): " + path);
  const auto get_u32 = [&]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    require(in.good(), "truncated feature map file: " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
  };
  const uint32_t version = get_u32();
  require(version == 1, "unsupported feature map version in " + path);
  const uint32_t gh = get_u32(), gw = get_u32(), ch = get_u32(),
                 ps = get_u32();
  require(gh > 0 && gw > 0 && ch > 0 && ps >= 1,
          "feature map header has invalid dimensions: " + path);
  require(gh <= (1u << 20) && gw <= (1u << 20) && ch <= (1u << 20),
          "feature map dimensions unreasonably large: " + path);
  DenseFeatureMap map = make_feature_map(static_cast<int>(gh),
                                         static_cast<int>(gw),
                                         static_cast<int>(ch),
                                         static_cast<int>(ps));
  static_assert(std::endian::native == std::endian::little,
                "feature map serialization assumes a little-endian host");
  for (int i = 0; i < map.cell_count(); ++i)
    for (int c = 0; c < map.channels; ++c) {
      float f;
      in.read(reinterpret_cast<char*>(&f), 4);
      require(in.good(), "truncated feature map file: " + path);
      map.values(i, c) = static_cast<double>(f);
    }
  validate_feature_map(map);
  return map;
}

}  // namespace geocorr
