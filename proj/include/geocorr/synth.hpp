#pragma once

#include "geocorr/camera.hpp"
#include "geocorr/core.hpp"
#include "geocorr/feature_map.hpp"
#include "geocorr/mesh.hpp"
#include "geocorr/raycast.hpp"
#include "geocorr/render.hpp"
#include "geocorr/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace geocorr {

/// Unit right tetrahedron at the origin corner; bounding diagonal sqrt(3).
inline TriangleMesh make_tetra() {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.faces = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
  finalize_mesh(m);
  return m;
}

/// Axis-aligned unit cube centered at the origin, 12 triangles.
inline TriangleMesh make_cube() {
  TriangleMesh m;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        m.vertices.emplace_back(x - 0.5, y - 0.5, z - 0.5);
  auto quad = [&](int a, int b, int c, int d) {
    m.faces.push_back({a, b, c});
    m.faces.push_back({a, c, d});
  };
  quad(0, 1, 3, 2);  // z = -0.5
  quad(4, 6, 7, 5);  // z = +0.5
  quad(0, 4, 5, 1);  // y = -0.5
  quad(2, 3, 7, 6);  // y = +0.5
  quad(0, 2, 6, 4);  // x = -0.5
  quad(1, 5, 7, 3);  // x = +0.5
  finalize_mesh(m);
  return m;
}

/// Unit-radius icosphere: icosahedron subdivided `subdivisions` times, with
/// every vertex projected onto the unit sphere.
inline TriangleMesh make_icosphere(int subdivisions) {
  TriangleMesh m;
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {
      {-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 p = (v[static_cast<size_t>(a)] + v[static_cast<size_t>(b)]).normalized();
      v.push_back(p);
      const int idx = static_cast<int>(v.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> nf;
    nf.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int ab = mid(t[0], t[1]);
      const int bc = mid(t[1], t[2]);
      const int ca = mid(t[2], t[0]);
      nf.push_back({t[0], ab, ca});
      nf.push_back({t[1], bc, ab});
      nf.push_back({t[2], ca, bc});
      nf.push_back({ab, bc, ca});
    }
    f = std::move(nf);
  }
  m.vertices = std::move(v);
  m.faces = std::move(f);
  finalize_mesh(m);
  return m;
}

/// Planar triangle strip: k faces over k+2 vertices, zig-zagging along x.
inline TriangleMesh make_strip(int k) {
  require(k >= 1, "make_strip: need at least one face");
  TriangleMesh m;
  for (int i = 0; i < k + 2; ++i)
    m.vertices.emplace_back(0.5 * i, (i % 2 == 0) ? 0.0 : 1.0, 0.0);
  for (int i = 0; i < k; ++i) m.faces.push_back({i, i + 1, i + 2});
  finalize_mesh(m);
  return m;
}

/// Jittered triangulated grid patch with rows*cols vertices; connected and
/// generic (random heights make shortest paths unique with probability 1).
inline TriangleMesh make_random_grid_mesh(int rows, int cols, Rng& rng) {
  require(rows >= 2 && cols >= 2, "make_random_grid_mesh: need a 2x2 grid at least");
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  std::uniform_real_distribution<double> height(-0.5, 0.5);
  TriangleMesh m;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m.vertices.emplace_back(c + jitter(rng), r + jitter(rng), height(rng));
  auto at = [&](int r, int c) { return r * cols + c; };
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) {
      m.faces.push_back({at(r, c), at(r, c + 1), at(r + 1, c)});
      m.faces.push_back({at(r, c + 1), at(r + 1, c + 1), at(r + 1, c)});
    }
  finalize_mesh(m);
  return m;
}

/// Synthetic per-vertex descriptors: six half-space response channels (how
/// strongly the vertex direction from the bounding-box center aligns with
/// each axis direction) plus three normalized position channels. Nearby
/// vertices get similar rows, opposite sides get dissimilar ones.
inline Eigen::MatrixXd make_synthetic_descriptors(const TriangleMesh& mesh) {
  const Vec3 center = mesh.aabb_center();
  const double diag = bounding_diag(mesh);
  const int nv = mesh.vertex_count();
  Eigen::MatrixXd desc(nv, 9);
  const std::array<Vec3, 6> axes = {Vec3(1, 0, 0),  Vec3(-1, 0, 0), Vec3(0, 1, 0),
                                    Vec3(0, -1, 0), Vec3(0, 0, 1),  Vec3(0, 0, -1)};
  for (int i = 0; i < nv; ++i) {
    const Vec3 rel = mesh.vertices[static_cast<size_t>(i)] - center;
    Vec3 dir = rel;
    if (dir.norm() > 1e-12 * diag) dir.normalize();
    for (int a = 0; a < 6; ++a)
      desc(i, a) = 2.0 * std::max(0.0, dir.dot(axes[static_cast<size_t>(a)]));
    desc(i, 6) = rel.x() / diag;
    desc(i, 7) = rel.y() / diag;
    desc(i, 8) = rel.z() / diag;
  }
  return desc;
}

/// Side-disjoint per-vertex descriptors for mirror-mismatch experiments:
/// two one-hot-gated blocks of four channels, the left block active for
/// vertices left of the x = AABB-center plane and the right block otherwise.
/// Within a block the pattern (1, |x~|, y~, z~) is mirror-symmetric, so a
/// vertex and its mirror twin share the pattern but never the block; the
/// descriptor-space nearest neighbor provably stays on the vertex's own side.
inline Eigen::MatrixXd make_mirror_coded_descriptors(const TriangleMesh& mesh) {
  const Vec3 center = mesh.aabb_center();
  const Vec3 half = 0.5 * (mesh.aabb_max() - mesh.aabb_min());
  const double diag = bounding_diag(mesh);
  const double hx = std::max(half.x(), 1e-12 * diag);
  const double hy = std::max(half.y(), 1e-12 * diag);
  const double hz = std::max(half.z(), 1e-12 * diag);
  const int nv = mesh.vertex_count();
  Eigen::MatrixXd desc = Eigen::MatrixXd::Zero(nv, 8);
  for (int i = 0; i < nv; ++i) {
    const Vec3 rel = mesh.vertices[static_cast<size_t>(i)] - center;
    const double xs = rel.x() / hx;
    const int block = (xs < 0.0) ? 0 : 4;
    desc(i, block + 0) = 1.0;
    desc(i, block + 1) = std::abs(xs);
    desc(i, block + 2) = rel.y() / hy;
    desc(i, block + 3) = rel.z() / hz;
  }
  return desc;
}

/// For each vertex, the index of the vertex closest to its reflection across
/// the x = AABB-center plane. Errors unless every reflection lands on an
/// existing vertex within 1e-9 * diag (i.e. the mesh is mirror-symmetric).
inline std::vector<int> mirror_partner_map(const TriangleMesh& mesh) {
  const double cx = mesh.aabb_center().x();
  const double tol = 1e-9 * bounding_diag(mesh);
  const int nv = mesh.vertex_count();
  std::vector<int> partner(static_cast<size_t>(nv), -1);
  for (int i = 0; i < nv; ++i) {
    Vec3 want = mesh.vertices[static_cast<size_t>(i)];
    want.x() = 2.0 * cx - want.x();
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nv; ++j) {
      const double d = (mesh.vertices[static_cast<size_t>(j)] - want).norm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    require(best >= 0 && best_d <= tol,
            "mirror_partner_map: mesh is not mirror-symmetric about its "
            "x-center plane");
    partner[static_cast<size_t>(i)] = best;
  }
  return partner;
}

/// Parametric mesh factory: kind is one of "tetra", "cube", "strip(k)",
/// "icosphere(n)". Output carries mirror-coded descriptors.
inline TriangleMesh make_mesh(const std::string& kind, uint64_t seed) {
  TriangleMesh mesh;
  const auto arg_of = [&](const std::string& name) -> std::optional<int> {
    if (kind.rfind(name + "(", 0) != 0 || kind.back() != ')')
      return std::nullopt;
    const std::string inner =
        kind.substr(name.size() + 1, kind.size() - name.size() - 2);
    try {
      return std::stoi(inner);
    } catch (...) {
      throw Error("make_mesh: bad argument in kind '" + kind + "'");
    }
  };
  if (kind == "tetra") {
    mesh = make_tetra();
  } else if (kind == "cube") {
    mesh = make_cube();
  } else if (auto n = arg_of("icosphere")) {
    require(*n >= 0 && *n <= 6, "make_mesh: icosphere subdivisions out of range");
    mesh = make_icosphere(*n);
  } else if (auto k = arg_of("strip")) {
    mesh = make_strip(*k);
  } else {
    throw Error("make_mesh: unknown kind '" + kind +
                "' (expected tetra, cube, icosphere(n), or strip(k))");
  }
  (void)seed;  // the parametric shapes are deterministic; seed kept for API
  mesh.descriptors = make_mirror_coded_descriptors(mesh);
  return mesh;
}

// ---------------------------------------------------------------------------
// synthetic scenes and planted-candidate pairs

/// One synthetic single-view reconstruction with ground truth attached.
struct SynthScene {
  TriangleMesh mesh;  // descriptors attached
  CameraModel camera;
  PoseParams gt_pose;
  MaskImage gt_mask;  // hard render at gt_pose; thresholding reproduces it
  std::string coding = "mirror-blocks";
  uint64_t seed = 0;
};

/// A candidate correspondence with its construction label.
struct PlantedCandidate {
  CandidateMatch cand;
  bool planted = false;  // true: p_tgt is the mirror twin's projection
  int src_vertex = -1;   // vertex whose projection is p_src
  int tgt_vertex = -1;   // vertex whose projection is p_tgt
};

struct SynthPair {
  SynthScene src;
  SynthScene tgt;
  std::vector<PlantedCandidate> candidates;
  std::vector<int> mirror;  // vertex -> mirror twin (shared by both scenes)
};

struct PairParams {
  int icosphere_subdivisions = 3;
  int image_size = 120;
  double focal = 110.0;
  double camera_distance = 4.0;
  int candidate_count = 50;
  double log_scale_min = 0.05;
  double log_scale_max = 0.3;
  double translation_jitter = 0.05;
  // the target view's yaw offset is drawn from ±this bound; keeping it well
  // under 90 degrees guarantees both views share a wide visible band, so the
  // correct- and planted-candidate pools stay large
  double yaw_max_deg = 60.0;
  // planted candidates only come from vertices at least this far (as a
  // fraction of the x half-extent) from the mirror plane...
  double side_margin = 0.2;
  // ...and whose twin projects at least this fraction of max(bbox h, w)
  // away from the true landing spot, so a planted match is unambiguously
  // wrong under a 0.1-of-bbox correctness radius.
  double pixel_margin_frac = 0.12;
};

namespace detail {

/// A vertex is liftable in a view when the ray through its exact projected
/// pixel hits the mesh within 1e-6 * diag of the vertex itself (front-facing
/// and unoccluded, in generic position).
inline std::vector<std::optional<Vec2>> liftable_projections(
    const SynthScene& scene) {
  const TriangleMesh& mesh = scene.mesh;
  const double diag = bounding_diag(mesh);
  std::vector<std::optional<Vec2>> out(
      static_cast<size_t>(mesh.vertex_count()));
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    const Projection proj =
        project(scene.camera, scene.gt_pose, mesh.vertices[static_cast<size_t>(v)]);
    if (proj.behind) continue;
    const double margin = 2.0;
    if (proj.pixel.x() < margin || proj.pixel.y() < margin ||
        proj.pixel.x() > scene.camera.width - 1 - margin ||
        proj.pixel.y() > scene.camera.height - 1 - margin)
      continue;
    const ObjectRay ray =
        pixel_ray(scene.camera, scene.gt_pose, proj.pixel.x(), proj.pixel.y());
    const auto hit = raycast(ray.origin, ray.direction, mesh, diag);
    if (!hit) continue;
    if ((hit->position - mesh.vertices[static_cast<size_t>(v)]).norm() >
        1e-6 * diag)
      continue;
    out[static_cast<size_t>(v)] = proj.pixel;
  }
  return out;
}

inline void mask_bbox(const MaskImage& mask, double& bbox_h, double& bbox_w) {
  int r0 = mask.height, r1 = -1, c0 = mask.width, c1 = -1;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  require(r1 >= r0, "mask_bbox: empty mask");
  bbox_h = r1 - r0 + 1;
  bbox_w = c1 - c0 + 1;
}

}  // namespace detail

/// Build one synthetic pair: the target scene is the source mesh under a
/// random yaw and scale, seen by the same camera. Candidates pair the exact
/// projections of liftable vertices; `mismatch_fraction` of them are planted
/// mirror mismatches (p_tgt is the twin's projection), the rest are correct.
inline SynthPair make_pair(const PairParams& params, double mismatch_fraction,
                           uint64_t root_seed, uint64_t pair_index = 0) {
  require(mismatch_fraction >= 0.0 && mismatch_fraction <= 1.0,
          "make_pair: mismatch fraction must lie in [0, 1]");
  require(params.candidate_count >= 0, "make_pair: negative candidate count");

  SynthPair pair;
  TriangleMesh base = make_icosphere(params.icosphere_subdivisions);
  base.descriptors = make_mirror_coded_descriptors(base);
  pair.mirror = mirror_partner_map(base);

  CameraModel cam;
  cam.fx = cam.fy = params.focal;
  cam.cx = cam.cy = (params.image_size - 1) * 0.5;
  cam.width = cam.height = params.image_size;
  cam.rotation = Mat3::Identity();
  cam.translation = Vec3(0, 0, params.camera_distance);

  auto rng = make_rng(root_seed, "synth_pair", pair_index);
  std::uniform_real_distribution<double> uscale(params.log_scale_min,
                                                params.log_scale_max);
  std::uniform_real_distribution<double> ujit(-params.translation_jitter,
                                              params.translation_jitter);
  std::uniform_real_distribution<double> uyaw(-params.yaw_max_deg,
                                              params.yaw_max_deg);

  const auto build_scene = [&](bool rotate) {
    SynthScene scene;
    scene.mesh = base;
    if (rotate)
      rotate_mesh_yaw(scene.mesh, scene.mesh.aabb_center(), uyaw(rng));
    scene.camera = cam;
    scene.gt_pose.log_scale = uscale(rng);
    scene.gt_pose.translation = Vec3(ujit(rng), ujit(rng), ujit(rng));
    scene.gt_mask = rasterize_hard(scene.mesh, scene.camera, scene.gt_pose);
    scene.seed = root_seed;
    return scene;
  };
  pair.src = build_scene(false);
  pair.tgt = build_scene(true);

  const auto src_proj = detail::liftable_projections(pair.src);
  const auto tgt_proj = detail::liftable_projections(pair.tgt);

  double bbox_h = 0, bbox_w = 0;
  detail::mask_bbox(pair.tgt.gt_mask, bbox_h, bbox_w);
  const double pixel_margin =
      params.pixel_margin_frac * std::max(bbox_h, bbox_w);

  const Vec3 center = base.aabb_center();
  const double half_x =
      std::max(0.5 * (base.aabb_max().x() - base.aabb_min().x()),
               1e-12 * bounding_diag(base));

  std::vector<int> correct_pool, planted_pool;
  for (int v = 0; v < base.vertex_count(); ++v) {
    if (!src_proj[static_cast<size_t>(v)]) continue;
    if (tgt_proj[static_cast<size_t>(v)]) correct_pool.push_back(v);
    const int m = pair.mirror[static_cast<size_t>(v)];
    if (m == v || !tgt_proj[static_cast<size_t>(m)]) continue;
    const double xs =
        (base.vertices[static_cast<size_t>(v)].x() - center.x()) / half_x;
    if (std::abs(xs) < params.side_margin) continue;
    // the twin's landing must be unambiguously wrong in the target image
    const Projection true_spot = project(
        pair.tgt.camera, pair.tgt.gt_pose, pair.tgt.mesh.vertices[static_cast<size_t>(v)]);
    if (true_spot.behind) continue;
    if ((*tgt_proj[static_cast<size_t>(m)] - true_spot.pixel).norm() <=
        pixel_margin)
      continue;
    planted_pool.push_back(v);
  }

  const int want_planted = static_cast<int>(
      std::lround(mismatch_fraction * params.candidate_count));
  const int want_correct = params.candidate_count - want_planted;
  require(want_correct == 0 || !correct_pool.empty(),
          "make_pair: no vertex is liftable in both views");
  require(want_planted == 0 || !planted_pool.empty(),
          "make_pair: no vertex satisfies the planted-mismatch margins");
  std::shuffle(correct_pool.begin(), correct_pool.end(), rng);
  std::shuffle(planted_pool.begin(), planted_pool.end(), rng);
  // candidates are independent match hypotheses, so when more are requested
  // than the pool holds, vertices repeat (draw with replacement)
  const auto draw = [&rng](const std::vector<int>& pool, int k) {
    if (k < static_cast<int>(pool.size()))
      return pool[static_cast<size_t>(k)];
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
  };

  for (int k = 0; k < want_correct; ++k) {
    const int v = draw(correct_pool, k);
    PlantedCandidate pc;
    pc.cand.p_src = *src_proj[static_cast<size_t>(v)];
    pc.cand.p_tgt = *tgt_proj[static_cast<size_t>(v)];
    pc.src_vertex = v;
    pc.tgt_vertex = v;
    pc.planted = false;
    pair.candidates.push_back(pc);
  }
  for (int k = 0; k < want_planted; ++k) {
    const int v = draw(planted_pool, k);
    const int m = pair.mirror[static_cast<size_t>(v)];
    PlantedCandidate pc;
    pc.cand.p_src = *src_proj[static_cast<size_t>(v)];
    pc.cand.p_tgt = *tgt_proj[static_cast<size_t>(m)];
    pc.src_vertex = v;
    pc.tgt_vertex = m;
    pc.planted = true;
    pair.candidates.push_back(pc);
  }
  std::shuffle(pair.candidates.begin(), pair.candidates.end(), rng);
  return pair;
}

}  // namespace geocorr
