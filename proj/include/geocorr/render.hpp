#pragma once

#include "geocorr/camera.hpp"
#include "geocorr/core.hpp"
#include "geocorr/distance_transform.hpp"
#include "geocorr/image.hpp"
#include "geocorr/mesh.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace geocorr {

namespace detail {

using Jac24 = Eigen::Matrix<double, 2, 4>;
using Row4 = Eigen::Matrix<double, 1, 4>;

inline double cross2(const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); }

// d/dtheta of cross2(U, V) when only U varies with theta (dU is 2x4).
inline Row4 cross2_du(const Jac24& du, const Vec2& v) {
  return du.row(0) * v.y() - du.row(1) * v.x();
}

// d/dtheta of cross2(U, V) when only V varies with theta.
inline Row4 cross2_dv(const Vec2& u, const Jac24& dv) {
  return u.x() * dv.row(1) - u.y() * dv.row(0);
}

/// A piece of the projected-coverage boundary with endpoint Jacobians with
/// respect to (log_scale, t).
struct BoundarySeg {
  Vec2 a, b;
  Jac24 ja, jb;
};

struct EdgeInterval {
  double lo = 0.0, hi = 1.0;
  int lo_tri = -1, lo_edge = -1;  // provenance of the entering clip (-1: edge endpoint)
  int hi_tri = -1, hi_edge = -1;
};

/// Clip the parameter range of segment p0->p1 against one oriented triangle.
/// Returns false when no part of the segment is covered.
inline bool clip_segment_triangle(const Vec2& p0, const Vec2& p1,
                                  const std::array<Vec2, 3>& tri, double orient, int tri_id,
                                  EdgeInterval& out) {
  out = EdgeInterval{};
  for (int k = 0; k < 3; ++k) {
    const Vec2& e0 = tri[static_cast<size_t>(k)];
    const Vec2& e1 = tri[static_cast<size_t>((k + 1) % 3)];
    const Vec2 ev = e1 - e0;
    const double f0 = orient * cross2(ev, p0 - e0);
    const double f1 = orient * cross2(ev, p1 - e0);
    if (f0 < 0.0 && f1 < 0.0) return false;
    if (f0 < 0.0) {  // entering
      const double s = f0 / (f0 - f1);
      if (s > out.lo) {
        out.lo = s;
        out.lo_tri = tri_id;
        out.lo_edge = k;
      }
    } else if (f1 < 0.0) {  // exiting
      const double s = f0 / (f0 - f1);
      if (s < out.hi) {
        out.hi = s;
        out.hi_tri = tri_id;
        out.hi_edge = k;
      }
    }
  }
  return out.lo < out.hi;
}

inline void merge_intervals(std::vector<EdgeInterval>& iv) {
  if (iv.empty()) return;
  std::sort(iv.begin(), iv.end(),
            [](const EdgeInterval& x, const EdgeInterval& y) { return x.lo < y.lo; });
  std::vector<EdgeInterval> merged;
  merged.push_back(iv[0]);
  for (size_t i = 1; i < iv.size(); ++i) {
    if (iv[i].lo > merged.back().hi) {
      merged.push_back(iv[i]);
    } else if (iv[i].hi > merged.back().hi) {
      merged.back().hi = iv[i].hi;
      merged.back().hi_tri = iv[i].hi_tri;
      merged.back().hi_edge = iv[i].hi_edge;
    }
  }
  iv = std::move(merged);
}

inline bool covered_at(const std::vector<EdgeInterval>& merged, double s) {
  for (const auto& m : merged) {
    if (s < m.lo) return false;
    if (s <= m.hi) return true;
  }
  return false;
}

}  // namespace detail

/// Result of a differentiable silhouette render. Values live on a canvas that
/// contains the camera frame plus enough margin to hold the whole silhouette,
/// so out-of-frame mass is observable. Canvas pixel (r, c) sits at image
/// coordinates (r + row0, c + col0); pixel centers are integer coordinates.
struct SoftRender {
  int row0 = 0, col0 = 0;
  int frame_height = 0, frame_width = 0;
  Eigen::MatrixXd values;                 // canvas soft mask in [0,1]
  std::array<Eigen::MatrixXd, 4> grads;   // d(value)/d(log_scale, tx, ty, tz)

  Eigen::MatrixXd frame_values() const {
    return values.block(-row0, -col0, frame_height, frame_width);
  }
  MaskImage frame_hard_mask() const { return binarize(frame_values()); }

  double total_mass() const { return values.sum(); }
  double in_frame_mass() const {
    return values.block(-row0, -col0, frame_height, frame_width).sum();
  }
  Eigen::Vector4d total_mass_grad() const {
    Eigen::Vector4d g;
    for (int k = 0; k < 4; ++k) g[k] = grads[static_cast<size_t>(k)].sum();
    return g;
  }
  Eigen::Vector4d in_frame_mass_grad() const {
    Eigen::Vector4d g;
    for (int k = 0; k < 4; ++k)
      g[k] = grads[static_cast<size_t>(k)]
                 .block(-row0, -col0, frame_height, frame_width)
                 .sum();
    return g;
  }
};

/// Differentiable silhouette: per pixel sigma(delta / kappa) where delta is
/// the signed pixel distance to the boundary of the union of projected
/// triangles (positive inside). Gradients flow through the closest boundary
/// feature of every pixel. Errors when every vertex is behind the camera or
/// nothing projects to a renderable triangle.
inline SoftRender render_soft_silhouette(const TriangleMesh& mesh, const CameraModel& cam,
                                         const PoseParams& pose, double kappa = 2.0) {
  require(!mesh.vertices.empty(), "render: empty mesh");
  require(kappa > 0.0, "render: kappa must be positive");
  require(cam.width > 0 && cam.height > 0, "render: camera frame size not set");

  const int nv = mesh.vertex_count();
  std::vector<ProjectionJet> proj(static_cast<size_t>(nv));
  bool any_in_front = false;
  for (int i = 0; i < nv; ++i) {
    proj[static_cast<size_t>(i)] = project_jet(cam, pose, mesh.vertices[static_cast<size_t>(i)]);
    any_in_front = any_in_front || !proj[static_cast<size_t>(i)].behind;
  }
  require(any_in_front, "render: all vertices behind camera");

  // Renderable faces: all three vertices in front, non-degenerate in 2D.
  struct Tri2 {
    std::array<int, 3> v;
    std::array<Vec2, 3> p;
    double orient;  // +1 CCW, -1 CW
    double min_x, max_x, min_y, max_y;
  };
  std::vector<Tri2> tris;
  double scale = 1.0;
  {
    double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x;
    double lo_y = lo_x, hi_y = -lo_x;
    for (int i = 0; i < nv; ++i)
      if (!proj[static_cast<size_t>(i)].behind) {
        lo_x = std::min(lo_x, proj[static_cast<size_t>(i)].pixel.x());
        hi_x = std::max(hi_x, proj[static_cast<size_t>(i)].pixel.x());
        lo_y = std::min(lo_y, proj[static_cast<size_t>(i)].pixel.y());
        hi_y = std::max(hi_y, proj[static_cast<size_t>(i)].pixel.y());
      }
    scale = std::max({1.0, hi_x - lo_x, hi_y - lo_y});
  }
  for (const auto& f : mesh.faces) {
    if (proj[static_cast<size_t>(f[0])].behind || proj[static_cast<size_t>(f[1])].behind ||
        proj[static_cast<size_t>(f[2])].behind)
      continue;
    Tri2 t;
    t.v = f;
    for (int k = 0; k < 3; ++k) t.p[static_cast<size_t>(k)] = proj[static_cast<size_t>(f[static_cast<size_t>(k)])].pixel;
    const double area2 = detail::cross2(t.p[1] - t.p[0], t.p[2] - t.p[0]);
    if (std::abs(area2) < 1e-12 * scale * scale) continue;
    t.orient = area2 > 0.0 ? 1.0 : -1.0;
    t.min_x = std::min({t.p[0].x(), t.p[1].x(), t.p[2].x()});
    t.max_x = std::max({t.p[0].x(), t.p[1].x(), t.p[2].x()});
    t.min_y = std::min({t.p[0].y(), t.p[1].y(), t.p[2].y()});
    t.max_y = std::max({t.p[0].y(), t.p[1].y(), t.p[2].y()});
    tris.push_back(t);
  }
  require(!tris.empty(), "render: no renderable faces (geometry degenerate or behind camera)");

  // --- boundary extraction ------------------------------------------------
  // For every undirected edge of the renderable set, find the sub-intervals
  // lying on the union boundary: offset the edge slightly to each side, clip
  // against all triangles, and keep spans covered on exactly one side.
  const double eps_off = 1e-7 * scale;
  const double min_len = 1e-5 * scale;

  struct EdgeKey {
    int a, b;
    bool operator<(const EdgeKey& o) const { return a < o.a || (a == o.a && b < o.b); }
  };
  std::vector<EdgeKey> edges;
  for (const auto& t : tris)
    for (int k = 0; k < 3; ++k) {
      int a = t.v[static_cast<size_t>(k)], b = t.v[static_cast<size_t>((k + 1) % 3)];
      if (a > b) std::swap(a, b);
      edges.push_back({a, b});
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](const EdgeKey& x, const EdgeKey& y) {
                            return x.a == y.a && x.b == y.b;
                          }),
              edges.end());

  std::vector<detail::BoundarySeg> segs;
  for (const auto& ek : edges) {
    const Vec2 a = proj[static_cast<size_t>(ek.a)].pixel;
    const Vec2 b = proj[static_cast<size_t>(ek.b)].pixel;
    const detail::Jac24& ja = proj[static_cast<size_t>(ek.a)].jac;
    const detail::Jac24& jb = proj[static_cast<size_t>(ek.b)].jac;
    const Vec2 e = b - a;
    const double len = e.norm();
    if (len < min_len) continue;
    const Vec2 nrm(-e.y() / len, e.x() / len);

    std::array<std::vector<detail::EdgeInterval>, 2> cover;
    const double edge_min_x = std::min(a.x(), b.x()) - eps_off;
    const double edge_max_x = std::max(a.x(), b.x()) + eps_off;
    const double edge_min_y = std::min(a.y(), b.y()) - eps_off;
    const double edge_max_y = std::max(a.y(), b.y()) + eps_off;
    for (size_t side = 0; side < 2; ++side) {
      const Vec2 off = (side == 0 ? eps_off : -eps_off) * nrm;
      const Vec2 p0 = a + off, p1 = b + off;
      for (size_t ti = 0; ti < tris.size(); ++ti) {
        const Tri2& t = tris[ti];
        if (t.max_x < edge_min_x || t.min_x > edge_max_x || t.max_y < edge_min_y ||
            t.min_y > edge_max_y)
          continue;
        detail::EdgeInterval iv;
        if (detail::clip_segment_triangle(p0, p1, t.p, t.orient, static_cast<int>(ti), iv))
          cover[side].push_back(iv);
      }
      detail::merge_intervals(cover[side]);
    }

    // sweep the combined breakpoints; boundary wherever exactly one side is covered
    struct Breakpoint {
      double s;
      int tri, edge;
    };
    std::vector<Breakpoint> bps = {{0.0, -1, -1}, {1.0, -1, -1}};
    for (const auto& side : cover)
      for (const auto& iv : side) {
        if (iv.lo > 0.0 && iv.lo < 1.0) bps.push_back({iv.lo, iv.lo_tri, iv.lo_edge});
        if (iv.hi > 0.0 && iv.hi < 1.0) bps.push_back({iv.hi, iv.hi_tri, iv.hi_edge});
      }
    std::sort(bps.begin(), bps.end(),
              [](const Breakpoint& x, const Breakpoint& y) { return x.s < y.s; });

    // accumulate maximal boundary runs
    int run_start = -1;
    for (size_t i = 0; i + 1 < bps.size(); ++i) {
      const double mid = 0.5 * (bps[i].s + bps[i + 1].s);
      const bool is_boundary = (bps[i + 1].s - bps[i].s) > 0.0 &&
                               (detail::covered_at(cover[0], mid) !=
                                detail::covered_at(cover[1], mid));
      if (is_boundary && run_start < 0) run_start = static_cast<int>(i);
      const bool closing = run_start >= 0 && (!is_boundary || i + 2 == bps.size());
      if (!closing) continue;
      const size_t end_idx = is_boundary ? i + 1 : i;
      const Breakpoint& lo_bp = bps[static_cast<size_t>(run_start)];
      const Breakpoint& hi_bp = bps[end_idx];
      run_start = -1;
      if ((hi_bp.s - lo_bp.s) * len < min_len) continue;

      // exact endpoint geometry + Jacobians
      auto resolve = [&](const Breakpoint& bp) -> std::pair<Vec2, detail::Jac24> {
        if (bp.tri < 0) return bp.s < 0.5 ? std::pair{a, ja} : std::pair{b, jb};
        // junction: edge (a,b) crossing triangle edge (c,d); both move with
        // the pose, so the crossing parameter s = cross(c-a, d-c)/cross(b-a,
        // d-c) is differentiated in every endpoint
        const Tri2& t = tris[static_cast<size_t>(bp.tri)];
        const int vc = t.v[static_cast<size_t>(bp.edge)];
        const int vd = t.v[static_cast<size_t>((bp.edge + 1) % 3)];
        const Vec2 c = proj[static_cast<size_t>(vc)].pixel;
        const Vec2 d = proj[static_cast<size_t>(vd)].pixel;
        const detail::Jac24& jc = proj[static_cast<size_t>(vc)].jac;
        const detail::Jac24& jd = proj[static_cast<size_t>(vd)].jac;
        const Vec2 dc = d - c;
        const double den = detail::cross2(b - a, dc);
        if (std::abs(den) < 1e-12 * scale) {
          // nearly parallel: freeze at the swept parameter, move with the edge
          return {a + bp.s * (b - a), ((1.0 - bp.s) * ja + bp.s * jb).eval()};
        }
        const double num = detail::cross2(c - a, dc);
        const double s_exact = num / den;
        const double s = std::abs(s_exact - bp.s) < 0.05 ? s_exact : bp.s;
        const detail::Row4 dnum = detail::cross2_du(jc - ja, dc) +
                                  detail::cross2_dv(c - a, jd - jc);
        const detail::Row4 dden = detail::cross2_du(jb - ja, dc) +
                                  detail::cross2_dv(b - a, jd - jc);
        const detail::Row4 ds = (dnum * den - num * dden) / (den * den);
        const detail::Jac24 jq = ja + (b - a) * ds + s * (jb - ja);
        return {a + s * (b - a), jq};
      };
      auto [qa, jqa] = resolve(lo_bp);
      auto [qb, jqb] = resolve(hi_bp);
      if ((qb - qa).norm() < min_len) continue;
      segs.push_back({qa, qb, jqa, jqb});
    }
  }
  require(!segs.empty(), "render: silhouette boundary is empty");

  // --- canvas layout ------------------------------------------------------
  const int margin = static_cast<int>(std::ceil(30.0 * kappa));
  double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x;
  double lo_y = lo_x, hi_y = -lo_x;
  for (const auto& t : tris) {
    lo_x = std::min(lo_x, t.min_x);
    hi_x = std::max(hi_x, t.max_x);
    lo_y = std::min(lo_y, t.min_y);
    hi_y = std::max(hi_y, t.max_y);
  }
  const int cap = 8;  // canvas never extends past 8 frame sizes in any direction
  const int row0 = std::clamp(static_cast<int>(std::floor(lo_y)) - margin,
                              -cap * cam.height, 0);
  const int col0 = std::clamp(static_cast<int>(std::floor(lo_x)) - margin,
                              -cap * cam.width, 0);
  const int row1 = std::clamp(static_cast<int>(std::ceil(hi_y)) + margin,
                              cam.height - 1, (cap + 1) * cam.height);
  const int col1 = std::clamp(static_cast<int>(std::ceil(hi_x)) + margin,
                              cam.width - 1, (cap + 1) * cam.width);
  const int ch = row1 - row0 + 1;
  const int cw = col1 - col0 + 1;

  SoftRender out;
  out.row0 = row0;
  out.col0 = col0;
  out.frame_height = cam.height;
  out.frame_width = cam.width;
  out.values.resize(ch, cw);
  for (auto& g : out.grads) g = Eigen::MatrixXd::Zero(ch, cw);

  // --- coverage (sign) ----------------------------------------------------
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> inside(ch, cw);
  inside.setConstant(false);
  for (const auto& t : tris) {
    const int r_lo = std::max(0, static_cast<int>(std::floor(t.min_y)) - row0);
    const int r_hi = std::min(ch - 1, static_cast<int>(std::ceil(t.max_y)) - row0);
    const int c_lo = std::max(0, static_cast<int>(std::floor(t.min_x)) - col0);
    const int c_hi = std::min(cw - 1, static_cast<int>(std::ceil(t.max_x)) - col0);
    for (int r = r_lo; r <= r_hi; ++r)
      for (int c = c_lo; c <= c_hi; ++c) {
        if (inside(r, c)) continue;
        const Vec2 p(c + col0, r + row0);
        const double f0 = t.orient * detail::cross2(t.p[1] - t.p[0], p - t.p[0]);
        const double f1 = t.orient * detail::cross2(t.p[2] - t.p[1], p - t.p[1]);
        const double f2 = t.orient * detail::cross2(t.p[0] - t.p[2], p - t.p[2]);
        if (f0 >= 0.0 && f1 >= 0.0 && f2 >= 0.0) inside(r, c) = true;
      }
  }

  // --- signed distance + gradient per pixel -------------------------------
  for (int r = 0; r < ch; ++r)
    for (int c = 0; c < cw; ++c) {
      const Vec2 p(c + col0, r + row0);
      double best_d2 = std::numeric_limits<double>::infinity();
      double best_t = 0.0;
      const detail::BoundarySeg* best = nullptr;
      for (const auto& s : segs) {
        const Vec2 e = s.b - s.a;
        const double ee = e.squaredNorm();
        double t = ee > 0.0 ? (p - s.a).dot(e) / ee : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const Vec2 m = s.a + t * e;
        const double d2 = (p - m).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          best_t = t;
          best = &s;
        }
      }
      const double d = std::sqrt(best_d2);
      const double sign = inside(r, c) ? 1.0 : -1.0;
      const double x = sign * d / kappa;
      out.values(r, c) = sigmoid(x);
      if (d < 1e-12 || std::abs(x) > 500.0) continue;  // flat or saturated
      const Vec2 m = best->a + best_t * (best->b - best->a);
      const Vec2 n = (p - m) / d;
      const detail::Jac24 jm = (1.0 - best_t) * best->ja + best_t * best->jb;
      const detail::Row4 dd = -(n.x() * jm.row(0) + n.y() * jm.row(1));
      const double sg = sigmoid_grad(x) / kappa;
      for (int k = 0; k < 4; ++k) out.grads[static_cast<size_t>(k)](r, c) = sg * sign * dd[k];
    }

  return out;
}

/// Hard binary rasterization at the camera frame: pixel centers covered by
/// any projected triangle. Same validity rules as the soft renderer.
inline MaskImage rasterize_hard(const TriangleMesh& mesh, const CameraModel& cam,
                                const PoseParams& pose) {
  SoftRender r = render_soft_silhouette(mesh, cam, pose, 1.0);
  MaskImage out(cam.height, cam.width);
  for (int row = 0; row < cam.height; ++row)
    for (int col = 0; col < cam.width; ++col)
      out.at(row, col) = r.values(row - r.row0, col - r.col0) >= 0.5 ? 1 : 0;
  return out;
}

/// Fraction of silhouette mass that falls outside the camera frame, with its
/// pose gradient. Errors when the silhouette carries no mass at all.
struct FractionGrad {
  double value = 0.0;
  Eigen::Vector4d grad = Eigen::Vector4d::Zero();
};

inline FractionGrad out_of_frame_fraction(const SoftRender& render) {
  const double total = render.total_mass();
  require(total > 0.0, "out_of_frame_fraction: zero total mass");
  const double in = render.in_frame_mass();
  const Eigen::Vector4d dtotal = render.total_mass_grad();
  const Eigen::Vector4d din = render.in_frame_mass_grad();
  FractionGrad out;
  out.value = 1.0 - in / total;
  out.grad = -(din * total - in * dtotal) / (total * total);
  return out;
}

/// Chain a per-pixel loss gradient (over the camera frame) through the
/// renderer to the four pose parameters.
inline Eigen::Vector4d chain_pose_grad(const Eigen::MatrixXd& loss_grad,
                                       const SoftRender& render) {
  require(loss_grad.rows() == render.frame_height && loss_grad.cols() == render.frame_width,
          "chain_pose_grad: gradient shape must match the camera frame");
  Eigen::Vector4d g = Eigen::Vector4d::Zero();
  for (int k = 0; k < 4; ++k)
    g[k] = loss_grad
               .cwiseProduct(render.grads[static_cast<size_t>(k)].block(
                   -render.row0, -render.col0, render.frame_height, render.frame_width))
               .sum();
  return g;
}

}  // namespace geocorr
