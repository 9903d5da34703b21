#pragma once

#include "geocorr/core.hpp"
#include "geocorr/image.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iostream>
#include <vector>

namespace geocorr {

namespace detail {

// Large finite sentinel instead of +inf so parabola intersections never
// produce NaN. Any reachable squared distance is far below it.
constexpr double kFarAway = 1e20;

/// One-dimensional squared-distance lower envelope (Felzenszwalb &
/// Huttenlocher). `f` holds per-position seed costs, result overwrites `d`.
inline void squared_dt_1d(const std::vector<double>& f, std::vector<double>& d,
                          std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  d.resize(static_cast<size_t>(n));
  v.assign(static_cast<size_t>(n), 0);
  z.assign(static_cast<size_t>(n) + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -kFarAway;
  z[1] = kFarAway;
  for (int q = 1; q < n; ++q) {
    double s = ((f[static_cast<size_t>(q)] + q * q) -
                (f[static_cast<size_t>(v[static_cast<size_t>(k)])] +
                 v[static_cast<size_t>(k)] * v[static_cast<size_t>(k)])) /
               (2.0 * q - 2.0 * v[static_cast<size_t>(k)]);
    while (s <= z[static_cast<size_t>(k)]) {
      --k;
      s = ((f[static_cast<size_t>(q)] + q * q) -
           (f[static_cast<size_t>(v[static_cast<size_t>(k)])] +
            v[static_cast<size_t>(k)] * v[static_cast<size_t>(k)])) /
          (2.0 * q - 2.0 * v[static_cast<size_t>(k)]);
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = kFarAway;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < q) ++k;
    const int vk = v[static_cast<size_t>(k)];
    d[static_cast<size_t>(q)] = (q - vk) * (q - vk) + f[static_cast<size_t>(vk)];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance transform: for each pixel, the squared
/// pixel distance to the nearest seed (mask value 1). Pixels are treated as
/// lattice points; a seedless image comes back all kFarAway.
inline Eigen::MatrixXd squared_distance_transform(const MaskImage& seeds) {
  const int h = seeds.height, w = seeds.width;
  Eigen::MatrixXd grid(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      grid(r, c) = seeds.at(r, c) ? 0.0 : detail::kFarAway;

  std::vector<double> f, d;
  std::vector<int> v;
  std::vector<double> z;

  // columns
  f.resize(static_cast<size_t>(h));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[static_cast<size_t>(r)] = grid(r, c);
    detail::squared_dt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) grid(r, c) = d[static_cast<size_t>(r)];
  }
  // rows
  f.resize(static_cast<size_t>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[static_cast<size_t>(c)] = grid(r, c);
    detail::squared_dt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) grid(r, c) = d[static_cast<size_t>(c)];
  }
  return grid;
}

/// Complementary distance fields of a reference mask, both measured against
/// the mask after dilation:
///   outside(p) = squared distance to the nearest dilated-mask pixel / d
///   inside(p)  = squared distance to the nearest non-mask pixel / d
/// with d = sqrt(H^2 + W^2). If the dilated mask is empty the outside field
/// is defined as all-zero (and flagged); if it is full the inside field is
/// all-zero (and flagged).
struct DistanceFields {
  Eigen::MatrixXd outside;
  Eigen::MatrixXd inside;
  bool outside_degenerate = false;  // dilated mask was empty
  bool inside_degenerate = false;   // dilated mask was full
};

inline DistanceFields distance_fields(const MaskImage& mask, int dilation_radius) {
  const MaskImage dilated = dilate(mask, dilation_radius);
  const int h = dilated.height, w = dilated.width;
  const double d = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
  DistanceFields out;
  if (dilated.empty_mask()) {
    out.outside = Eigen::MatrixXd::Zero(h, w);
    out.outside_degenerate = true;
    std::clog << "distance_fields: mask empty after dilation; outside field zeroed\n";
  } else {
    out.outside = squared_distance_transform(dilated) / d;
  }
  if (dilated.full_mask()) {
    out.inside = Eigen::MatrixXd::Zero(h, w);
    out.inside_degenerate = true;
    std::clog << "distance_fields: mask full after dilation; inside field zeroed\n";
  } else {
    MaskImage complement(h, w);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) complement.at(r, c) = dilated.at(r, c) ? 0 : 1;
    out.inside = squared_distance_transform(complement) / d;
  }
  return out;
}

/// A scalar loss with its gradient with respect to every soft-mask pixel.
struct LossValueGrad {
  double value = 0.0;
  Eigen::MatrixXd grad;  // same shape as the soft mask
};

/// Silhouette alignment loss against precomputed distance fields:
///   L = (1/HW) * sum_p [ m(p) * outside(p) + inside(p) * (1 - lambda m(p)) ]
/// Pulls rendered mass inside the reference while the lambda-weighted term
/// rewards covering the interior.
inline LossValueGrad dt_loss(const Eigen::MatrixXd& soft_mask, const DistanceFields& fields,
                             double lambda) {
  require(soft_mask.rows() == fields.outside.rows() &&
              soft_mask.cols() == fields.outside.cols(),
          "dt_loss: soft mask / field size mismatch");
  const double n = static_cast<double>(soft_mask.size());
  LossValueGrad out;
  out.value = (soft_mask.cwiseProduct(fields.outside).sum() +
               fields.inside.sum() - lambda * soft_mask.cwiseProduct(fields.inside).sum()) /
              n;
  out.grad = (fields.outside - lambda * fields.inside) / n;
  return out;
}

/// Soft intersection-over-union loss: 1 - sum(m*ref) / sum(m + ref - m*ref).
/// Errors when both masks are identically zero.
inline LossValueGrad soft_iou_loss(const Eigen::MatrixXd& soft_mask,
                                   const Eigen::MatrixXd& ref_mask) {
  require(soft_mask.rows() == ref_mask.rows() && soft_mask.cols() == ref_mask.cols(),
          "soft_iou_loss: size mismatch");
  const Eigen::MatrixXd prod = soft_mask.cwiseProduct(ref_mask);
  const double inter = prod.sum();
  const double uni = soft_mask.sum() + ref_mask.sum() - inter;
  require(uni > 0.0, "soft_iou_loss: both masks are identically zero");
  LossValueGrad out;
  out.value = 1.0 - inter / uni;
  // dL/dm(p) = -( ref(p) * U - I * (1 - ref(p)) ) / U^2
  out.grad = -(ref_mask * uni - (Eigen::MatrixXd::Constant(ref_mask.rows(), ref_mask.cols(),
                                                           1.0) -
                                 ref_mask) *
                                    inter) /
             (uni * uni);
  return out;
}

}  // namespace geocorr
