#pragma once

#include "geocorr/core.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace geocorr {

// ---------------------------------------------------------------------------
// Keypoint annotations
// ---------------------------------------------------------------------------

struct KeypointAnnotation {
  std::string image_id;
  std::vector<Vec2> keypoints;    // pixel positions (x, y)
  std::vector<std::uint8_t> visible;
  double bbox_h = 0.0;
  double bbox_w = 0.0;
};

inline void validate_annotation(const KeypointAnnotation& anno) {
  require(anno.bbox_h > 0.0 && anno.bbox_w > 0.0,
          "annotation '" + anno.image_id + "': bbox sides must be positive");
  require(anno.visible.size() == anno.keypoints.size(),
          "annotation '" + anno.image_id +
              "': visibility flags must match keypoints");
  for (const auto& kp : anno.keypoints)
    require(std::isfinite(kp.x()) && std::isfinite(kp.y()),
            "annotation '" + anno.image_id + "': non-finite keypoint");
}

inline int visible_count(const KeypointAnnotation& anno) {
  int n = 0;
  for (auto v : anno.visible) n += v ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------
// PCK
// ---------------------------------------------------------------------------

/// Fraction of predictions within alpha * max(bbox_h, bbox_w) of their
/// ground-truth keypoint (inclusive boundary). Predictions are aligned with
/// the visible keypoints, in annotation order.
inline double pck(const std::vector<Vec2>& predictions,
                  const KeypointAnnotation& anno, double alpha) {
  validate_annotation(anno);
  require(alpha > 0.0, "pck: alpha must be positive");
  const int visible = visible_count(anno);
  require(visible > 0, "pck: no visible keypoints");
  require(static_cast<int>(predictions.size()) == visible,
          "pck: prediction count must equal the visible keypoint count");
  const double radius = alpha * std::max(anno.bbox_h, anno.bbox_w);
  int correct = 0, k = 0;
  for (size_t i = 0; i < anno.keypoints.size(); ++i) {
    if (!anno.visible[i]) continue;
    if ((predictions[static_cast<size_t>(k)] - anno.keypoints[i]).norm() <=
        radius)
      ++correct;
    ++k;
  }
  return static_cast<double>(correct) / visible;
}

/// Headline corpus metric: the per-image PCK values averaged over images.
inline double pck_mean_over_images(
    const std::vector<std::vector<Vec2>>& predictions,
    const std::vector<KeypointAnnotation>& annos, double alpha) {
  require(!annos.empty(), "pck_mean_over_images: no images");
  require(predictions.size() == annos.size(),
          "pck_mean_over_images: one prediction list per image required");
  double sum = 0.0;
  for (size_t i = 0; i < annos.size(); ++i)
    sum += pck(predictions[i], annos[i], alpha);
  return sum / static_cast<double>(annos.size());
}

/// Alternative pooled metric: every visible keypoint counts equally,
/// regardless of how many keypoints its image has.
inline double pck_pooled_over_keypoints(
    const std::vector<std::vector<Vec2>>& predictions,
    const std::vector<KeypointAnnotation>& annos, double alpha) {
  require(!annos.empty(), "pck_pooled_over_keypoints: no images");
  require(predictions.size() == annos.size(),
          "pck_pooled_over_keypoints: one prediction list per image required");
  double weighted = 0.0;
  long total = 0;
  for (size_t i = 0; i < annos.size(); ++i) {
    const int visible = visible_count(annos[i]);
    weighted += pck(predictions[i], annos[i], alpha) * visible;
    total += visible;
  }
  require(total > 0, "pck_pooled_over_keypoints: no visible keypoints");
  return weighted / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Filter validation
// ---------------------------------------------------------------------------

/// One annotated validation pair: the nearest-neighbor prediction for each
/// ground-truth keypoint, the matching target keypoint, and whether the
/// candidate survived the filter under test.
struct ValidationPair {
  std::vector<Vec2> predictions;
  std::vector<Vec2> gts;
  std::vector<std::uint8_t> kept;
  double bbox_h = 0.0;
  double bbox_w = 0.0;
};

struct FilterValidationResult {
  double fpr = 0.0;                 // surviving wrong predictions / total
  double mean_kept_per_pair = 0.0;  // average surviving candidates per pair
  long total = 0;
  long kept = 0;
  long wrong_kept = 0;
};

/// A prediction is wrong when it misses its keypoint under PCK at `alpha`;
/// wrong predictions that survive the filter are the false positives. The
/// rate is taken over all predictions, so rejecting candidates can never
/// increase it.
inline FilterValidationResult filter_validation(
    const std::vector<ValidationPair>& pairs, double alpha = 0.1) {
  require(!pairs.empty(), "filter_validation: empty validation set");
  require(alpha > 0.0, "filter_validation: alpha must be positive");
  FilterValidationResult result;
  for (const auto& pair : pairs) {
    require(pair.bbox_h > 0.0 && pair.bbox_w > 0.0,
            "filter_validation: bbox sides must be positive");
    require(pair.predictions.size() == pair.gts.size() &&
                pair.predictions.size() == pair.kept.size(),
            "filter_validation: predictions, gts, and kept flags must align");
    const double radius = alpha * std::max(pair.bbox_h, pair.bbox_w);
    for (size_t i = 0; i < pair.predictions.size(); ++i) {
      ++result.total;
      if (!pair.kept[i]) continue;
      ++result.kept;
      if ((pair.predictions[i] - pair.gts[i]).norm() > radius)
        ++result.wrong_kept;
    }
  }
  require(result.total > 0, "filter_validation: no predictions");
  result.fpr = static_cast<double>(result.wrong_kept) /
               static_cast<double>(result.total);
  result.mean_kept_per_pair =
      static_cast<double>(result.kept) / static_cast<double>(pairs.size());
  return result;
}

// ---------------------------------------------------------------------------
// Annotation JSON I/O
// ---------------------------------------------------------------------------

inline nlohmann::json annotation_to_json(const KeypointAnnotation& anno) {
  nlohmann::json row;
  row["image_id"] = anno.image_id;
  row["bbox_h"] = anno.bbox_h;
  row["bbox_w"] = anno.bbox_w;
  auto& kps = row["keypoints"] = nlohmann::json::array();
  for (const auto& kp : anno.keypoints)
    kps.push_back(nlohmann::json::array({kp.x(), kp.y()}));
  auto& vis = row["visible"] = nlohmann::json::array();
  for (auto v : anno.visible) vis.push_back(v ? 1 : 0);
  return row;
}

inline KeypointAnnotation annotation_from_json(const nlohmann::json& row) {
  KeypointAnnotation anno;
  try {
    anno.image_id = row.at("image_id").get<std::string>();
    anno.bbox_h = row.at("bbox_h").get<double>();
    anno.bbox_w = row.at("bbox_w").get<double>();
    for (const auto& kp : row.at("keypoints"))
      anno.keypoints.emplace_back(kp.at(0).get<double>(),
                                  kp.at(1).get<double>());
    for (const auto& v : row.at("visible"))
      anno.visible.push_back(v.get<int>() ? 1 : 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("annotation json: ") + e.what());
  }
  validate_annotation(anno);
  return anno;
}

inline std::vector<KeypointAnnotation> annotations_from_json_text(
    const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("annotation json: ") + e.what());
  }
  require(doc.is_array(), "annotation json: expected a top-level array");
  std::vector<KeypointAnnotation> annos;
  for (const auto& row : doc) annos.push_back(annotation_from_json(row));
  return annos;
}

}  // namespace geocorr
