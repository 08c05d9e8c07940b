#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pseudoloop/coco.hpp"

namespace pseudoloop {

struct Detection {
  ImageId image_id = 0;
  CategoryId category_id = 0;
  BBox bbox;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

// Raw or post-processed detector output for one self-training round.
struct PredictionSet {
  std::vector<Detection> detections;
  int round = 0;

  std::size_t size() const { return detections.size(); }
  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

// Intersection over union; 0 when the boxes do not overlap.
double iou(const BBox& a, const BBox& b);

// Keeps detections with score >= tau_s, preserving order.
PredictionSet filter_by_score(const PredictionSet& p, double tau_s);

// Greedy NMS run independently per (image_id, category_id) group. Within a
// group, detections are visited by descending score (earlier input index
// first on ties) and a kept detection suppresses every later one with
// iou > tau_n or identical geometry, so tau_n = 1 removes exact duplicates
// only. Output is ordered by (image_id, category_id, score desc).
PredictionSet class_wise_nms(const PredictionSet& p, double tau_n);

// Accepts a bare COCO results array or {"round": t, "detections": [...]}.
// Throws DataError(kMalformedPredictions).
PredictionSet parse_predictions(std::string_view bytes);

// Always emits the wrapper form.
std::string serialize_predictions(const PredictionSet& p);

PredictionSet load_predictions(const std::string& path);
void save_predictions(const PredictionSet& p, const std::string& path);

}  // namespace pseudoloop
