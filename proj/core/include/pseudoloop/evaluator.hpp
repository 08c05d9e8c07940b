#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pseudoloop/box_ops.hpp"
#include "pseudoloop/coco.hpp"

namespace pseudoloop {

inline constexpr double kDefaultEvalIou = 0.5;

struct MatchRecord {
  std::size_t detection_index = 0;
  CategoryId category_id = 0;
  double score = 0.0;
  std::optional<AnnotationId> matched_gt;
  // IoU with the matched box, or the best IoU seen for a false positive.
  double iou = 0.0;
  bool tp = false;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ClassEval {
  CategoryId category_id = 0;
  std::string name;
  // Absent when the class has no ground truth; such classes are left out
  // of the mAP mean.
  std::optional<double> ap;
  std::size_t n_gt = 0;
  std::size_t n_tp = 0;
  std::size_t n_fp = 0;
  std::vector<PrPoint> pr_curve;
};

struct EvalReport {
  double map_50 = 0.0;
  double iou_thresh = kDefaultEvalIou;
  std::vector<ClassEval> per_class;  // category table order

  std::optional<double> ap(CategoryId id) const;
};

// Greedy score-ranked matching per (image, class). Only ground-truth source,
// non-crowd annotations participate. Output is indexed like p.detections.
// Throws DataError(kUnresolvableReference).
std::vector<MatchRecord> match_detections(const Dataset& gt,
                                          const PredictionSet& p,
                                          double iou_thresh = kDefaultEvalIou);

// All-point interpolated AP over the given matches (one class).
// Throws DataError(kNoGroundTruth) when n_gt == 0.
double average_precision(const std::vector<MatchRecord>& matches,
                         std::size_t n_gt);

std::vector<PrPoint> pr_curve(const std::vector<MatchRecord>& matches,
                              std::size_t n_gt);

EvalReport evaluate(const Dataset& gt, const PredictionSet& p,
                    double iou_thresh = kDefaultEvalIou);

std::string report_to_json(const EvalReport& report, bool with_pr_curves);
std::string report_to_table(const EvalReport& report);

}  // namespace pseudoloop
