#pragma once

#include <string>
#include <vector>

#include "pseudoloop/box_ops.hpp"
#include "pseudoloop/coco.hpp"

namespace pseudoloop {

enum class CrossRoundBehavior {
  kFromScratch,  // round t merges into D_fs
  kAccumulate,   // round t merges into D^(t-1)
};

struct MergePolicy {
  // A pseudo box is dropped when its IoU with a same-image, same-class
  // reference box exceeds this. 1.0 disables suppression.
  double gt_suppression_iou = 0.5;
  CrossRoundBehavior cross_round_behavior = CrossRoundBehavior::kFromScratch;
};

struct MergeSummary {
  std::size_t kept_pseudo = 0;
  std::size_t dropped_pseudo = 0;
  std::size_t gt_count = 0;
};

struct MergeResult {
  Dataset dataset;
  MergeSummary summary;
};

// One Pseudo annotation per detection, ids allocated sequentially from
// max(base annotation id) + 1 in input order.
// Throws DataError(kUnresolvableReference).
std::vector<AnnotationRecord> to_pseudo_annotations(const PredictionSet& p,
                                                    const Dataset& base);

// gt plus every pseudo annotation that does not duplicate a reference box.
// Reference boxes are the GroundTruth annotations of gt; under kAccumulate
// the Pseudo annotations already in gt count as well, so a pseudo label
// carried over from an earlier round is not added twice.
// Throws DataError(kDuplicateId).
MergeResult merge_pseudo_with_summary(const Dataset& gt,
                                      const std::vector<AnnotationRecord>& pseudo,
                                      const MergePolicy& policy);

Dataset merge_pseudo(const Dataset& gt,
                     const std::vector<AnnotationRecord>& pseudo,
                     const MergePolicy& policy);

// Ingests b into a's id space. Image and annotation ids of b are shifted by
// max(a ids) + 1 in their respective tables; categories are unified by name.
// b's annotations keep their source, except that default-source
// (GroundTruth) annotations become External.
// Throws DataError(kCategoryConflict | kDuplicateId).
Dataset merge_datasets(const Dataset& a, const Dataset& b);

std::string summary_to_json(const MergeSummary& s);

}  // namespace pseudoloop
