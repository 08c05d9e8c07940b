#include "pseudoloop/merge.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace pseudoloop {

std::vector<AnnotationRecord> to_pseudo_annotations(const PredictionSet& p,
                                                    const Dataset& base) {
  std::unordered_set<ImageId> images;
  for (const auto& img : base.images) images.insert(img.id);
  std::unordered_set<CategoryId> categories;
  for (const auto& cat : base.categories) categories.insert(cat.id);

  AnnotationId next = base.max_annotation_id().value_or(0) + 1;
  std::vector<AnnotationRecord> out;
  out.reserve(p.detections.size());
  for (const auto& d : p.detections) {
    if (!images.contains(d.image_id) || !categories.contains(d.category_id)) {
      throw DataError(ErrorKind::kUnresolvableReference,
                      fmt::format("detection on image {} / category {} does "
                                  "not resolve against the base dataset",
                                  d.image_id, d.category_id));
    }
    AnnotationRecord a;
    a.id = next++;
    a.image_id = d.image_id;
    a.category_id = d.category_id;
    a.bbox = d.bbox;
    a.area = d.bbox.w * d.bbox.h;
    a.iscrowd = 0;
    a.source = AnnotationSource::kPseudo;
    a.score = d.score;
    out.push_back(std::move(a));
  }
  return out;
}

MergeResult merge_pseudo_with_summary(const Dataset& gt,
                                      const std::vector<AnnotationRecord>& pseudo,
                                      const MergePolicy& policy) {
  std::unordered_set<AnnotationId> ids;
  for (const auto& a : gt.annotations) ids.insert(a.id);
  for (const auto& a : pseudo) {
    if (!ids.insert(a.id).second) {
      throw DataError(ErrorKind::kDuplicateId,
                      fmt::format("pseudo annotation id {} collides", a.id));
    }
  }

  const bool accumulate =
      policy.cross_round_behavior == CrossRoundBehavior::kAccumulate;
  std::map<std::pair<ImageId, CategoryId>, std::vector<const BBox*>> reference;
  std::size_t gt_count = 0;
  for (const auto& a : gt.annotations) {
    if (a.is_ground_truth()) ++gt_count;
    if (a.is_ground_truth() ||
        (accumulate && a.source == AnnotationSource::kPseudo)) {
      reference[{a.image_id, a.category_id}].push_back(&a.bbox);
    }
  }

  MergeResult result;
  result.dataset = gt;
  result.summary.gt_count = gt_count;
  for (const auto& candidate : pseudo) {
    bool duplicate = false;
    if (auto it = reference.find({candidate.image_id, candidate.category_id});
        it != reference.end()) {
      duplicate = std::any_of(it->second.begin(), it->second.end(),
                              [&](const BBox* box) {
                                return iou(candidate.bbox, *box) >
                                       policy.gt_suppression_iou;
                              });
    }
    if (duplicate) {
      ++result.summary.dropped_pseudo;
    } else {
      ++result.summary.kept_pseudo;
      result.dataset.annotations.push_back(candidate);
    }
  }
  return result;
}

Dataset merge_pseudo(const Dataset& gt,
                     const std::vector<AnnotationRecord>& pseudo,
                     const MergePolicy& policy) {
  return merge_pseudo_with_summary(gt, pseudo, policy).dataset;
}

namespace {

template <typename Records>
std::int64_t max_id_or(const Records& records, std::int64_t fallback) {
  std::int64_t best = fallback;
  bool any = false;
  for (const auto& r : records) {
    best = any ? std::max(best, r.id) : r.id;
    any = true;
  }
  return best;
}

std::unordered_map<std::string, const CategoryRecord*> index_by_name(
    const Dataset& d, const char* label) {
  std::unordered_map<std::string, const CategoryRecord*> out;
  for (const auto& cat : d.categories) {
    auto [it, inserted] = out.emplace(cat.name, &cat);
    if (!inserted && it->second->id != cat.id) {
      throw DataError(ErrorKind::kCategoryConflict,
                      fmt::format("{} maps category name \"{}\" to ids {} and {}",
                                  label, cat.name, it->second->id, cat.id));
    }
  }
  return out;
}

}  // namespace

Dataset merge_datasets(const Dataset& a, const Dataset& b) {
  auto a_names = index_by_name(a, "first dataset");
  index_by_name(b, "second dataset");

  Dataset out = a;
  std::int64_t next_category = max_id_or(a.categories, 0) + 1;
  std::unordered_map<CategoryId, CategoryId> category_map;
  for (const auto& cat : b.categories) {
    if (category_map.contains(cat.id)) continue;
    if (auto it = a_names.find(cat.name); it != a_names.end()) {
      const CategoryRecord& existing = *it->second;
      auto super_a = existing.extra.find("supercategory");
      auto super_b = cat.extra.find("supercategory");
      if (super_a != existing.extra.end() && super_b != cat.extra.end() &&
          *super_a != *super_b) {
        throw DataError(ErrorKind::kCategoryConflict,
                        fmt::format("category \"{}\" has supercategory {} and {}",
                                    cat.name, super_a->dump(), super_b->dump()));
      }
      category_map[cat.id] = existing.id;
    } else {
      CategoryRecord added = cat;
      added.id = next_category++;
      category_map[cat.id] = added.id;
      out.categories.push_back(std::move(added));
    }
  }

  const std::int64_t image_offset = max_id_or(a.images, -1) + 1;
  const std::int64_t annotation_offset = max_id_or(a.annotations, -1) + 1;
  for (ImageRecord img : b.images) {
    img.id += image_offset;
    out.images.push_back(std::move(img));
  }
  for (AnnotationRecord ann : b.annotations) {
    ann.id += annotation_offset;
    ann.image_id += image_offset;
    if (auto it = category_map.find(ann.category_id); it != category_map.end()) {
      ann.category_id = it->second;
    }
    if (ann.source == AnnotationSource::kGroundTruth) {
      ann.source = AnnotationSource::kExternal;
    }
    out.annotations.push_back(std::move(ann));
  }

  for (const auto& v : validate(out)) {
    if (v.kind == ErrorKind::kDuplicateId) {
      throw DataError(ErrorKind::kDuplicateId, v.describe());
    }
  }
  return out;
}

std::string summary_to_json(const MergeSummary& s) {
  nlohmann::ordered_json o;
  o["kept_pseudo"] = s.kept_pseudo;
  o["dropped_pseudo"] = s.dropped_pseudo;
  o["gt_count"] = s.gt_count;
  return o.dump() + "\n";
}

}  // namespace pseudoloop
