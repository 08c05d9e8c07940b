#include "pseudoloop/evaluator.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace pseudoloop {

std::optional<double> EvalReport::ap(CategoryId id) const {
  for (const auto& c : per_class) {
    if (c.category_id == id) return c.ap;
  }
  return std::nullopt;
}

namespace {

struct GroupKey {
  ImageId image;
  CategoryId category;
  friend bool operator==(const GroupKey&, const GroupKey&) = default;
};

struct GroupKeyHash {
  std::size_t operator()(const GroupKey& k) const {
    return std::hash<std::int64_t>()(k.image) * 1000003u ^
           std::hash<std::int64_t>()(k.category);
  }
};

bool counts_as_gt(const AnnotationRecord& a) {
  return a.is_ground_truth() && a.iscrowd == 0;
}

// Score descending, then detection index ascending.
std::vector<std::size_t> rank_order(const std::vector<MatchRecord>& matches) {
  std::vector<std::size_t> order(matches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return std::tuple(-matches[l].score, matches[l].detection_index) <
           std::tuple(-matches[r].score, matches[r].detection_index);
  });
  return order;
}

}  // namespace

std::vector<MatchRecord> match_detections(const Dataset& gt,
                                          const PredictionSet& p,
                                          double iou_thresh) {
  std::unordered_set<ImageId> images;
  for (const auto& img : gt.images) images.insert(img.id);
  std::unordered_set<CategoryId> categories;
  for (const auto& cat : gt.categories) categories.insert(cat.id);

  std::unordered_map<GroupKey, std::vector<const AnnotationRecord*>, GroupKeyHash>
      gt_groups;
  for (const auto& a : gt.annotations) {
    if (counts_as_gt(a)) gt_groups[{a.image_id, a.category_id}].push_back(&a);
  }

  const auto& dets = p.detections;
  std::vector<MatchRecord> out(dets.size());
  std::unordered_map<GroupKey, std::vector<std::size_t>, GroupKeyHash> det_groups;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    if (!images.contains(d.image_id) || !categories.contains(d.category_id)) {
      throw DataError(
          ErrorKind::kUnresolvableReference,
          fmt::format("detection {} references image {} / category {} not in "
                      "the ground truth",
                      i, d.image_id, d.category_id));
    }
    out[i].detection_index = i;
    out[i].category_id = d.category_id;
    out[i].score = d.score;
    det_groups[{d.image_id, d.category_id}].push_back(i);
  }

  for (auto& [key, members] : det_groups) {
    std::stable_sort(members.begin(), members.end(),
                     [&dets](std::size_t l, std::size_t r) {
                       return dets[l].score > dets[r].score;
                     });
    auto it = gt_groups.find(key);
    if (it == gt_groups.end()) continue;  // every detection stays a fp
    const auto& boxes = it->second;
    std::vector<char> taken(boxes.size(), 0);
    for (std::size_t idx : members) {
      double best = -1.0;
      std::size_t best_j = boxes.size();
      for (std::size_t j = 0; j < boxes.size(); ++j) {
        if (taken[j]) continue;
        double v = iou(dets[idx].bbox, boxes[j]->bbox);
        if (v > best) {
          best = v;
          best_j = j;
        }
      }
      if (best_j == boxes.size()) continue;
      out[idx].iou = best;
      if (best >= iou_thresh) {
        taken[best_j] = 1;
        out[idx].tp = true;
        out[idx].matched_gt = boxes[best_j]->id;
      }
    }
  }
  return out;
}

std::vector<PrPoint> pr_curve(const std::vector<MatchRecord>& matches,
                              std::size_t n_gt) {
  std::vector<PrPoint> curve;
  curve.reserve(matches.size());
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t i : rank_order(matches)) {
    ++seen;
    if (matches[i].tp) ++tp;
    curve.push_back({n_gt ? static_cast<double>(tp) / n_gt : 0.0,
                     static_cast<double>(tp) / seen});
  }
  return curve;
}

double average_precision(const std::vector<MatchRecord>& matches,
                         std::size_t n_gt) {
  if (n_gt == 0) {
    throw DataError(ErrorKind::kNoGroundTruth,
                    "average precision needs at least one ground-truth box");
  }
  auto curve = pr_curve(matches, n_gt);
  // Precision envelope: max precision at any recall >= r.
  for (std::size_t i = curve.size(); i-- > 1;) {
    curve[i - 1].precision = std::max(curve[i - 1].precision, curve[i].precision);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (const auto& pt : curve) {
    if (pt.recall > prev_recall) {
      ap += (pt.recall - prev_recall) * pt.precision;
      prev_recall = pt.recall;
    }
  }
  return std::clamp(ap, 0.0, 1.0);
}

EvalReport evaluate(const Dataset& gt, const PredictionSet& p,
                    double iou_thresh) {
  auto matches = match_detections(gt, p, iou_thresh);

  std::unordered_map<CategoryId, std::size_t> n_gt;
  for (const auto& a : gt.annotations) {
    if (counts_as_gt(a)) ++n_gt[a.category_id];
  }
  std::unordered_map<CategoryId, std::vector<MatchRecord>> by_class;
  for (const auto& m : matches) by_class[m.category_id].push_back(m);

  EvalReport report;
  report.iou_thresh = iou_thresh;
  double sum = 0.0;
  std::size_t scored = 0;
  for (const auto& cat : gt.categories) {
    ClassEval ce;
    ce.category_id = cat.id;
    ce.name = cat.name;
    ce.n_gt = n_gt[cat.id];
    const auto& ms = by_class[cat.id];
    ce.n_tp = static_cast<std::size_t>(
        std::count_if(ms.begin(), ms.end(), [](const MatchRecord& m) { return m.tp; }));
    ce.n_fp = ms.size() - ce.n_tp;
    if (ce.n_gt > 0) {
      ce.ap = average_precision(ms, ce.n_gt);
      ce.pr_curve = pr_curve(ms, ce.n_gt);
      sum += *ce.ap;
      ++scored;
    }
    report.per_class.push_back(std::move(ce));
  }
  report.map_50 = scored ? sum / static_cast<double>(scored) : 0.0;
  return report;
}

std::string report_to_json(const EvalReport& report, bool with_pr_curves) {
  nlohmann::ordered_json root;
  root["map_50"] = report.map_50;
  root["iou_thresh"] = report.iou_thresh;
  auto& per_class = root["per_class"] = nlohmann::ordered_json::array();
  for (const auto& c : report.per_class) {
    nlohmann::ordered_json o;
    o["category_id"] = c.category_id;
    o["name"] = c.name;
    o["ap"] = c.ap ? nlohmann::ordered_json(*c.ap) : nlohmann::ordered_json();
    o["n_gt"] = c.n_gt;
    o["n_tp"] = c.n_tp;
    o["n_fp"] = c.n_fp;
    per_class.push_back(std::move(o));
  }
  if (with_pr_curves) {
    auto& curves = root["pr_curves"] = nlohmann::ordered_json::array();
    for (const auto& c : report.per_class) {
      nlohmann::ordered_json o;
      o["category_id"] = c.category_id;
      auto& pts = o["points"] = nlohmann::ordered_json::array();
      for (const auto& pt : c.pr_curve) pts.push_back({pt.recall, pt.precision});
      curves.push_back(std::move(o));
    }
  }
  return root.dump() + "\n";
}

std::string report_to_table(const EvalReport& report) {
  std::size_t name_width = 8;
  for (const auto& c : report.per_class) {
    name_width = std::max(name_width, c.name.size());
  }
  std::string out = fmt::format("{:>8}  {:<{}}  {:>7}  {:>6}  {:>6}  {:>6}\n",
                                "id", "category", name_width,
                                fmt::format("AP@{:g}", report.iou_thresh),
                                "n_gt", "n_tp", "n_fp");
  for (const auto& c : report.per_class) {
    std::string ap = c.ap ? fmt::format("{:.4f}", *c.ap) : std::string("-");
    out += fmt::format("{:>8}  {:<{}}  {:>7}  {:>6}  {:>6}  {:>6}\n",
                       c.category_id, c.name, name_width, ap, c.n_gt, c.n_tp,
                       c.n_fp);
  }
  out += fmt::format("mAP@{:.2f} = {:.4f}\n", report.iou_thresh, report.map_50);
  return out;
}

}  // namespace pseudoloop
