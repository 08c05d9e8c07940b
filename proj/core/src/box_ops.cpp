#include "pseudoloop/box_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pseudoloop/io.hpp"

namespace pseudoloop {

double iou(const BBox& a, const BBox& b) {
  const double ix = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double iy = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  // Areas from the xyxy extents so that iou(b, b) is exactly 1.
  const double area_a = (a.right() - a.x) * (a.bottom() - a.y);
  const double area_b = (b.right() - b.x) * (b.bottom() - b.y);
  const double inter = ix * iy;
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

PredictionSet filter_by_score(const PredictionSet& p, double tau_s) {
  PredictionSet out;
  out.round = p.round;
  std::copy_if(p.detections.begin(), p.detections.end(),
               std::back_inserter(out.detections),
               [tau_s](const Detection& d) { return d.score >= tau_s; });
  return out;
}

PredictionSet class_wise_nms(const PredictionSet& p, double tau_n) {
  const auto& dets = p.detections;
  // Sorting by (image, category, score desc, index) makes every group a
  // contiguous run already in visiting order.
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&dets](std::size_t l, std::size_t r) {
    const Detection& a = dets[l];
    const Detection& b = dets[r];
    return std::tuple(a.image_id, a.category_id, -a.score, l) <
           std::tuple(b.image_id, b.category_id, -b.score, r);
  });

  PredictionSet out;
  out.round = p.round;
  std::vector<char> suppressed(order.size(), 0);
  std::size_t begin = 0;
  while (begin < order.size()) {
    const Detection& head = dets[order[begin]];
    std::size_t end = begin;
    while (end < order.size() && dets[order[end]].image_id == head.image_id &&
           dets[order[end]].category_id == head.category_id) {
      ++end;
    }
    for (std::size_t i = begin; i < end; ++i) {
      if (suppressed[i]) continue;
      const Detection& kept = dets[order[i]];
      out.detections.push_back(kept);
      for (std::size_t j = i + 1; j < end; ++j) {
        const BBox& other = dets[order[j]].bbox;
        if (!suppressed[j] && (iou(kept.bbox, other) > tau_n || kept.bbox == other)) {
          suppressed[j] = 1;
        }
      }
    }
    begin = end;
  }
  return out;
}

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw DataError(ErrorKind::kMalformedPredictions, what);
}

Detection parse_detection(const nlohmann::json& obj, std::size_t index) {
  const std::string where = fmt::format("detections[{}]", index);
  if (!obj.is_object()) malformed(where + ": expected object");
  auto integer = [&](const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_number_integer()) {
      malformed(fmt::format("{}.{}: expected integer", where, key));
    }
    return it->get<std::int64_t>();
  };
  Detection d;
  d.image_id = integer("image_id");
  d.category_id = integer("category_id");
  auto bbox = obj.find("bbox");
  if (bbox == obj.end() || !bbox->is_array() || bbox->size() != 4 ||
      !std::all_of(bbox->begin(), bbox->end(),
                   [](const nlohmann::json& v) { return v.is_number(); })) {
    malformed(where + ".bbox: expected [x, y, w, h]");
  }
  d.bbox = BBox{(*bbox)[0].get<double>(), (*bbox)[1].get<double>(),
                (*bbox)[2].get<double>(), (*bbox)[3].get<double>()};
  if (!d.bbox.valid()) malformed(where + ".bbox: degenerate box");
  auto score = obj.find("score");
  if (score == obj.end() || !score->is_number()) {
    malformed(where + ".score: expected number");
  }
  d.score = score->get<double>();
  if (!(d.score >= 0.0 && d.score <= 1.0)) {
    malformed(where + ".score: outside [0, 1]");
  }
  return d;
}

}  // namespace

PredictionSet parse_predictions(std::string_view bytes) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    malformed(e.what());
  }
  PredictionSet p;
  const nlohmann::json* list = &root;
  if (root.is_object()) {
    auto round = root.find("round");
    if (round != root.end()) {
      if (!round->is_number_integer() || round->get<std::int64_t>() < 0) {
        malformed("round: expected non-negative integer");
      }
      p.round = round->get<int>();
    }
    auto dets = root.find("detections");
    if (dets == root.end()) malformed("missing \"detections\"");
    list = &*dets;
  }
  if (!list->is_array()) malformed("expected an array of detections");
  p.detections.reserve(list->size());
  for (std::size_t i = 0; i < list->size(); ++i) {
    p.detections.push_back(parse_detection((*list)[i], i));
  }
  return p;
}

std::string serialize_predictions(const PredictionSet& p) {
  nlohmann::ordered_json root;
  root["round"] = p.round;
  auto& dets = root["detections"] = nlohmann::ordered_json::array();
  for (const auto& d : p.detections) {
    nlohmann::ordered_json o;
    o["image_id"] = d.image_id;
    o["category_id"] = d.category_id;
    o["bbox"] = {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h};
    o["score"] = d.score;
    dets.push_back(std::move(o));
  }
  return root.dump() + "\n";
}

PredictionSet load_predictions(const std::string& path) {
  return parse_predictions(read_file(path));
}

void save_predictions(const PredictionSet& p, const std::string& path) {
  write_file_atomic(path, serialize_predictions(p));
}

}  // namespace pseudoloop
