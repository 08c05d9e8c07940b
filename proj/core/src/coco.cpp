#include "pseudoloop/coco.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <boost/random/uniform_int_distribution.hpp>
#include <fmt/format.h>

#include "pseudoloop/io.hpp"
#include "pseudoloop/rng.hpp"

namespace pseudoloop {

using nlohmann::json;
using nlohmann::ordered_json;

bool BBox::valid() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
         std::isfinite(h) && w > 0.0 && h > 0.0;
}

std::string_view SourceName(AnnotationSource source) {
  switch (source) {
    case AnnotationSource::kGroundTruth: return "gt";
    case AnnotationSource::kPseudo: return "pseudo";
    case AnnotationSource::kExternal: return "external";
  }
  return "gt";
}

std::optional<AnnotationSource> ParseSource(std::string_view name) {
  if (name == "gt") return AnnotationSource::kGroundTruth;
  if (name == "pseudo") return AnnotationSource::kPseudo;
  if (name == "external") return AnnotationSource::kExternal;
  return std::nullopt;
}

const ImageRecord* Dataset::find_image(ImageId id) const {
  auto it = std::find_if(images.begin(), images.end(),
                         [id](const ImageRecord& r) { return r.id == id; });
  return it == images.end() ? nullptr : &*it;
}

const CategoryRecord* Dataset::find_category(CategoryId id) const {
  auto it = std::find_if(categories.begin(), categories.end(),
                         [id](const CategoryRecord& r) { return r.id == id; });
  return it == categories.end() ? nullptr : &*it;
}

std::optional<AnnotationId> Dataset::max_annotation_id() const {
  if (annotations.empty()) return std::nullopt;
  AnnotationId best = annotations.front().id;
  for (const auto& a : annotations) best = std::max(best, a.id);
  return best;
}

std::string Violation::describe() const {
  std::string_view what = record == Record::kImage      ? "image"
                          : record == Record::kCategory ? "category"
                                                        : "annotation";
  return fmt::format("{} {}: {} ({})", what, id, rule, ErrorKindName(kind));
}

std::vector<Violation> validate(const Dataset& d) {
  std::vector<Violation> out;
  auto report = [&out](Violation::Record rec, std::int64_t id, ErrorKind kind,
                       std::string rule) {
    out.push_back(Violation{rec, id, kind, std::move(rule)});
  };

  std::unordered_set<ImageId> image_ids;
  for (const auto& img : d.images) {
    if (!image_ids.insert(img.id).second) {
      report(Violation::Record::kImage, img.id, ErrorKind::kDuplicateId,
             "duplicate image id");
    }
    if (img.width <= 0 || img.height <= 0) {
      report(Violation::Record::kImage, img.id, ErrorKind::kSchemaViolation,
             "width and height must be positive");
    }
  }

  std::unordered_set<CategoryId> category_ids;
  for (const auto& cat : d.categories) {
    if (!category_ids.insert(cat.id).second) {
      report(Violation::Record::kCategory, cat.id, ErrorKind::kDuplicateId,
             "duplicate category id");
    }
    if (cat.name.empty()) {
      report(Violation::Record::kCategory, cat.id, ErrorKind::kSchemaViolation,
             "name must be non-empty");
    }
  }

  std::unordered_set<AnnotationId> annotation_ids;
  for (const auto& a : d.annotations) {
    constexpr auto kAnn = Violation::Record::kAnnotation;
    if (!annotation_ids.insert(a.id).second) {
      report(kAnn, a.id, ErrorKind::kDuplicateId, "duplicate annotation id");
    }
    if (!image_ids.contains(a.image_id)) {
      report(kAnn, a.id, ErrorKind::kReferenceError,
             fmt::format("image_id {} does not resolve", a.image_id));
    }
    if (!category_ids.contains(a.category_id)) {
      report(kAnn, a.id, ErrorKind::kReferenceError,
             fmt::format("category_id {} does not resolve", a.category_id));
    }
    if (!a.bbox.valid()) {
      report(kAnn, a.id, ErrorKind::kSchemaViolation,
             "bbox must be finite with w > 0 and h > 0");
    } else if (!std::isfinite(a.area) || a.area <= 0.0) {
      report(kAnn, a.id, ErrorKind::kSchemaViolation, "area must be positive");
    }
    if (a.iscrowd != 0 && a.iscrowd != 1) {
      report(kAnn, a.id, ErrorKind::kSchemaViolation, "iscrowd must be 0 or 1");
    }
    const bool pseudo = a.source == AnnotationSource::kPseudo;
    if (pseudo && !a.score) {
      report(kAnn, a.id, ErrorKind::kSchemaViolation,
             "pseudo annotation requires a score");
    }
    if (!pseudo && a.score) {
      report(kAnn, a.id, ErrorKind::kSchemaViolation,
             "score is only allowed on pseudo annotations");
    }
    if (a.score && !(*a.score >= 0.0 && *a.score <= 1.0)) {
      report(kAnn, a.id, ErrorKind::kSchemaViolation,
             "score must lie in [0, 1]");
    }
  }
  return out;
}

namespace {

[[noreturn]] void schema_error(const std::string& where,
                               std::string_view what) {
  throw DataError(ErrorKind::kSchemaViolation,
                  fmt::format("{}: {}", where, what));
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(where, fmt::format("missing \"{}\"", key));
  return *it;
}

std::int64_t as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) schema_error(where, "expected integer");
  return v.get<std::int64_t>();
}

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) schema_error(where, "expected number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) schema_error(where, "expected string");
  return v.get<std::string>();
}

json collect_extra(const json& obj, std::initializer_list<std::string_view> known) {
  json extra = json::object();
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      extra[it.key()] = it.value();
    }
  }
  return extra;
}

const json& require_array(const json& root, const char* key) {
  const json& arr = require(root, key, "dataset");
  if (!arr.is_array()) schema_error(key, "expected array");
  return arr;
}

ImageRecord parse_image(const json& obj, const std::string& where) {
  if (!obj.is_object()) schema_error(where, "expected object");
  ImageRecord r;
  r.id = as_int(require(obj, "id", where), where + ".id");
  r.file_name = as_string(require(obj, "file_name", where), where + ".file_name");
  auto dim = [&](const char* key) {
    std::int64_t v = as_int(require(obj, key, where), where + "." + key);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      schema_error(where + "." + key, "out of range");
    }
    return static_cast<int>(v);
  };
  r.width = dim("width");
  r.height = dim("height");
  r.extra = collect_extra(obj, {"id", "file_name", "width", "height"});
  return r;
}

CategoryRecord parse_category(const json& obj, const std::string& where) {
  if (!obj.is_object()) schema_error(where, "expected object");
  CategoryRecord r;
  r.id = as_int(require(obj, "id", where), where + ".id");
  r.name = as_string(require(obj, "name", where), where + ".name");
  r.extra = collect_extra(obj, {"id", "name"});
  return r;
}

BBox parse_bbox(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) {
    schema_error(where, "expected [x, y, w, h]");
  }
  return BBox{as_number(v[0], where), as_number(v[1], where),
              as_number(v[2], where), as_number(v[3], where)};
}

AnnotationRecord parse_annotation(const json& obj, const std::string& where) {
  if (!obj.is_object()) schema_error(where, "expected object");
  AnnotationRecord r;
  r.id = as_int(require(obj, "id", where), where + ".id");
  r.image_id = as_int(require(obj, "image_id", where), where + ".image_id");
  r.category_id =
      as_int(require(obj, "category_id", where), where + ".category_id");
  r.bbox = parse_bbox(require(obj, "bbox", where), where + ".bbox");
  if (auto it = obj.find("area"); it != obj.end()) {
    r.area = as_number(*it, where + ".area");
  } else {
    r.area = r.bbox.area();
  }
  if (auto it = obj.find("iscrowd"); it != obj.end()) {
    std::int64_t crowd = as_int(*it, where + ".iscrowd");
    if (crowd != 0 && crowd != 1) schema_error(where + ".iscrowd", "expected 0 or 1");
    r.iscrowd = static_cast<int>(crowd);
  }
  if (auto it = obj.find("source"); it != obj.end()) {
    std::string name = as_string(*it, where + ".source");
    auto source = ParseSource(name);
    if (!source) {
      schema_error(where + ".source", fmt::format("unknown source \"{}\"", name));
    }
    r.source = *source;
  }
  if (auto it = obj.find("score"); it != obj.end()) {
    r.score = as_number(*it, where + ".score");
  }
  r.extra = collect_extra(obj, {"id", "image_id", "category_id", "bbox", "area",
                                "iscrowd", "source", "score"});
  return r;
}

void append_extra(ordered_json& out, const json& extra) {
  if (extra.empty()) return;
  // json is backed by std::map, so this walks keys in sorted order.
  ordered_json sorted = ordered_json::parse(extra.dump());
  for (auto it = sorted.begin(); it != sorted.end(); ++it) {
    out[it.key()] = it.value();
  }
}

}  // namespace

Dataset parse_dataset_unchecked(std::string_view bytes) {
  json root;
  try {
    root = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw DataError(ErrorKind::kMalformedJson, e.what());
  }
  if (!root.is_object()) schema_error("dataset", "expected a JSON object");

  Dataset d;
  const json& images = require_array(root, "images");
  d.images.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    d.images.push_back(parse_image(images[i], fmt::format("images[{}]", i)));
  }
  const json& categories = require_array(root, "categories");
  d.categories.reserve(categories.size());
  for (std::size_t i = 0; i < categories.size(); ++i) {
    d.categories.push_back(
        parse_category(categories[i], fmt::format("categories[{}]", i)));
  }
  // A bare image list (no annotations key) is a valid unlabeled set.
  if (root.contains("annotations")) {
    const json& annotations = require_array(root, "annotations");
    d.annotations.reserve(annotations.size());
    for (std::size_t i = 0; i < annotations.size(); ++i) {
      d.annotations.push_back(
          parse_annotation(annotations[i], fmt::format("annotations[{}]", i)));
    }
  }
  d.extra = collect_extra(root, {"images", "categories", "annotations"});
  return d;
}

Dataset parse_dataset(std::string_view bytes) {
  Dataset d = parse_dataset_unchecked(bytes);
  auto violations = validate(d);
  if (!violations.empty()) {
    const Violation& first = violations.front();
    throw DataError(first.kind, first.describe());
  }
  return d;
}

std::string serialize_dataset(const Dataset& d) {
  ordered_json root = ordered_json::object();

  ordered_json images = ordered_json::array();
  for (const auto& img : d.images) {
    ordered_json o;
    o["id"] = img.id;
    o["file_name"] = img.file_name;
    o["width"] = img.width;
    o["height"] = img.height;
    append_extra(o, img.extra);
    images.push_back(std::move(o));
  }

  ordered_json categories = ordered_json::array();
  for (const auto& cat : d.categories) {
    ordered_json o;
    o["id"] = cat.id;
    o["name"] = cat.name;
    append_extra(o, cat.extra);
    categories.push_back(std::move(o));
  }

  ordered_json annotations = ordered_json::array();
  for (const auto& a : d.annotations) {
    ordered_json o;
    o["id"] = a.id;
    o["image_id"] = a.image_id;
    o["category_id"] = a.category_id;
    o["bbox"] = {a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h};
    o["area"] = a.area;
    o["iscrowd"] = a.iscrowd;
    if (a.source != AnnotationSource::kGroundTruth) {
      o["source"] = SourceName(a.source);
    }
    if (a.score) o["score"] = *a.score;
    append_extra(o, a.extra);
    annotations.push_back(std::move(o));
  }

  root["images"] = std::move(images);
  root["categories"] = std::move(categories);
  root["annotations"] = std::move(annotations);
  append_extra(root, d.extra);
  return root.dump() + "\n";
}

Dataset sample_support(const Dataset& d, std::size_t k, std::uint64_t seed) {
  std::map<CategoryId, std::vector<std::size_t>> by_category;
  for (const auto& cat : d.categories) by_category[cat.id];
  for (std::size_t i = 0; i < d.annotations.size(); ++i) {
    by_category[d.annotations[i].category_id].push_back(i);
  }

  std::vector<char> keep(d.annotations.size(), 0);
  for (auto& [category, indices] : by_category) {
    if (indices.size() < k) {
      throw InsufficientInstances(category, indices.size(), k);
    }
    // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
    Engine engine = make_engine(seed, {category});
    for (std::size_t i = 0; i < k; ++i) {
      boost::random::uniform_int_distribution<std::size_t> pick(
          i, indices.size() - 1);
      std::swap(indices[i], indices[pick(engine)]);
      keep[indices[i]] = 1;
    }
  }

  Dataset out;
  out.images = d.images;
  out.categories = d.categories;
  out.extra = d.extra;
  for (std::size_t i = 0; i < d.annotations.size(); ++i) {
    if (keep[i]) out.annotations.push_back(d.annotations[i]);
  }
  return out;
}

Dataset load_dataset(const std::string& path) {
  return parse_dataset(read_file(path));
}

void save_dataset(const Dataset& d, const std::string& path) {
  write_file_atomic(path, serialize_dataset(d));
}

}  // namespace pseudoloop
