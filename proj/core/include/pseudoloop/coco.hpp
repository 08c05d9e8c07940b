#pragma once

// COCO-style detection datasets: typed records, JSON parsing and
// serialization, invariant checking, and K-shot support sampling.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoloop/error.hpp"

namespace pseudoloop {

using ImageId = std::int64_t;
using CategoryId = std::int64_t;
using AnnotationId = std::int64_t;

// Axis-aligned box in COCO xywh form, real-valued pixel coordinates.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  // w > 0, h > 0, all fields finite.
  bool valid() const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct ImageRecord {
  ImageId id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct CategoryRecord {
  CategoryId id = 0;
  std::string name;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const CategoryRecord&, const CategoryRecord&) = default;
};

enum class AnnotationSource { kGroundTruth, kPseudo, kExternal };

std::string_view SourceName(AnnotationSource source);
std::optional<AnnotationSource> ParseSource(std::string_view name);

struct AnnotationRecord {
  AnnotationId id = 0;
  ImageId image_id = 0;
  CategoryId category_id = 0;
  BBox bbox;
  double area = 0.0;
  int iscrowd = 0;
  AnnotationSource source = AnnotationSource::kGroundTruth;
  // Present iff source == kPseudo.
  std::optional<double> score;
  nlohmann::json extra = nlohmann::json::object();

  bool is_ground_truth() const {
    return source == AnnotationSource::kGroundTruth;
  }

  friend bool operator==(const AnnotationRecord&,
                         const AnnotationRecord&) = default;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<CategoryRecord> categories;
  std::vector<AnnotationRecord> annotations;
  // Top-level keys other than the three tables (info, licenses, ...).
  nlohmann::json extra = nlohmann::json::object();

  const ImageRecord* find_image(ImageId id) const;
  const CategoryRecord* find_category(CategoryId id) const;
  // Largest annotation id, or nullopt when there are no annotations.
  std::optional<AnnotationId> max_annotation_id() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Violation {
  enum class Record { kImage, kCategory, kAnnotation };

  Record record;
  std::int64_t id;
  // kDuplicateId, kReferenceError or kSchemaViolation.
  ErrorKind kind;
  std::string rule;

  std::string describe() const;
};

// Empty iff every record invariant holds.
std::vector<Violation> validate(const Dataset& d);

// Structural parse only: JSON shape and field types are checked, record
// invariants are not. Throws DataError(kMalformedJson | kSchemaViolation).
Dataset parse_dataset_unchecked(std::string_view bytes);

// Structural parse followed by validate(); the first violation is raised as
// ReferenceError, DuplicateId or SchemaViolation.
Dataset parse_dataset(std::string_view bytes);

// Compact JSON. Record keys are emitted in a fixed order (see docs/format.md)
// followed by preserved unknown keys in lexicographic order, so equal
// datasets serialize to identical bytes.
std::string serialize_dataset(const Dataset& d);

// Keeps every image and category; keeps exactly k annotations per category,
// chosen uniformly without replacement with a generator seeded by `seed`.
// Output annotations retain their input order.
Dataset sample_support(const Dataset& d, std::size_t k, std::uint64_t seed);

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& d, const std::string& path);

}  // namespace pseudoloop
