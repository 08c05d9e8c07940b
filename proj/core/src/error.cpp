#include "pseudoloop/error.hpp"

#include <fmt/format.h>

namespace pseudoloop {

std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kMalformedJson: return "MalformedJson";
    case ErrorKind::kSchemaViolation: return "SchemaViolation";
    case ErrorKind::kReferenceError: return "ReferenceError";
    case ErrorKind::kDuplicateId: return "DuplicateId";
    case ErrorKind::kInsufficientInstances: return "InsufficientInstances";
    case ErrorKind::kUnresolvableReference: return "UnresolvableReference";
    case ErrorKind::kCategoryConflict: return "CategoryConflict";
    case ErrorKind::kNoGroundTruth: return "NoGroundTruth";
    case ErrorKind::kMalformedPredictions: return "MalformedPredictions";
    case ErrorKind::kMissingPredictionFile: return "MissingPredictionFile";
    case ErrorKind::kBackendFailure: return "BackendFailure";
    case ErrorKind::kTimeout: return "Timeout";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kIo: return "Io";
    case ErrorKind::kPrecondition: return "Precondition";
  }
  return "Unknown";
}

InsufficientInstances::InsufficientInstances(long long category_id,
                                             std::size_t available,
                                             std::size_t k)
    : DataError(ErrorKind::kInsufficientInstances,
                fmt::format("category {} has {} annotations, {} requested",
                            category_id, available, k)),
      category_id_(category_id),
      available_(available),
      requested_(k) {}

MissingPredictionFile::MissingPredictionFile(int round, const std::string& path)
    : DataError(ErrorKind::kMissingPredictionFile,
                fmt::format("no prediction file for round {}: {}", round, path)),
      round_(round) {}

}  // namespace pseudoloop
