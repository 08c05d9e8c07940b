#pragma once
// Randomized property suites shared by the unit tests and the acceptance
// runner. Each returns the number of failing cases and the first failure.

#include <cstddef>
#include <string>

#include <fmt/format.h>

#include "generators.hpp"
#include "pseudoloop/box_ops.hpp"

namespace testsupport {

struct PropertyOutcome {
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::string first_failure;

  void fail(std::string what) {
    if (failures++ == 0) first_failure = std::move(what);
  }
};

// filter_by_score(p, t2) is a subsequence of filter_by_score(p, t1) for
// t1 <= t2, and every kept detection meets its threshold.
inline PropertyOutcome monotone_filter_property(std::size_t cases, std::uint64_t seed) {
  PropertyOutcome out;
  Rng rng(seed);
  for (std::size_t c = 0; c < cases; ++c, ++out.cases) {
    auto p = random_predictions(rng, 30, 4);
    double t1 = coin(rng) ? uniform_int(rng, 0, 10) / 10.0 : uniform(rng, 0.0, 1.0);
    double t2 = coin(rng) ? uniform_int(rng, 0, 10) / 10.0 : uniform(rng, 0.0, 1.0);
    if (t1 > t2) std::swap(t1, t2);
    auto low = pseudoloop::filter_by_score(p, t1);
    auto high = pseudoloop::filter_by_score(p, t2);
    std::size_t j = 0;
    bool subseq = true;
    for (const auto& d : high.detections) {
      while (j < low.detections.size() && !(low.detections[j] == d)) ++j;
      if (j == low.detections.size()) {
        subseq = false;
        break;
      }
      ++j;
    }
    bool thresholds = true;
    for (const auto& d : low.detections) thresholds &= d.score >= t1;
    for (const auto& d : high.detections) thresholds &= d.score >= t2;
    if (!subseq || !thresholds || high.round != p.round || low.round != p.round) {
      out.fail(fmt::format("case {}: t1={} t2={} |low|={} |high|={}", c, t1, t2,
                           low.size(), high.size()));
    }
  }
  return out;
}

inline PropertyOutcome nms_idempotence_property(std::size_t cases, std::uint64_t seed) {
  PropertyOutcome out;
  Rng rng(seed);
  for (std::size_t c = 0; c < cases; ++c, ++out.cases) {
    auto p = random_predictions(rng, 40, 4);
    const double tau = coin(rng) ? uniform_int(rng, 0, 10) / 10.0 : uniform(rng, 0.0, 1.0);
    auto once = pseudoloop::class_wise_nms(p, tau);
    auto twice = pseudoloop::class_wise_nms(once, tau);
    if (!(once == twice)) {
      out.fail(fmt::format("case {}: tau_n={} |once|={} |twice|={}", c, tau, once.size(),
                           twice.size()));
    }
  }
  return out;
}

// iou(a, b) == iou(b, a) exactly, stays in [0, 1], and iou(a, a) == 1.
inline PropertyOutcome iou_symmetry_property(std::size_t cases, std::uint64_t seed) {
  PropertyOutcome out;
  Rng rng(seed);
  for (std::size_t c = 0; c < cases; ++c, ++out.cases) {
    pseudoloop::BBox a = random_box(rng);
    pseudoloop::BBox b = coin(rng, 0.2) ? jitter(rng, a, 0.1) : random_box(rng);
    const double ab = pseudoloop::iou(a, b);
    const double ba = pseudoloop::iou(b, a);
    if (ab != ba || ab < 0.0 || ab > 1.0 || pseudoloop::iou(a, a) != 1.0 ||
        pseudoloop::iou(b, b) != 1.0) {
      out.fail(fmt::format("case {}: iou(a,b)={} iou(b,a)={}", c, ab, ba));
    }
  }
  return out;
}

}  // namespace testsupport
