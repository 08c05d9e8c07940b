#pragma once

// Seeded synthetic detector. Detector quality is reduced to a per-class
// coverage scalar: how much of the hidden complete annotation set the
// current training annotations reproduce. Coverage drives recall, box
// jitter, true-positive confidence and the false-positive rate.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pseudoloop/box_ops.hpp"
#include "pseudoloop/coco.hpp"

namespace pseudoloop {

// All defaults are synthetic choices for the desk-scale world, not
// measured values.
struct SimulatorConfig {
  double p_min = 0.45;
  double p_max = 0.95;
  double sigma_max = 0.25;
  double beta = 0.8;
  double lambda_fp_max = 3.0;
  double lambda_fp_min = 0.3;
  double conf_tp_alpha = 4.0;
  // Competence before any fine-tuning: the simulator backend's effective
  // coverage is zero_shot + (1 - zero_shot) * coverage(train, hidden).
  double zero_shot = 0.6;
  // Exponent on label precision when the backend computes coverage; 0
  // makes wrong pseudo labels harmless.
  double noise_exponent = 7.0;
  std::uint64_t seed = 0;

  // Returns an empty string when the invariants hold.
  std::string check() const;
  friend bool operator==(const SimulatorConfig&, const SimulatorConfig&) = default;
};

struct WorldParams {
  int n_images = 80;
  int n_classes = 3;
  int min_instances = 3;
  int max_instances = 8;
  std::size_t k_shot = 1;
  std::uint64_t seed = 0;
  int image_width = 640;
  int image_height = 480;
  // Same-class instances in one image never overlap more than this.
  double max_same_class_iou = 0.3;

  friend bool operator==(const WorldParams&, const WorldParams&) = default;
};

struct World {
  Dataset hidden_gt;      // train images, every instance annotated
  Dataset visible_train;  // train images, k annotations per class
  Dataset query_gt;       // held-out images, every instance annotated

  std::vector<ImageId> train_image_ids() const;
  std::vector<ImageId> query_image_ids() const;
};

using CoverageMap = std::map<CategoryId, double>;

// Images 1..n; the first ceil(n/2) are the train split.
// Throws InsufficientInstances when a class has fewer than k_shot train
// instances.
World make_world(const WorldParams& params);

// Per class: recall * precision^noise_exponent, where recall is hidden
// instances matched / hidden instances and precision is training
// annotations that match a hidden instance / training annotations (1 when
// there are none). Matching is greedy by descending IoU within each
// (image, class), one-to-one, IoU >= 0.5. Classes with no hidden instances
// get 0. With the default exponent this is the plain matched fraction.
// Throws DataError(kUnresolvableReference) when a training annotation
// points outside the hidden image/category tables.
CoverageMap coverage(const Dataset& train_annotations, const Dataset& hidden_gt,
                     double noise_exponent = 0.0);

// Raw detections for the requested images (hidden_gt or query_gt). The
// random stream for each image is keyed by (cfg.seed, round, image_id).
PredictionSet simulate_predictions(const World& w, const CoverageMap& cov,
                                   const SimulatorConfig& cfg,
                                   const std::vector<ImageId>& image_ids,
                                   int round);

std::string simulator_config_to_json(const SimulatorConfig& cfg);
SimulatorConfig simulator_config_from_json(std::string_view bytes);

// Writes hidden_gt.json, visible_train.json, query_gt.json and config.json.
void save_world(const World& w, const WorldParams& params,
                const SimulatorConfig& cfg, const std::filesystem::path& dir);
World load_world(const std::filesystem::path& dir);
SimulatorConfig load_world_simulator_config(const std::filesystem::path& dir);

}  // namespace pseudoloop
