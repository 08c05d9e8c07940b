#pragma once

// The self-training loop: for t = 1..T, fine-tune on D^(t-1), predict on
// the training images, drop low-score boxes, run class-wise NMS, turn the
// survivors into pseudo annotations and merge them with the few-shot set.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pseudoloop/backend.hpp"
#include "pseudoloop/coco.hpp"
#include "pseudoloop/evaluator.hpp"
#include "pseudoloop/merge.hpp"
#include "pseudoloop/simulator.hpp"

namespace pseudoloop {

struct PipelineConfig {
  int rounds = 3;
  double tau_s = 0.6;
  double tau_n = 0.5;
  double eval_iou = kDefaultEvalIou;
  MergePolicy merge_policy;
  BackendDescriptor backend;
  bool eval_each_round = true;
  bool reset_weights_each_round = true;
  int epochs_hint = 0;
  // Seeds the simulator backend when the driver builds it.
  std::uint64_t seed = 0;
  // Empty: no artifacts are written.
  std::filesystem::path run_dir;

  // Empty when the configuration is usable.
  std::string check() const;
};

struct StageCounts {
  std::size_t raw = 0;
  std::size_t after_filter = 0;
  std::size_t after_nms = 0;
  std::size_t pseudo_kept = 0;
  std::size_t pseudo_dropped = 0;
};

struct RoundTimings {
  double train_ms = 0.0;
  double predict_ms = 0.0;
  double postprocess_ms = 0.0;
  double eval_ms = 0.0;
};

struct RoundReport {
  int round = 0;
  StageCounts counts;
  MergeSummary merge;
  // Query-set evaluation of the model fine-tuned on D^(round-1).
  std::optional<EvalReport> eval;
  RoundTimings timings;
};

struct PipelineResult {
  Dataset final_dataset;  // D^(T)
  std::vector<RoundReport> rounds;
  // Query-set evaluation of a model fine-tuned on D^(T); present whenever a
  // query set was supplied.
  std::optional<EvalReport> final_eval;
};

// Artifacts, when cfg.run_dir is set:
//   round_<t>/train.json       D^(t-1), the set the backend was tuned on
//   round_<t>/raw_preds.json   backend output on the training images
//   round_<t>/kept_preds.json  after score filter and NMS
//   round_<t>/merged.json      D^(t)
//   round_<t>/report.json      counts, merge summary, evaluation
//   round_<t>/query_preds.json query predictions (when evaluated)
//   final/report.json          evaluation after tuning on D^(T)
//   timings.json               wall-clock timings (not deterministic)
// Every file is written atomically. A backend failure aborts the run and
// leaves the completed rounds in place.
PipelineResult run_pipeline(const Dataset& d_fs, const std::vector<ImageId>& images,
                            const PipelineConfig& cfg, const Dataset* query,
                            DetectorBackend& backend);

// Builds the backend from cfg.backend (the simulator seed is taken from
// cfg.seed).
PipelineResult run_pipeline(const Dataset& d_fs, const std::vector<ImageId>& images,
                            const PipelineConfig& cfg, const Dataset* query);

std::string round_report_to_json(const RoundReport& report);

enum class SweepParameter { kTauS, kTauN, kRounds };

std::string_view SweepParameterName(SweepParameter p);
std::optional<SweepParameter> ParseSweepParameter(std::string_view name);

struct SweepRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  double map_50 = 0.0;           // after tuning on D^(T)
  double baseline_map_50 = 0.0;  // after tuning on D_fs only
};

struct SweepTable {
  SweepParameter parameter = SweepParameter::kTauS;
  std::vector<SweepRow> rows;  // ordered by (value index, seed index)
  std::vector<std::pair<double, double>> means;  // (value, mean map_50)

  std::string to_csv() const;
};

// One simulator pipeline per (value, seed). The world for a seed is
// make_world(world_params) with world_params.seed = seed; the simulator and
// pipeline seeds are set to the same seed. Runs execute on `threads`
// workers (0: hardware concurrency); output order does not depend on it.
SweepTable sweep(const PipelineConfig& base_cfg, SweepParameter parameter,
                 const std::vector<double>& values, const WorldParams& world_params,
                 const SimulatorConfig& sim_cfg, const std::vector<std::uint64_t>& seeds,
                 unsigned threads = 0);

// Applies one sweep value to a configuration.
PipelineConfig with_parameter(PipelineConfig cfg, SweepParameter parameter,
                              double value);

}  // namespace pseudoloop
