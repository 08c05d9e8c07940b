#include "pseudoloop/driver.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pseudoloop/io.hpp"

namespace pseudoloop {

namespace fs = std::filesystem;

std::string PipelineConfig::check() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (rounds < 1) return "rounds must be >= 1";
  if (!unit(tau_s)) return "tau_s must lie in [0, 1]";
  if (!unit(tau_n)) return "tau_n must lie in [0, 1]";
  if (!unit(eval_iou)) return "eval_iou must lie in [0, 1]";
  if (!unit(merge_policy.gt_suppression_iou)) {
    return "gt_suppression_iou must lie in [0, 1]";
  }
  return backend.check();
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

nlohmann::ordered_json eval_json(const std::optional<EvalReport>& eval) {
  if (!eval) return nullptr;
  return nlohmann::ordered_json::parse(report_to_json(*eval, false));
}

EvalReport evaluate_on_query(DetectorBackend& backend, const Dataset& query,
                             const PipelineConfig& cfg, int round,
                             const fs::path& preds_path) {
  PredictRequest request;
  request.round = round;
  for (const auto& img : query.images) request.image_ids.push_back(img.id);
  PredictionSet preds = class_wise_nms(backend.predict(request), cfg.tau_n);
  if (!preds_path.empty()) save_predictions(preds, preds_path.string());
  return evaluate(query, preds, cfg.eval_iou);
}

}  // namespace

std::string round_report_to_json(const RoundReport& report) {
  nlohmann::ordered_json root;
  root["round"] = report.round;
  auto& counts = root["counts"];
  counts["raw"] = report.counts.raw;
  counts["after_filter"] = report.counts.after_filter;
  counts["after_nms"] = report.counts.after_nms;
  counts["pseudo_kept"] = report.counts.pseudo_kept;
  counts["pseudo_dropped"] = report.counts.pseudo_dropped;
  root["merge"] = nlohmann::ordered_json::parse(summary_to_json(report.merge));
  root["eval"] = eval_json(report.eval);
  return root.dump(2) + "\n";
}

PipelineResult run_pipeline(const Dataset& d_fs, const std::vector<ImageId>& images,
                            const PipelineConfig& cfg, const Dataset* query,
                            DetectorBackend& backend) {
  if (auto problem = cfg.check(); !problem.empty()) throw ConfigError(problem);
  if (auto violations = validate(d_fs); !violations.empty()) {
    throw DataError(violations.front().kind,
                    "few-shot annotations invalid: " + violations.front().describe());
  }
  {
    std::unordered_set<ImageId> known;
    for (const auto& img : d_fs.images) known.insert(img.id);
    for (ImageId id : images) {
      if (!known.contains(id)) {
        throw PreconditionError(
            fmt::format("image {} is not in the few-shot dataset", id));
      }
    }
  }
  if (query) backend.register_images(query->images);

  const bool write = !cfg.run_dir.empty();
  const bool accumulate =
      cfg.merge_policy.cross_round_behavior == CrossRoundBehavior::kAccumulate;
  auto round_dir = [&cfg](int t) { return cfg.run_dir / fmt::format("round_{}", t); };

  PipelineResult result;
  Dataset current = d_fs;
  nlohmann::ordered_json timings = nlohmann::ordered_json::array();

  for (int t = 1; t <= cfg.rounds; ++t) {
    RoundReport report;
    report.round = t;
    const fs::path dir = write ? round_dir(t) : fs::path();
    if (write) save_dataset(current, (dir / "train.json").string());

    auto start = Clock::now();
    backend.train(TrainRequest{current, cfg.epochs_hint,
                               cfg.reset_weights_each_round, t});
    report.timings.train_ms = ms_since(start);

    start = Clock::now();
    PredictionSet raw = backend.predict(PredictRequest{images, t});
    report.timings.predict_ms = ms_since(start);
    if (write) save_predictions(raw, (dir / "raw_preds.json").string());

    if (query && cfg.eval_each_round) {
      start = Clock::now();
      report.eval = evaluate_on_query(
          backend, *query, cfg, t, write ? dir / "query_preds.json" : fs::path());
      report.timings.eval_ms = ms_since(start);
    }

    start = Clock::now();
    PredictionSet filtered = filter_by_score(raw, cfg.tau_s);
    PredictionSet kept = class_wise_nms(filtered, cfg.tau_n);
    const Dataset& base = accumulate ? current : d_fs;
    auto pseudo = to_pseudo_annotations(kept, base);
    MergeResult merged = merge_pseudo_with_summary(base, pseudo, cfg.merge_policy);
    report.timings.postprocess_ms = ms_since(start);

    report.counts = {raw.size(), filtered.size(), kept.size(),
                     merged.summary.kept_pseudo, merged.summary.dropped_pseudo};
    report.merge = merged.summary;
    current = std::move(merged.dataset);

    if (write) {
      save_predictions(kept, (dir / "kept_preds.json").string());
      save_dataset(current, (dir / "merged.json").string());
      write_file_atomic(dir / "report.json", round_report_to_json(report));
      nlohmann::ordered_json tj;
      tj["round"] = t;
      tj["train_ms"] = report.timings.train_ms;
      tj["predict_ms"] = report.timings.predict_ms;
      tj["postprocess_ms"] = report.timings.postprocess_ms;
      tj["eval_ms"] = report.timings.eval_ms;
      timings.push_back(std::move(tj));
      write_file_atomic(cfg.run_dir / "timings.json", timings.dump(2) + "\n");
    }
    result.rounds.push_back(std::move(report));
  }

  if (query) {
    const int final_round = cfg.rounds + 1;
    backend.train(TrainRequest{current, cfg.epochs_hint,
                               cfg.reset_weights_each_round, final_round});
    const fs::path dir = write ? cfg.run_dir / "final" : fs::path();
    result.final_eval = evaluate_on_query(
        backend, *query, cfg, final_round,
        write ? dir / "query_preds.json" : fs::path());
    if (write) {
      write_file_atomic(dir / "report.json",
                        report_to_json(*result.final_eval, false));
    }
  }
  result.final_dataset = std::move(current);
  return result;
}

PipelineResult run_pipeline(const Dataset& d_fs, const std::vector<ImageId>& images,
                            const PipelineConfig& cfg, const Dataset* query) {
  BackendDescriptor descriptor = cfg.backend;
  descriptor.simulator.config.seed = cfg.seed;
  auto backend = make_backend(descriptor);
  return run_pipeline(d_fs, images, cfg, query, *backend);
}

std::string_view SweepParameterName(SweepParameter p) {
  switch (p) {
    case SweepParameter::kTauS: return "tau_s";
    case SweepParameter::kTauN: return "tau_n";
    case SweepParameter::kRounds: return "rounds_T";
  }
  return "tau_s";
}

std::optional<SweepParameter> ParseSweepParameter(std::string_view name) {
  if (name == "tau_s") return SweepParameter::kTauS;
  if (name == "tau_n") return SweepParameter::kTauN;
  if (name == "rounds_T" || name == "rounds") return SweepParameter::kRounds;
  return std::nullopt;
}

PipelineConfig with_parameter(PipelineConfig cfg, SweepParameter parameter,
                              double value) {
  switch (parameter) {
    case SweepParameter::kTauS: cfg.tau_s = value; break;
    case SweepParameter::kTauN: cfg.tau_n = value; break;
    case SweepParameter::kRounds:
      if (value != std::floor(value)) {
        throw ConfigError(fmt::format("rounds_T must be an integer, got {}", value));
      }
      cfg.rounds = static_cast<int>(value);
      break;
  }
  return cfg;
}

std::string SweepTable::to_csv() const {
  std::string out = "param_value,seed,map_50\n";
  for (const auto& row : rows) {
    out += fmt::format("{},{},{}\n", row.value, row.seed, row.map_50);
  }
  return out;
}

SweepTable sweep(const PipelineConfig& base_cfg, SweepParameter parameter,
                 const std::vector<double>& values, const WorldParams& world_params,
                 const SimulatorConfig& sim_cfg, const std::vector<std::uint64_t>& seeds,
                 unsigned threads) {
  std::vector<PipelineConfig> configs;
  for (double v : values) {
    PipelineConfig cfg = with_parameter(base_cfg, parameter, v);
    if (auto problem = cfg.check(); !problem.empty()) throw ConfigError(problem);
    configs.push_back(std::move(cfg));
  }

  std::vector<std::shared_ptr<const World>> worlds;
  for (std::uint64_t seed : seeds) {
    WorldParams wp = world_params;
    wp.seed = seed;
    worlds.push_back(std::make_shared<const World>(make_world(wp)));
  }

  SweepTable table;
  table.parameter = parameter;
  table.rows.resize(values.size() * seeds.size());
  const std::size_t jobs = table.rows.size();
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const std::size_t vi = job / seeds.size();
      const std::size_t si = job % seeds.size();
      try {
        PipelineConfig cfg = configs[vi];
        cfg.seed = seeds[si];
        cfg.eval_each_round = true;
        if (!cfg.run_dir.empty()) {
          cfg.run_dir = cfg.run_dir /
                        fmt::format("{}_{}", SweepParameterName(parameter), values[vi]) /
                        fmt::format("seed_{}", seeds[si]);
        }
        SimulatorConfig sim = sim_cfg;
        sim.seed = seeds[si];
        SimulatorBackend backend(worlds[si], sim);
        const World& w = *worlds[si];
        auto result = run_pipeline(w.visible_train, w.train_image_ids(), cfg,
                                   &w.query_gt, backend);
        SweepRow& row = table.rows[job];
        row.value = values[vi];
        row.seed = seeds[si];
        row.map_50 = result.final_eval->map_50;
        row.baseline_map_50 = result.rounds.front().eval->map_50;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs;
      }
    }
  };

  unsigned n = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
  {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    double sum = 0.0;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      sum += table.rows[vi * seeds.size() + si].map_50;
    }
    table.means.emplace_back(values[vi],
                             seeds.empty() ? 0.0 : sum / static_cast<double>(seeds.size()));
  }
  return table;
}

}  // namespace pseudoloop
