// pseudoloop: command-line front end for the pseudo-label self-training
// toolkit.
//
// Exit codes: 0 ok, 1 validation/data error, 2 backend failure, 3 config or
// usage error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI/CLI11.hpp>
#include <fmt/format.h>

#include "pseudoloop/box_ops.hpp"
#include "pseudoloop/coco.hpp"
#include "pseudoloop/config.hpp"
#include "pseudoloop/driver.hpp"
#include "pseudoloop/evaluator.hpp"
#include "pseudoloop/io.hpp"
#include "pseudoloop/merge.hpp"
#include "pseudoloop/simulator.hpp"

namespace {

using namespace pseudoloop;

constexpr int kExitOk = 0;
constexpr int kExitData = 1;
constexpr int kExitBackend = 2;
constexpr int kExitConfig = 3;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_file_atomic(out_path, text);
  }
}

int cmd_validate(const std::string& path) {
  Dataset d = parse_dataset_unchecked(read_file(path));
  auto violations = validate(d);
  for (const auto& v : violations) std::cout << v.describe() << "\n";
  if (!violations.empty()) {
    std::cerr << fmt::format("{}: {} violation(s)\n", path, violations.size());
    return kExitData;
  }
  std::cout << fmt::format("{}: ok ({} images, {} categories, {} annotations)\n",
                           path, d.images.size(), d.categories.size(),
                           d.annotations.size());
  return kExitOk;
}

std::vector<std::uint64_t> expand_seeds(const std::vector<std::string>& specs) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : specs) {
    if (s.empty() || s.find_first_not_of("0123456789-") != std::string::npos) {
      throw ConfigError(fmt::format("bad seed \"{}\"", s));
    }
    if (auto dash = s.find('-'); dash != std::string::npos && dash > 0) {
      std::uint64_t lo = std::stoull(s.substr(0, dash));
      std::uint64_t hi = std::stoull(s.substr(dash + 1));
      if (hi < lo) throw ConfigError(fmt::format("bad seed range \"{}\"", s));
      for (std::uint64_t v = lo; v <= hi; ++v) seeds.push_back(v);
    } else {
      seeds.push_back(std::stoull(s));
    }
  }
  return seeds;
}

void apply_sim_overrides(SimulatorConfig& cfg, const std::vector<std::string>& kvs) {
  for (const auto& kv : kvs) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("--sim expects key=value, got \"{}\"", kv));
    }
    const std::string key = kv.substr(0, eq);
    double value = 0.0;
    try {
      value = std::stod(kv.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("--sim {}: not a number", key));
    }
    if (key == "p_min") cfg.p_min = value;
    else if (key == "p_max") cfg.p_max = value;
    else if (key == "sigma_max") cfg.sigma_max = value;
    else if (key == "beta") cfg.beta = value;
    else if (key == "lambda_fp_max") cfg.lambda_fp_max = value;
    else if (key == "lambda_fp_min") cfg.lambda_fp_min = value;
    else if (key == "conf_tp_alpha") cfg.conf_tp_alpha = value;
    else if (key == "zero_shot") cfg.zero_shot = value;
    else if (key == "noise_exponent") cfg.noise_exponent = value;
    else throw ConfigError(fmt::format("unknown simulator parameter \"{}\"", key));
  }
  if (auto problem = cfg.check(); !problem.empty()) throw ConfigError(problem);
}

void add_world_options(CLI::App* app, WorldParams& wp) {
  app->add_option("--images", wp.n_images, "Total images (half train, half query)")
      ->capture_default_str();
  app->add_option("--classes", wp.n_classes, "Number of classes")->capture_default_str();
  app->add_option("--min-instances", wp.min_instances, "Min instances per image")
      ->capture_default_str();
  app->add_option("--max-instances", wp.max_instances, "Max instances per image")
      ->capture_default_str();
  app->add_option("--k-shot", wp.k_shot, "Visible annotations per class")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-label self-training toolkit for object detection"};
  app.require_subcommand(1);

  // validate
  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Check a COCO dataset file");
  validate_cmd->add_option("json", validate_path, "Dataset JSON")->required();

  // filter
  std::string filter_in, filter_out;
  double tau_s = 0.6;
  auto* filter_cmd = app.add_subcommand("filter", "Drop detections scoring below tau_s");
  filter_cmd->add_option("--in", filter_in, "Prediction JSON")->required();
  filter_cmd->add_option("--out", filter_out, "Output path (default stdout)");
  filter_cmd->add_option("--tau-s", tau_s, "Score threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  // nms
  std::string nms_in, nms_out;
  double tau_n = 0.5;
  auto* nms_cmd = app.add_subcommand("nms", "Class-wise non-maximum suppression");
  nms_cmd->add_option("--in", nms_in, "Prediction JSON")->required();
  nms_cmd->add_option("--out", nms_out, "Output path (default stdout)");
  nms_cmd->add_option("--tau-n", tau_n, "IoU threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  // merge
  std::string merge_base, merge_pred, merge_extra, merge_out, merge_summary;
  MergePolicy merge_policy;
  auto* merge_cmd = app.add_subcommand(
      "merge", "Fuse predictions as pseudo labels, or ingest another dataset");
  merge_cmd->add_option("--gt", merge_base, "Base dataset")->required();
  auto* pred_opt = merge_cmd->add_option(
      "--pred", merge_pred, "Predictions to convert into pseudo annotations");
  auto* extra_opt =
      merge_cmd->add_option("--dataset", merge_extra, "External dataset to ingest");
  pred_opt->excludes(extra_opt);
  merge_cmd->add_option("--gt-suppression-iou", merge_policy.gt_suppression_iou,
                        "Drop pseudo boxes overlapping same-class ground truth above this")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  merge_cmd->add_option("--out", merge_out, "Output path (default stdout)");
  merge_cmd->add_option("--summary", merge_summary, "Write the merge summary JSON here");

  // eval
  std::string eval_gt, eval_pred, eval_json;
  double eval_iou = kDefaultEvalIou;
  bool eval_pr = false;
  auto* eval_cmd = app.add_subcommand("eval", "mAP@IoU evaluation");
  eval_cmd->add_option("--gt", eval_gt, "Ground-truth dataset")->required();
  eval_cmd->add_option("--pred", eval_pred, "Prediction JSON")->required();
  eval_cmd->add_option("--iou", eval_iou, "Match threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  eval_cmd->add_option("--json", eval_json, "Write the JSON report here");
  eval_cmd->add_flag("--pr-curves", eval_pr, "Include PR curves in the JSON report");

  // iterate
  std::string iterate_config;
  auto* iterate_cmd = app.add_subcommand("iterate", "Run the self-training loop");
  iterate_cmd->add_option("--config", iterate_config, "Run configuration (TOML)")
      ->required();

  // sweep
  std::string sweep_param = "tau_s", sweep_config, sweep_out;
  std::vector<double> sweep_values;
  std::vector<std::string> sweep_seeds{"0-9"};
  unsigned sweep_threads = 0;
  WorldParams sweep_world;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "Sweep one pipeline parameter on simulated worlds");
  sweep_cmd->add_option("--param", sweep_param, "tau_s, tau_n or rounds_T")
      ->capture_default_str();
  sweep_cmd->add_option("--values", sweep_values, "Values to try")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep_seeds, "Seeds or ranges such as 0-9")
      ->delimiter(',')
      ->capture_default_str();
  sweep_cmd->add_option("--config", sweep_config,
                        "Base run configuration (TOML); defaults otherwise");
  sweep_cmd->add_option("--out", sweep_out, "CSV output path (default stdout)");
  sweep_cmd->add_option("--threads", sweep_threads, "Worker threads (0: all cores)");
  std::vector<std::string> sweep_sim;
  sweep_cmd->add_option("--sim", sweep_sim, "Simulator overrides, key=value");
  add_world_options(sweep_cmd, sweep_world);

  // simulate
  std::string simulate_out;
  WorldParams sim_world;
  auto* simulate_cmd = app.add_subcommand("simulate", "Write a synthetic world");
  simulate_cmd->add_option("--out", simulate_out, "Output directory")->required();
  simulate_cmd->add_option("--seed", sim_world.seed, "World seed")->capture_default_str();
  std::vector<std::string> simulate_sim;
  simulate_cmd->add_option("--sim", simulate_sim,
                           "Simulator overrides recorded in config.json, key=value");
  add_world_options(simulate_cmd, sim_world);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*validate_cmd) return cmd_validate(validate_path);

    if (*filter_cmd) {
      emit(serialize_predictions(filter_by_score(load_predictions(filter_in), tau_s)),
           filter_out);
      return kExitOk;
    }

    if (*nms_cmd) {
      emit(serialize_predictions(class_wise_nms(load_predictions(nms_in), tau_n)),
           nms_out);
      return kExitOk;
    }

    if (*merge_cmd) {
      Dataset base = load_dataset(merge_base);
      if (!merge_extra.empty()) {
        emit(serialize_dataset(merge_datasets(base, load_dataset(merge_extra))),
             merge_out);
        return kExitOk;
      }
      if (merge_pred.empty()) throw ConfigError("merge needs --pred or --dataset");
      auto pseudo = to_pseudo_annotations(load_predictions(merge_pred), base);
      auto merged = merge_pseudo_with_summary(base, pseudo, merge_policy);
      emit(serialize_dataset(merged.dataset), merge_out);
      const std::string summary = summary_to_json(merged.summary);
      if (!merge_summary.empty()) {
        write_file_atomic(merge_summary, summary);
      } else {
        std::cerr << summary;
      }
      return kExitOk;
    }

    if (*eval_cmd) {
      EvalReport report =
          evaluate(load_dataset(eval_gt), load_predictions(eval_pred), eval_iou);
      std::cout << report_to_table(report);
      if (!eval_json.empty()) {
        write_file_atomic(eval_json, report_to_json(report, eval_pr));
      }
      return kExitOk;
    }

    if (*iterate_cmd) {
      RunSpec spec = load_run_config(iterate_config);
      Dataset d_fs = load_dataset(spec.train_path.string());
      std::optional<Dataset> query;
      if (spec.query_path) query = load_dataset(spec.query_path->string());
      std::vector<ImageId> images = spec.images;
      if (images.empty()) {
        for (const auto& img : d_fs.images) images.push_back(img.id);
      }
      auto result = run_pipeline(d_fs, images, spec.pipeline,
                                 query ? &*query : nullptr);
      for (const auto& r : result.rounds) {
        std::cout << fmt::format(
            "round {}: raw {} -> filter {} -> nms {} -> kept {} (dropped {})", r.round,
            r.counts.raw, r.counts.after_filter, r.counts.after_nms,
            r.counts.pseudo_kept, r.counts.pseudo_dropped);
        if (r.eval) std::cout << fmt::format("  query mAP {:.4f}", r.eval->map_50);
        std::cout << "\n";
      }
      if (result.final_eval) {
        std::cout << "final:\n" << report_to_table(*result.final_eval);
      }
      return kExitOk;
    }

    if (*sweep_cmd) {
      auto parameter = ParseSweepParameter(sweep_param);
      if (!parameter) throw ConfigError(fmt::format("cannot sweep \"{}\"", sweep_param));
      PipelineConfig base;
      SimulatorConfig sim;
      if (!sweep_config.empty()) {
        RunSpec spec = load_run_config(sweep_config);
        base = spec.pipeline;
        sim = spec.pipeline.backend.simulator.config;
      }
      apply_sim_overrides(sim, sweep_sim);
      base.backend.kind = BackendKind::kSimulator;
      SweepTable table = sweep(base, *parameter, sweep_values, sweep_world, sim,
                               expand_seeds(sweep_seeds), sweep_threads);
      emit(table.to_csv(), sweep_out);
      const std::size_t per_value = table.rows.size() / std::max<std::size_t>(1, table.means.size());
      for (std::size_t vi = 0; vi < table.means.size(); ++vi) {
        double baseline = 0.0;
        for (std::size_t si = 0; si < per_value; ++si) {
          baseline += table.rows[vi * per_value + si].baseline_map_50;
        }
        baseline /= static_cast<double>(std::max<std::size_t>(1, per_value));
        std::cerr << fmt::format("{}={}  baseline mAP@0.5 {:.4f}  final mAP@0.5 {:.4f}\n",
                                 sweep_param, table.means[vi].first, baseline,
                                 table.means[vi].second);
      }
      return kExitOk;
    }

    if (*simulate_cmd) {
      SimulatorConfig cfg;
      cfg.seed = sim_world.seed;
      apply_sim_overrides(cfg, simulate_sim);
      World w = make_world(sim_world);
      save_world(w, sim_world, cfg, simulate_out);
      std::cout << fmt::format(
          "wrote {} ({} train images, {} query images, {} hidden / {} visible "
          "annotations)\n",
          simulate_out, w.hidden_gt.images.size(), w.query_gt.images.size(),
          w.hidden_gt.annotations.size(), w.visible_train.annotations.size());
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const BackendError& e) {
    std::cerr << "backend failure: " << e.what() << "\n";
    if (!e.stderr_excerpt().empty()) std::cerr << e.stderr_excerpt() << "\n";
    return kExitBackend;
  } catch (const Error& e) {
    std::cerr << ErrorKindName(e.kind()) << ": " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
