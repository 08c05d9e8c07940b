#include "pseudoloop/config.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <toml++/toml.hpp>

#include "pseudoloop/io.hpp"

namespace pseudoloop {

namespace fs = std::filesystem;

namespace {

class Reader {
 public:
  Reader(const toml::table& root, fs::path base) : root_(root), base_(std::move(base)) {}

  template <typename T>
  void read(std::string_view path, T& out) const {
    auto node = root_.at_path(path);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node.value<bool>();
      if (!v || !node.is_boolean()) fail(path, "a boolean");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      if (!node.is_integer()) fail(path, "an integer");
      auto v = *node.value<std::int64_t>();
      if constexpr (std::is_unsigned_v<T>) {
        if (v < 0) fail(path, "a non-negative integer");
      }
      out = static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!node.is_number()) fail(path, "a number");
      out = *node.value<double>();
    } else {
      if (!node.is_string()) fail(path, "a string");
      out = T(*node.value<std::string>());
    }
  }

  std::optional<fs::path> path(std::string_view key) const {
    auto node = root_.at_path(key);
    if (!node) return std::nullopt;
    if (!node.is_string()) fail(key, "a string");
    fs::path p = *node.value<std::string>();
    return p.is_absolute() ? p : base_ / p;
  }

  [[noreturn]] static void fail(std::string_view key, std::string_view what) {
    throw ConfigError(fmt::format("config key \"{}\" must be {}", key, what));
  }

  const toml::table& root() const { return root_; }

 private:
  const toml::table& root_;
  fs::path base_;
};

void reject_unknown(const toml::table& table, std::string_view where,
                    std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, value] : table) {
    if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end()) {
      throw ConfigError(fmt::format("unknown config key \"{}{}\"", where, key.str()));
    }
  }
}

}  // namespace

RunSpec parse_run_config(std::string_view toml_text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("invalid TOML: {}", e.description()));
  }
  reject_unknown(root, "",
                 {"rounds", "tau_s", "tau_n", "eval_iou", "eval_each_round",
                  "reset_weights_each_round", "epochs", "seed", "run_dir", "data",
                  "merge", "backend", "simulator"});
  for (const char* section : {"data", "merge", "backend", "simulator"}) {
    if (root.contains(section) && !root[section].is_table()) {
      throw ConfigError(fmt::format("\"{}\" must be a table", section));
    }
  }
  if (auto* t = root["data"].as_table()) {
    reject_unknown(*t, "data.", {"train", "query", "images"});
  }
  if (auto* t = root["merge"].as_table()) {
    reject_unknown(*t, "merge.", {"gt_suppression_iou", "cross_round"});
  }
  if (auto* t = root["backend"].as_table()) {
    reject_unknown(*t, "backend.",
                   {"kind", "world_dir", "predictions", "train_command",
                    "predict_command", "workdir", "timeout_s"});
  }
  if (auto* t = root["simulator"].as_table()) {
    reject_unknown(*t, "simulator.",
                   {"p_min", "p_max", "sigma_max", "beta", "lambda_fp_max",
                    "lambda_fp_min", "conf_tp_alpha", "zero_shot",
                    "noise_exponent"});
  }

  Reader r(root, base_dir);
  RunSpec spec;
  PipelineConfig& cfg = spec.pipeline;
  r.read("rounds", cfg.rounds);
  r.read("tau_s", cfg.tau_s);
  r.read("tau_n", cfg.tau_n);
  r.read("eval_iou", cfg.eval_iou);
  r.read("eval_each_round", cfg.eval_each_round);
  r.read("reset_weights_each_round", cfg.reset_weights_each_round);
  r.read("epochs", cfg.epochs_hint);
  r.read("seed", cfg.seed);
  if (auto p = r.path("run_dir")) cfg.run_dir = *p;

  r.read("merge.gt_suppression_iou", cfg.merge_policy.gt_suppression_iou);
  std::string cross = "from_scratch";
  r.read("merge.cross_round", cross);
  if (cross == "from_scratch") {
    cfg.merge_policy.cross_round_behavior = CrossRoundBehavior::kFromScratch;
  } else if (cross == "accumulate") {
    cfg.merge_policy.cross_round_behavior = CrossRoundBehavior::kAccumulate;
  } else {
    throw ConfigError(fmt::format(
        "merge.cross_round must be \"from_scratch\" or \"accumulate\", got \"{}\"",
        cross));
  }

  std::string kind = "simulator";
  r.read("backend.kind", kind);
  auto parsed_kind = ParseBackendKind(kind);
  if (!parsed_kind) throw ConfigError(fmt::format("unknown backend kind \"{}\"", kind));
  BackendDescriptor& backend = cfg.backend;
  backend.kind = *parsed_kind;
  if (auto p = r.path("backend.predictions")) backend.file.path_pattern = p->string();
  r.read("backend.train_command", backend.command.train_command);
  r.read("backend.predict_command", backend.command.predict_command);
  if (auto p = r.path("backend.workdir")) backend.command.workdir = *p;
  std::int64_t timeout_s = backend.command.timeout.count();
  r.read("backend.timeout_s", timeout_s);
  backend.command.timeout = std::chrono::seconds(timeout_s);

  auto world_dir = r.path("backend.world_dir");
  if (world_dir) {
    backend.simulator.world_dir = *world_dir;
    if (fs::exists(*world_dir / "config.json")) {
      backend.simulator.config = load_world_simulator_config(*world_dir);
    }
  }
  SimulatorConfig& sim = backend.simulator.config;
  r.read("simulator.p_min", sim.p_min);
  r.read("simulator.p_max", sim.p_max);
  r.read("simulator.sigma_max", sim.sigma_max);
  r.read("simulator.beta", sim.beta);
  r.read("simulator.lambda_fp_max", sim.lambda_fp_max);
  r.read("simulator.lambda_fp_min", sim.lambda_fp_min);
  r.read("simulator.conf_tp_alpha", sim.conf_tp_alpha);
  r.read("simulator.zero_shot", sim.zero_shot);
  r.read("simulator.noise_exponent", sim.noise_exponent);
  if (backend.kind == BackendKind::kSimulator && !world_dir) {
    throw ConfigError("simulator backend needs backend.world_dir");
  }

  if (auto p = r.path("data.train")) {
    spec.train_path = *p;
  } else if (world_dir) {
    spec.train_path = *world_dir / "visible_train.json";
  } else {
    throw ConfigError("data.train is required");
  }
  if (auto p = r.path("data.query")) {
    spec.query_path = *p;
  } else if (world_dir) {
    spec.query_path = *world_dir / "query_gt.json";
  }
  if (auto node = root.at_path("data.images")) {
    auto* arr = node.as_array();
    if (!arr) Reader::fail("data.images", "an array of integers");
    for (const auto& v : *arr) {
      if (!v.is_integer()) Reader::fail("data.images", "an array of integers");
      spec.images.push_back(*v.value<std::int64_t>());
    }
  }

  if (auto problem = cfg.check(); !problem.empty()) throw ConfigError(problem);
  return spec;
}

RunSpec load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text, path.parent_path());
}

}  // namespace pseudoloop
