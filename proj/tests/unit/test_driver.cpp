#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pseudoloop/driver.hpp"
#include "pseudoloop/error.hpp"
#include "pseudoloop/io.hpp"

using namespace pseudoloop;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(fs::temp_directory_path() / ("pseudoloop_" + name + "_" +
                                           std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

std::shared_ptr<const World> world(std::uint64_t seed = 0) {
  WorldParams wp;
  wp.seed = seed;
  return std::make_shared<const World>(make_world(wp));
}

PipelineConfig sim_config(int rounds, const fs::path& run_dir = {}) {
  PipelineConfig cfg;
  cfg.rounds = rounds;
  cfg.run_dir = run_dir;
  return cfg;
}

void expect_contains_fs(const Dataset& d_t, const Dataset& d_fs) {
  for (const auto& a : d_fs.annotations) {
    EXPECT_NE(std::find(d_t.annotations.begin(), d_t.annotations.end(), a),
              d_t.annotations.end())
        << "lost annotation " << a.id;
  }
}

PipelineConfig file_config(const fs::path& pattern, int rounds) {
  PipelineConfig cfg;
  cfg.rounds = rounds;
  cfg.backend.kind = BackendKind::kFile;
  cfg.backend.file.path_pattern = pattern.string();
  return cfg;
}

}  // namespace

TEST(Pipeline, EmptyPredictionsLeaveFewShotSet) {
  TempDir dir("empty_preds");
  auto w = world();
  write_file_atomic(dir.path() / "p.json", "[]");
  PipelineConfig cfg = file_config(dir.path() / "p.json", 1);
  cfg.run_dir = dir.path() / "run";
  auto result = run_pipeline(w->visible_train, w->train_image_ids(), cfg, nullptr);
  EXPECT_EQ(result.final_dataset, w->visible_train);
  EXPECT_EQ(read_file(cfg.run_dir / "round_1" / "merged.json"),
            serialize_dataset(w->visible_train));
  for (const char* f : {"train.json", "raw_preds.json", "kept_preds.json", "merged.json",
                        "report.json"}) {
    EXPECT_TRUE(fs::exists(cfg.run_dir / "round_1" / f)) << f;
  }
}

TEST(Pipeline, EverythingBelowThreshold) {
  TempDir dir("below_tau");
  auto w = world();
  PredictionSet p;
  for (ImageId id : w->train_image_ids()) p.detections.push_back({id, 1, {5, 5, 50, 50}, 0.59});
  save_predictions(p, (dir.path() / "p.json").string());
  for (double tau : {0.6, 1.0}) {
    PipelineConfig cfg = file_config(dir.path() / "p.json", 3);
    cfg.tau_s = tau;
    auto result = run_pipeline(w->visible_train, w->train_image_ids(), cfg, nullptr);
    EXPECT_EQ(result.final_dataset, w->visible_train);
    for (const auto& r : result.rounds) {
      EXPECT_EQ(r.counts.raw, p.size());
      EXPECT_EQ(r.counts.after_filter, 0u);
    }
  }
}

TEST(Pipeline, ReplayIsByteIdentical) {
  TempDir dir("replay");
  auto w = world(3);
  for (const char* name : {"a", "b"}) {
    PipelineConfig cfg = sim_config(3, dir.path() / name);
    cfg.seed = 3;
    SimulatorBackend backend(w, SimulatorConfig{.seed = 3});
    run_pipeline(w->visible_train, w->train_image_ids(), cfg, &w->query_gt, backend);
  }
  auto a = tree(dir.path() / "a");
  auto b = tree(dir.path() / "b");
  a.erase("timings.json");
  b.erase("timings.json");
  EXPECT_GE(a.size(), 3u * 6u + 2u);
  EXPECT_EQ(a, b);
}

TEST(Pipeline, FileReplayMatchesSimulator) {
  TempDir dir("file_replay");
  auto w = world(4);
  PipelineConfig cfg = sim_config(3, dir.path() / "sim");
  SimulatorBackend sim(w, SimulatorConfig{.seed = 4});
  auto live = run_pipeline(w->visible_train, w->train_image_ids(), cfg, nullptr, sim);

  PipelineConfig replay = file_config(dir.path() / "sim" / "round_{round}" / "raw_preds.json", 3);
  replay.run_dir = dir.path() / "file";
  auto again = run_pipeline(w->visible_train, w->train_image_ids(), replay, nullptr);
  EXPECT_EQ(again.final_dataset, live.final_dataset);
  for (int t = 1; t <= 3; ++t) {
    const fs::path r = fs::path(fmt::format("round_{}", t));
    for (const char* f : {"train.json", "raw_preds.json", "kept_preds.json", "merged.json",
                          "report.json"}) {
      EXPECT_EQ(read_file(dir.path() / "sim" / r / f), read_file(dir.path() / "file" / r / f))
          << r / f;
    }
  }
}

TEST(Pipeline, GroundTruthPreservedAndCountsDecrease) {
  for (auto behavior : {CrossRoundBehavior::kFromScratch, CrossRoundBehavior::kAccumulate}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      TempDir dir("preserve");
      auto w = world(seed);
      PipelineConfig cfg = sim_config(3, dir.path());
      cfg.merge_policy.cross_round_behavior = behavior;
      cfg.tau_s = 0.3;
      SimulatorBackend backend(w, SimulatorConfig{.seed = seed});
      auto result =
          run_pipeline(w->visible_train, w->train_image_ids(), cfg, &w->query_gt, backend);
      ASSERT_EQ(result.rounds.size(), 3u);
      for (const auto& r : result.rounds) {
        EXPECT_GE(r.counts.raw, r.counts.after_filter);
        EXPECT_GE(r.counts.after_filter, r.counts.after_nms);
        EXPECT_GE(r.counts.after_nms, r.counts.pseudo_kept);
        EXPECT_EQ(r.counts.after_nms, r.counts.pseudo_kept + r.counts.pseudo_dropped);
        ASSERT_TRUE(r.eval);
        Dataset d_t = load_dataset(
            (dir.path() / fmt::format("round_{}", r.round) / "merged.json").string());
        expect_contains_fs(d_t, w->visible_train);
        EXPECT_TRUE(validate(d_t).empty());
      }
      EXPECT_TRUE(result.final_eval);
      EXPECT_TRUE(fs::exists(dir.path() / "final" / "report.json"));
    }
  }
}

TEST(Pipeline, RoundOneTrainsOnFewShotSet) {
  TempDir dir("round_one");
  auto w = world(1);
  PipelineConfig cfg = sim_config(2, dir.path());
  SimulatorBackend backend(w, SimulatorConfig{.seed = 1});
  auto result = run_pipeline(w->visible_train, w->train_image_ids(), cfg, nullptr, backend);
  EXPECT_EQ(read_file(dir.path() / "round_1" / "train.json"), serialize_dataset(w->visible_train));
  EXPECT_EQ(read_file(dir.path() / "round_2" / "train.json"),
            read_file(dir.path() / "round_1" / "merged.json"));
  EXPECT_FALSE(result.final_eval);
  EXPECT_FALSE(result.rounds[0].eval);
  auto report = nlohmann::json::parse(read_file(dir.path() / "round_1" / "report.json"));
  EXPECT_EQ(report["round"], 1);
  EXPECT_TRUE(report["eval"].is_null());
  EXPECT_EQ(report["counts"]["pseudo_kept"], result.rounds[0].counts.pseudo_kept);
}

TEST(Pipeline, BackendFailureKeepsCompletedRounds) {
  TempDir dir("failure");
  auto w = world();
  PipelineConfig cfg;
  cfg.rounds = 3;
  cfg.run_dir = dir.path() / "run";
  cfg.backend.kind = BackendKind::kCommand;
  cfg.backend.command.workdir = dir.path() / "work";
  cfg.backend.command.train_command = "test {round} -lt 2";
  cfg.backend.command.predict_command = "echo '[]' > {pred_json}";
  try {
    run_pipeline(w->visible_train, w->train_image_ids(), cfg, nullptr);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.exit_code(), 1);
  }
  EXPECT_EQ(load_dataset((cfg.run_dir / "round_1" / "merged.json").string()), w->visible_train);
  EXPECT_TRUE(fs::exists(cfg.run_dir / "round_1" / "report.json"));
  EXPECT_TRUE(fs::exists(cfg.run_dir / "round_2" / "train.json"));
  EXPECT_FALSE(fs::exists(cfg.run_dir / "round_2" / "merged.json"));
  for (const auto& e : fs::recursive_directory_iterator(cfg.run_dir)) {
    EXPECT_NE(e.path().extension(), ".tmp") << e.path();
  }
}

TEST(Pipeline, Preconditions) {
  auto w = world();
  PipelineConfig cfg;
  cfg.rounds = 0;
  SimulatorBackend backend(w, {});
  EXPECT_THROW(run_pipeline(w->visible_train, w->train_image_ids(), cfg, nullptr, backend),
               ConfigError);
  cfg.rounds = 1;
  cfg.tau_s = 1.5;
  EXPECT_THROW(run_pipeline(w->visible_train, w->train_image_ids(), cfg, nullptr, backend),
               ConfigError);
  cfg.tau_s = 0.6;
  EXPECT_THROW(run_pipeline(w->visible_train, {1, 9999}, cfg, nullptr, backend),
               PreconditionError);
  Dataset broken = w->visible_train;
  broken.annotations[0].category_id = 77;
  EXPECT_THROW(run_pipeline(broken, w->train_image_ids(), cfg, nullptr, backend), DataError);
}

TEST(Sweep, SingleCellEqualsDirectRun) {
  WorldParams wp;
  PipelineConfig base;
  SimulatorConfig sim;
  auto table = sweep(base, SweepParameter::kTauS, {0.5}, wp, sim, {7}, 1);
  ASSERT_EQ(table.rows.size(), 1u);
  wp.seed = 7;
  auto w = std::make_shared<const World>(make_world(wp));
  PipelineConfig cfg = base;
  cfg.tau_s = 0.5;
  cfg.seed = 7;
  sim.seed = 7;
  SimulatorBackend backend(w, sim);
  auto direct = run_pipeline(w->visible_train, w->train_image_ids(), cfg, &w->query_gt, backend);
  EXPECT_EQ(table.rows[0].map_50, direct.final_eval->map_50);
  EXPECT_EQ(table.rows[0].baseline_map_50, direct.rounds[0].eval->map_50);
  EXPECT_EQ(table.rows[0].seed, 7u);
  EXPECT_EQ(table.means.size(), 1u);
  EXPECT_EQ(table.means[0].second, table.rows[0].map_50);
}

TEST(Sweep, CsvAndThreadInvariance) {
  WorldParams wp;
  wp.n_images = 20;
  auto one = sweep({}, SweepParameter::kRounds, {1, 2}, wp, {}, {0, 1, 2}, 1);
  auto many = sweep({}, SweepParameter::kRounds, {1, 2}, wp, {}, {0, 1, 2}, 4);
  EXPECT_EQ(one.to_csv(), many.to_csv());
  const std::string csv = one.to_csv();
  EXPECT_EQ(csv.rfind("param_value,seed,map_50\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(one.rows[3].value, 2.0);
  EXPECT_EQ(one.rows[3].seed, 0u);
}

TEST(Sweep, RejectsBadValues) {
  EXPECT_THROW(sweep({}, SweepParameter::kRounds, {1.5}, {}, {}, {0}), ConfigError);
  EXPECT_THROW(sweep({}, SweepParameter::kTauS, {1.5}, {}, {}, {0}), ConfigError);
  EXPECT_EQ(ParseSweepParameter("rounds_T"), SweepParameter::kRounds);
  EXPECT_FALSE(ParseSweepParameter("epochs"));
}
