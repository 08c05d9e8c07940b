#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "pseudoloop/box_ops.hpp"
#include "pseudoloop/error.hpp"
#include "pseudoloop/simulator.hpp"

using namespace pseudoloop;
namespace fs = std::filesystem;

namespace {

WorldParams small_world(std::uint64_t seed = 1) {
  WorldParams wp;
  wp.n_images = 20;
  wp.seed = seed;
  return wp;
}

CoverageMap uniform_cov(const World& w, double value) {
  CoverageMap cov;
  for (const auto& c : w.hidden_gt.categories) cov[c.id] = value;
  return cov;
}

}  // namespace

TEST(World, Deterministic) {
  World a = make_world(small_world(5));
  World b = make_world(small_world(5));
  EXPECT_EQ(serialize_dataset(a.hidden_gt), serialize_dataset(b.hidden_gt));
  EXPECT_EQ(serialize_dataset(a.visible_train), serialize_dataset(b.visible_train));
  EXPECT_EQ(serialize_dataset(a.query_gt), serialize_dataset(b.query_gt));
  World c = make_world(small_world(6));
  EXPECT_NE(serialize_dataset(a.hidden_gt), serialize_dataset(c.hidden_gt));
}

TEST(World, ExhaustiveSupport) {
  WorldParams wp;
  wp.n_images = 2;
  wp.n_classes = 1;
  wp.min_instances = wp.max_instances = 3;
  wp.k_shot = 3;
  World w = make_world(wp);
  ASSERT_EQ(w.hidden_gt.annotations.size(), 3u);
  EXPECT_EQ(w.visible_train, w.hidden_gt);
}

TEST(World, InsufficientInstances) {
  WorldParams wp;
  wp.n_images = 2;
  wp.n_classes = 1;
  wp.min_instances = wp.max_instances = 3;
  wp.k_shot = 4;
  EXPECT_THROW(make_world(wp), InsufficientInstances);
}

TEST(World, Invariants) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    WorldParams wp;
    wp.seed = seed;
    World w = make_world(wp);
    EXPECT_TRUE(validate(w.hidden_gt).empty());
    EXPECT_TRUE(validate(w.visible_train).empty());
    EXPECT_TRUE(validate(w.query_gt).empty());
    EXPECT_EQ(w.hidden_gt.images.size(), 40u);
    EXPECT_EQ(w.query_gt.images.size(), 40u);
    EXPECT_EQ(w.visible_train.images, w.hidden_gt.images);
    EXPECT_EQ(w.visible_train.annotations.size(), 3u);

    const auto train_list = w.train_image_ids();
    std::set<ImageId> train_ids(train_list.begin(), train_list.end());
    for (ImageId id : w.query_image_ids()) EXPECT_FALSE(train_ids.count(id));

    for (const auto& v : w.visible_train.annotations) {
      EXPECT_NE(std::find(w.hidden_gt.annotations.begin(), w.hidden_gt.annotations.end(), v),
                w.hidden_gt.annotations.end());
    }
    for (const Dataset* d : {&w.hidden_gt, &w.query_gt}) {
      const auto& anns = d->annotations;
      for (std::size_t i = 0; i < anns.size(); ++i) {
        const auto* img = d->find_image(anns[i].image_id);
        ASSERT_NE(img, nullptr);
        EXPECT_GE(anns[i].bbox.x, 0.0);
        EXPECT_GE(anns[i].bbox.y, 0.0);
        EXPECT_LE(anns[i].bbox.right(), img->width);
        EXPECT_LE(anns[i].bbox.bottom(), img->height);
        for (std::size_t j = i + 1; j < anns.size(); ++j) {
          if (anns[i].image_id == anns[j].image_id &&
              anns[i].category_id == anns[j].category_id) {
            EXPECT_LE(iou(anns[i].bbox, anns[j].bbox), 0.3);
          }
        }
      }
    }
  }
}

TEST(World, SaveAndLoad) {
  auto dir = fs::temp_directory_path() / "pseudoloop_world_test";
  fs::remove_all(dir);
  World w = make_world(small_world(3));
  SimulatorConfig cfg;
  cfg.p_min = 0.3;
  cfg.zero_shot = 0.1;
  save_world(w, small_world(3), cfg, dir);
  for (const char* f : {"hidden_gt.json", "visible_train.json", "query_gt.json", "config.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  World back = load_world(dir);
  EXPECT_EQ(back.hidden_gt, w.hidden_gt);
  EXPECT_EQ(back.visible_train, w.visible_train);
  EXPECT_EQ(back.query_gt, w.query_gt);
  EXPECT_EQ(load_world_simulator_config(dir), cfg);
  fs::remove_all(dir);
}

TEST(Coverage, Examples) {
  World w = make_world(small_world());
  for (const auto& [c, v] : coverage(w.hidden_gt, w.hidden_gt)) EXPECT_EQ(v, 1.0);
  Dataset empty = w.hidden_gt;
  empty.annotations.clear();
  for (const auto& [c, v] : coverage(empty, w.hidden_gt)) EXPECT_EQ(v, 0.0);

  Dataset hidden;
  hidden.images = {{1, "a", 100, 100}, {2, "b", 100, 100}};
  hidden.categories = {{1, "c"}, {2, "d"}};
  auto add = [](Dataset& d, AnnotationId id, ImageId img, CategoryId c, BBox b) {
    d.annotations.push_back({id, img, c, b, b.area(), 0, AnnotationSource::kGroundTruth,
                             std::nullopt});
  };
  add(hidden, 1, 1, 1, {0, 0, 10, 10});
  add(hidden, 2, 1, 1, {40, 40, 10, 10});
  add(hidden, 3, 2, 1, {0, 0, 10, 10});
  add(hidden, 4, 2, 1, {60, 0, 10, 10});
  add(hidden, 5, 2, 2, {0, 0, 10, 10});
  Dataset train = hidden;
  train.annotations.clear();
  add(train, 1, 2, 1, {61, 0, 10, 10});
  auto cov = coverage(train, hidden);
  EXPECT_EQ(cov[1], 0.25);
  EXPECT_EQ(cov[2], 0.0);

  // Two labels on one instance match it once.
  add(train, 2, 2, 1, {60, 0, 10, 10});
  EXPECT_EQ(coverage(train, hidden)[1], 0.25);
  // A wrong-class label does not count, and lowers precision.
  add(train, 3, 1, 2, {40, 40, 10, 10});
  EXPECT_EQ(coverage(train, hidden)[2], 0.0);
  EXPECT_EQ(coverage(train, hidden, 1.0)[1], 0.25 * 0.5);
}

TEST(Coverage, Unresolvable) {
  World w = make_world(small_world());
  Dataset train = w.visible_train;
  train.annotations[0].image_id = 999;
  try {
    coverage(train, w.hidden_gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnresolvableReference);
  }
}

TEST(Simulate, DegenerateNoiseless) {
  World w = make_world(small_world());
  SimulatorConfig cfg;
  cfg.sigma_max = 0.0;
  cfg.p_max = 1.0;
  cfg.lambda_fp_max = cfg.lambda_fp_min = 0.0;
  auto p = simulate_predictions(w, uniform_cov(w, 1.0), cfg, w.train_image_ids(), 1);
  ASSERT_EQ(p.size(), w.hidden_gt.annotations.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(p.detections[i].bbox, w.hidden_gt.annotations[i].bbox);
    EXPECT_EQ(p.detections[i].category_id, w.hidden_gt.annotations[i].category_id);
  }
}

TEST(Simulate, OnlyFalsePositivesWithoutCoverage) {
  World w = make_world(small_world());
  SimulatorConfig cfg;
  cfg.p_min = 0.0;
  cfg.lambda_fp_max = 3.0;
  auto p = simulate_predictions(w, uniform_cov(w, 0.0), cfg, w.train_image_ids(), 1);
  EXPECT_GT(p.size(), 0u);
  for (const auto& d : p.detections) {
    EXPECT_GE(d.score, 0.0);
    EXPECT_LE(d.score, 1.0);
  }
  // With p = 0 nothing is emitted from ground truth; the false-positive
  // count matches the Poisson mean roughly.
  const double expect = 3.0 * static_cast<double>(w.hidden_gt.images.size());
  EXPECT_NEAR(static_cast<double>(p.size()), expect, 4.0 * std::sqrt(expect));
}

TEST(Simulate, DeterministicAndBatchInvariant) {
  World w = make_world(small_world());
  SimulatorConfig cfg;
  cfg.seed = 17;
  auto cov = uniform_cov(w, 0.4);
  auto ids = w.train_image_ids();
  auto all = simulate_predictions(w, cov, cfg, ids, 2);
  EXPECT_EQ(all, simulate_predictions(w, cov, cfg, ids, 2));
  PredictionSet joined;
  joined.round = 2;
  for (ImageId id : ids) {
    auto one = simulate_predictions(w, cov, cfg, {id}, 2);
    joined.detections.insert(joined.detections.end(), one.detections.begin(),
                             one.detections.end());
  }
  EXPECT_EQ(all, joined);
  EXPECT_NE(all, simulate_predictions(w, cov, cfg, ids, 3));
  auto q = simulate_predictions(w, cov, cfg, w.query_image_ids(), 1);
  for (const auto& d : q.detections) EXPECT_GT(d.image_id, ids.back());
}

TEST(Simulate, EmissionRateAtHalfCoverage) {
  World w = make_world(small_world());
  SimulatorConfig cfg;
  cfg.lambda_fp_max = cfg.lambda_fp_min = 0.0;
  auto cov = uniform_cov(w, 0.5);
  std::size_t emitted = 0, boxes = 0;
  for (std::uint64_t run = 0; run < 1000; ++run) {
    cfg.seed = run;
    emitted += simulate_predictions(w, cov, cfg, w.train_image_ids(), 1).size();
    boxes += w.hidden_gt.annotations.size();
  }
  const double rate = static_cast<double>(emitted) / static_cast<double>(boxes);
  EXPECT_NEAR(rate, cfg.p_min + 0.5 * (cfg.p_max - cfg.p_min), 0.03);
}

TEST(Simulate, MonotoneInCoverage) {
  World w = make_world(small_world());
  const std::vector<double> levels = {0.0, 0.3, 0.7, 1.0};
  std::vector<double> tp_count, fp_count, tp_conf;
  for (double level : levels) {
    SimulatorConfig tp_only;
    tp_only.lambda_fp_max = tp_only.lambda_fp_min = 0.0;
    SimulatorConfig fp_only;
    fp_only.p_min = fp_only.p_max = 0.0;
    double tp = 0, fp = 0, conf = 0;
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
      tp_only.seed = fp_only.seed = seed;
      auto t = simulate_predictions(w, uniform_cov(w, level), tp_only, w.train_image_ids(), 1);
      tp += static_cast<double>(t.size());
      for (const auto& d : t.detections) conf += d.score;
      fp += static_cast<double>(
          simulate_predictions(w, uniform_cov(w, level), fp_only, w.train_image_ids(), 1).size());
    }
    tp_count.push_back(tp);
    fp_count.push_back(fp);
    tp_conf.push_back(conf / tp);
  }
  for (std::size_t i = 1; i < levels.size(); ++i) {
    EXPECT_GE(tp_count[i], tp_count[i - 1] * 0.98);
    EXPECT_LE(fp_count[i], fp_count[i - 1] * 1.02);
    EXPECT_GT(tp_conf[i], tp_conf[i - 1]);
  }
}

TEST(SimulatorConfig, CheckAndJson) {
  SimulatorConfig cfg;
  EXPECT_TRUE(cfg.check().empty());
  cfg.p_min = 0.99;
  EXPECT_FALSE(cfg.check().empty());
  cfg = {};
  cfg.beta = 2;
  EXPECT_FALSE(cfg.check().empty());
  cfg = {};
  cfg.lambda_fp_min = 5;
  EXPECT_FALSE(cfg.check().empty());
  cfg = {};
  cfg.zero_shot = 0.3;
  cfg.seed = 12;
  EXPECT_EQ(simulator_config_from_json(simulator_config_to_json(cfg)), cfg);
}
