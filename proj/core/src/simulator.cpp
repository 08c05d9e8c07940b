#include "pseudoloop/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>
#include <unordered_map>

#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/beta_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pseudoloop/io.hpp"
#include "pseudoloop/rng.hpp"

namespace pseudoloop {

namespace {

// Stream tags keep world generation and prediction draws apart even when
// they share a root seed.
constexpr std::int64_t kWorldStream = 0x574f524c44;  // "WORLD"
constexpr std::int64_t kPredictStream = 0x50524544;  // "PRED"

constexpr double kMinBoxFraction = 0.06;
constexpr double kMaxBoxFraction = 0.22;
constexpr int kPlacementAttempts = 200;
constexpr double kCoverageMatchIou = 0.5;

BBox random_box(Engine& engine, int width, int height) {
  boost::random::uniform_real_distribution<double> size(kMinBoxFraction,
                                                        kMaxBoxFraction);
  const double w = std::max(1.0, std::round(size(engine) * width));
  const double h = std::max(1.0, std::round(size(engine) * height));
  boost::random::uniform_real_distribution<double> ux(0.0, width - w);
  boost::random::uniform_real_distribution<double> uy(0.0, height - h);
  return BBox{std::round(ux(engine)), std::round(uy(engine)), w, h};
}

BBox clip_to_image(BBox b, int width, int height) {
  double x1 = std::clamp(b.x, 0.0, static_cast<double>(width));
  double y1 = std::clamp(b.y, 0.0, static_cast<double>(height));
  double x2 = std::clamp(b.x + b.w, 0.0, static_cast<double>(width));
  double y2 = std::clamp(b.y + b.h, 0.0, static_cast<double>(height));
  double w = std::max(1.0, x2 - x1);
  double h = std::max(1.0, y2 - y1);
  x1 = std::min(x1, width - w);
  y1 = std::min(y1, height - h);
  return BBox{x1, y1, w, h};
}

}  // namespace

std::string SimulatorConfig::check() const {
  if (!(0.0 <= p_min && p_min <= p_max && p_max <= 1.0)) {
    return "need 0 <= p_min <= p_max <= 1";
  }
  if (!(sigma_max >= 0.0)) return "need sigma_max >= 0";
  if (!(beta >= 0.0 && beta <= 1.0)) return "need 0 <= beta <= 1";
  if (!(lambda_fp_min >= 0.0 && lambda_fp_min <= lambda_fp_max)) {
    return "need 0 <= lambda_fp_min <= lambda_fp_max";
  }
  if (!(conf_tp_alpha >= 0.0)) return "need conf_tp_alpha >= 0";
  if (!(zero_shot >= 0.0 && zero_shot <= 1.0)) return "need 0 <= zero_shot <= 1";
  if (!(noise_exponent >= 0.0)) return "need noise_exponent >= 0";
  return {};
}

std::vector<ImageId> World::train_image_ids() const {
  std::vector<ImageId> ids;
  for (const auto& img : hidden_gt.images) ids.push_back(img.id);
  return ids;
}

std::vector<ImageId> World::query_image_ids() const {
  std::vector<ImageId> ids;
  for (const auto& img : query_gt.images) ids.push_back(img.id);
  return ids;
}

World make_world(const WorldParams& params) {
  if (params.n_images < 2 || params.n_classes < 1 || params.min_instances < 0 ||
      params.max_instances < params.min_instances || params.image_width < 16 ||
      params.image_height < 16) {
    throw ConfigError("world parameters out of range");
  }

  std::vector<CategoryRecord> categories;
  for (int c = 1; c <= params.n_classes; ++c) {
    categories.push_back({c, fmt::format("class_{}", c), nlohmann::json::object()});
  }

  const int n_train = (params.n_images + 1) / 2;
  World world;
  world.hidden_gt.categories = categories;
  world.query_gt.categories = categories;

  AnnotationId next_annotation = 1;
  for (ImageId id = 1; id <= params.n_images; ++id) {
    ImageRecord img{id, fmt::format("synthetic_{:05d}.png", id),
                    params.image_width, params.image_height,
                    nlohmann::json::object()};
    Dataset& target = id <= n_train ? world.hidden_gt : world.query_gt;
    target.images.push_back(img);

    Engine engine = make_engine(params.seed, {kWorldStream, id});
    boost::random::uniform_int_distribution<int> count(params.min_instances,
                                                       params.max_instances);
    boost::random::uniform_int_distribution<CategoryId> klass(1, params.n_classes);
    const int n = count(engine);
    std::vector<AnnotationRecord> placed;
    for (int i = 0; i < n; ++i) {
      const CategoryId c = klass(engine);
      for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        BBox box = random_box(engine, img.width, img.height);
        bool clear = std::none_of(
            placed.begin(), placed.end(), [&](const AnnotationRecord& other) {
              return other.category_id == c &&
                     iou(other.bbox, box) > params.max_same_class_iou;
            });
        if (clear) {
          AnnotationRecord a;
          a.id = next_annotation++;
          a.image_id = id;
          a.category_id = c;
          a.bbox = box;
          a.area = box.area();
          placed.push_back(a);
          break;
        }
      }
    }
    for (auto& a : placed) target.annotations.push_back(std::move(a));
  }

  world.visible_train = sample_support(world.hidden_gt, params.k_shot, params.seed);
  return world;
}

CoverageMap coverage(const Dataset& train_annotations, const Dataset& hidden_gt,
                     double noise_exponent) {
  std::set<ImageId> images;
  for (const auto& img : hidden_gt.images) images.insert(img.id);
  std::set<CategoryId> categories;
  for (const auto& cat : hidden_gt.categories) categories.insert(cat.id);

  using Key = std::pair<ImageId, CategoryId>;
  std::map<Key, std::vector<const BBox*>> hidden;
  std::map<CategoryId, std::size_t> hidden_total;
  for (const auto& a : hidden_gt.annotations) {
    hidden[{a.image_id, a.category_id}].push_back(&a.bbox);
    ++hidden_total[a.category_id];
  }
  std::map<Key, std::vector<const BBox*>> train;
  std::map<CategoryId, std::size_t> train_total;
  for (const auto& a : train_annotations.annotations) {
    if (!images.contains(a.image_id) || !categories.contains(a.category_id)) {
      throw DataError(ErrorKind::kUnresolvableReference,
                      fmt::format("training annotation {} (image {}, category "
                                  "{}) is outside the hidden ground truth",
                                  a.id, a.image_id, a.category_id));
    }
    train[{a.image_id, a.category_id}].push_back(&a.bbox);
    ++train_total[a.category_id];
  }

  std::map<CategoryId, std::size_t> matched;
  for (const auto& [key, boxes] : train) {
    auto it = hidden.find(key);
    if (it == hidden.end()) continue;
    const auto& truth = it->second;
    // (iou, train index, hidden index), best pairs first.
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      for (std::size_t j = 0; j < truth.size(); ++j) {
        double v = iou(*boxes[i], *truth[j]);
        if (v >= kCoverageMatchIou) pairs.emplace_back(v, i, j);
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& l, const auto& r) {
      if (std::get<0>(l) != std::get<0>(r)) return std::get<0>(l) > std::get<0>(r);
      return std::tie(std::get<1>(l), std::get<2>(l)) <
             std::tie(std::get<1>(r), std::get<2>(r));
    });
    std::vector<char> used_train(boxes.size(), 0);
    std::vector<char> used_truth(truth.size(), 0);
    for (const auto& [v, i, j] : pairs) {
      if (used_train[i] || used_truth[j]) continue;
      used_train[i] = used_truth[j] = 1;
      ++matched[key.second];
    }
  }

  CoverageMap out;
  for (const auto& cat : hidden_gt.categories) {
    const std::size_t total = hidden_total[cat.id];
    if (total == 0) {
      out[cat.id] = 0.0;
      continue;
    }
    const double hits = static_cast<double>(matched[cat.id]);
    const double recall = hits / static_cast<double>(total);
    const std::size_t labels = train_total[cat.id];
    const double precision = labels ? hits / static_cast<double>(labels) : 1.0;
    out[cat.id] = recall * std::pow(precision, noise_exponent);
  }
  return out;
}

PredictionSet simulate_predictions(const World& w, const CoverageMap& cov,
                                   const SimulatorConfig& cfg,
                                   const std::vector<ImageId>& image_ids,
                                   int round) {
  std::unordered_map<ImageId, std::pair<const ImageRecord*, const Dataset*>> lookup;
  for (const Dataset* d : {&w.hidden_gt, &w.query_gt}) {
    for (const auto& img : d->images) lookup[img.id] = {&img, d};
  }
  std::unordered_map<ImageId, std::vector<const AnnotationRecord*>> truth;
  for (const Dataset* d : {&w.hidden_gt, &w.query_gt}) {
    for (const auto& a : d->annotations) truth[a.image_id].push_back(&a);
  }

  std::vector<CategoryId> classes;
  double mean_cov = 0.0;
  for (const auto& cat : w.hidden_gt.categories) {
    classes.push_back(cat.id);
    auto it = cov.find(cat.id);
    mean_cov += it == cov.end() ? 0.0 : it->second;
  }
  if (!classes.empty()) mean_cov /= static_cast<double>(classes.size());
  auto class_cov = [&cov](CategoryId c) {
    auto it = cov.find(c);
    return it == cov.end() ? 0.0 : std::clamp(it->second, 0.0, 1.0);
  };

  const double lambda_fp =
      cfg.lambda_fp_max * (1.0 - mean_cov) + cfg.lambda_fp_min * mean_cov;

  PredictionSet out;
  out.round = round;
  for (ImageId id : image_ids) {
    auto found = lookup.find(id);
    if (found == lookup.end()) {
      throw DataError(ErrorKind::kUnresolvableReference,
                      fmt::format("image {} is not part of the world", id));
    }
    const ImageRecord& img = *found->second.first;
    Engine engine = make_engine(cfg.seed, {kPredictStream, round, id});
    boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
    boost::random::normal_distribution<double> gauss(0.0, 1.0);

    for (const AnnotationRecord* a : truth[id]) {
      const double c = class_cov(a->category_id);
      const double p_emit = cfg.p_min + (cfg.p_max - cfg.p_min) * c;
      if (!(unit(engine) < p_emit)) continue;
      BBox box = a->bbox;
      const double scale = cfg.sigma_max * (1.0 - cfg.beta * c);
      if (scale > 0.0) {
        const double sx = scale * a->bbox.w;
        const double sy = scale * a->bbox.h;
        box.x += sx * gauss(engine);
        box.y += sy * gauss(engine);
        box.w += sx * gauss(engine);
        box.h += sy * gauss(engine);
        box = clip_to_image(box, img.width, img.height);
      }
      boost::random::beta_distribution<double> conf(1.0 + cfg.conf_tp_alpha * c,
                                                    2.0);
      out.detections.push_back({id, a->category_id, box, conf(engine)});
    }

    if (lambda_fp > 0.0 && !classes.empty()) {
      boost::random::poisson_distribution<int, double> n_fp(lambda_fp);
      boost::random::uniform_int_distribution<std::size_t> pick(0, classes.size() - 1);
      boost::random::beta_distribution<double> conf(1.0, 3.0);
      const int n = n_fp(engine);
      for (int i = 0; i < n; ++i) {
        const CategoryId c = classes[pick(engine)];
        BBox box = random_box(engine, img.width, img.height);
        out.detections.push_back({id, c, box, conf(engine)});
      }
    }
  }
  return out;
}

std::string simulator_config_to_json(const SimulatorConfig& cfg) {
  nlohmann::ordered_json o;
  o["p_min"] = cfg.p_min;
  o["p_max"] = cfg.p_max;
  o["sigma_max"] = cfg.sigma_max;
  o["beta"] = cfg.beta;
  o["lambda_fp_max"] = cfg.lambda_fp_max;
  o["lambda_fp_min"] = cfg.lambda_fp_min;
  o["conf_tp_alpha"] = cfg.conf_tp_alpha;
  o["zero_shot"] = cfg.zero_shot;
  o["noise_exponent"] = cfg.noise_exponent;
  o["seed"] = cfg.seed;
  return o.dump() + "\n";
}

SimulatorConfig simulator_config_from_json(std::string_view bytes) {
  nlohmann::json o;
  try {
    o = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("simulator config: {}", e.what()));
  }
  if (o.contains("simulator")) o = o["simulator"];
  if (!o.is_object()) throw ConfigError("simulator config must be an object");
  SimulatorConfig cfg;
  auto number = [&o](const char* key, double& field) {
    if (auto it = o.find(key); it != o.end()) {
      if (!it->is_number()) {
        throw ConfigError(fmt::format("simulator.{} must be a number", key));
      }
      field = it->get<double>();
    }
  };
  number("p_min", cfg.p_min);
  number("p_max", cfg.p_max);
  number("sigma_max", cfg.sigma_max);
  number("beta", cfg.beta);
  number("lambda_fp_max", cfg.lambda_fp_max);
  number("lambda_fp_min", cfg.lambda_fp_min);
  number("conf_tp_alpha", cfg.conf_tp_alpha);
  number("zero_shot", cfg.zero_shot);
  number("noise_exponent", cfg.noise_exponent);
  if (auto it = o.find("seed"); it != o.end()) {
    if (!it->is_number_unsigned()) {
      throw ConfigError("simulator.seed must be a non-negative integer");
    }
    cfg.seed = it->get<std::uint64_t>();
  }
  if (auto problem = cfg.check(); !problem.empty()) {
    throw ConfigError("simulator config: " + problem);
  }
  return cfg;
}

void save_world(const World& w, const WorldParams& params,
                const SimulatorConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(w.hidden_gt, (dir / "hidden_gt.json").string());
  save_dataset(w.visible_train, (dir / "visible_train.json").string());
  save_dataset(w.query_gt, (dir / "query_gt.json").string());

  nlohmann::ordered_json world;
  world["n_images"] = params.n_images;
  world["n_classes"] = params.n_classes;
  world["min_instances"] = params.min_instances;
  world["max_instances"] = params.max_instances;
  world["k_shot"] = params.k_shot;
  world["seed"] = params.seed;
  world["image_width"] = params.image_width;
  world["image_height"] = params.image_height;
  world["max_same_class_iou"] = params.max_same_class_iou;
  nlohmann::ordered_json root;
  root["world"] = std::move(world);
  root["simulator"] = nlohmann::ordered_json::parse(simulator_config_to_json(cfg));
  write_file_atomic(dir / "config.json", root.dump(2) + "\n");
}

World load_world(const std::filesystem::path& dir) {
  World w;
  w.hidden_gt = load_dataset((dir / "hidden_gt.json").string());
  w.visible_train = load_dataset((dir / "visible_train.json").string());
  w.query_gt = load_dataset((dir / "query_gt.json").string());
  return w;
}

SimulatorConfig load_world_simulator_config(const std::filesystem::path& dir) {
  return simulator_config_from_json(read_file(dir / "config.json"));
}

}  // namespace pseudoloop
