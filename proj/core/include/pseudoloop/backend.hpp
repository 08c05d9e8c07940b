#pragma once

// The pluggable detector. The driver asks a backend to fine-tune on an
// annotation set and then to predict on a list of images; how that happens
// (an external program, recorded prediction files, the simulator) is the
// backend's business.

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pseudoloop/box_ops.hpp"
#include "pseudoloop/coco.hpp"
#include "pseudoloop/simulator.hpp"

namespace pseudoloop {

enum class BackendKind { kCommand, kFile, kSimulator };

std::string_view BackendKindName(BackendKind kind);
std::optional<BackendKind> ParseBackendKind(std::string_view name);

struct TrainRequest {
  Dataset train_annotations;
  int epochs_hint = 0;  // advisory
  bool reset_weights = true;
  int round = 0;
};

struct PredictRequest {
  std::vector<ImageId> image_ids;
  int round = 0;
};

inline constexpr std::chrono::seconds kDefaultBackendTimeout{24 * 60 * 60};

struct CommandSettings {
  // Placeholders: {train_json} {pred_json} {image_list} {workdir} {round}
  // {epochs} {reset}. Substituted values are shell-quoted. The same values
  // are exported as PSEUDOLOOP_TRAIN_JSON, PSEUDOLOOP_PRED_JSON, ... .
  std::string train_command;
  std::string predict_command;
  std::filesystem::path workdir;
  std::chrono::seconds timeout = kDefaultBackendTimeout;
};

struct FileSettings {
  // Path with an optional {round} placeholder.
  std::string path_pattern;
};

struct SimulatorSettings {
  std::filesystem::path world_dir;
  SimulatorConfig config;
};

struct BackendDescriptor {
  BackendKind kind = BackendKind::kSimulator;
  CommandSettings command;
  FileSettings file;
  SimulatorSettings simulator;

  // Empty when the settings for `kind` are complete.
  std::string check() const;
};

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;

  virtual BackendKind kind() const = 0;

  // Validates the request, then delegates. The training set's images become
  // predictable.
  void train(const TrainRequest& request);

  // Throws PreconditionError for image ids the backend does not know, or
  // when a backend that needs training has not been trained.
  PredictionSet predict(const PredictRequest& request);

  // Makes additional images (for example a query split) predictable.
  void register_images(std::span<const ImageRecord> images);

  bool trained() const { return trained_; }

 protected:
  virtual void do_train(const TrainRequest& request) = 0;
  virtual PredictionSet do_predict(const PredictRequest& request) = 0;
  virtual bool requires_training() const { return true; }

  const ImageRecord& image(ImageId id) const;
  const std::vector<CategoryRecord>& categories() const { return categories_; }

 private:
  std::vector<ImageRecord> images_;
  std::set<ImageId> known_;
  std::vector<CategoryRecord> categories_;
  bool trained_ = false;
};

// Replays recorded COCO-results files, one per round.
class FileBackend final : public DetectorBackend {
 public:
  explicit FileBackend(FileSettings settings);
  BackendKind kind() const override { return BackendKind::kFile; }
  std::filesystem::path path_for_round(int round) const;

 protected:
  void do_train(const TrainRequest&) override {}
  PredictionSet do_predict(const PredictRequest& request) override;
  bool requires_training() const override { return false; }

 private:
  FileSettings settings_;
};

// Runs external programs through /bin/sh, exchanging JSON files in a
// per-round work directory.
class CommandBackend final : public DetectorBackend {
 public:
  explicit CommandBackend(CommandSettings settings);
  BackendKind kind() const override { return BackendKind::kCommand; }

 protected:
  void do_train(const TrainRequest& request) override;
  PredictionSet do_predict(const PredictRequest& request) override;

 private:
  CommandSettings settings_;
  int epochs_ = 0;
  bool reset_ = true;
  int predict_calls_ = 0;
};

class SimulatorBackend final : public DetectorBackend {
 public:
  SimulatorBackend(std::shared_ptr<const World> world, SimulatorConfig config);
  BackendKind kind() const override { return BackendKind::kSimulator; }
  const CoverageMap& current_coverage() const { return coverage_; }

 protected:
  void do_train(const TrainRequest& request) override;
  PredictionSet do_predict(const PredictRequest& request) override;

 private:
  std::shared_ptr<const World> world_;
  SimulatorConfig config_;
  CoverageMap coverage_;
};

// For kSimulator, `world` overrides loading from settings.world_dir.
std::unique_ptr<DetectorBackend> make_backend(
    const BackendDescriptor& descriptor,
    std::shared_ptr<const World> world = nullptr);

// Runs `command` with /bin/sh -c. Returns the exit status (128 + signal for
// signalled children). Throws BackendError(kTimeout) after killing the
// process group when `timeout` elapses.
struct ProcessResult {
  int exit_code = 0;
  std::string stderr_tail;
};
ProcessResult run_shell_command(
    const std::string& command,
    const std::vector<std::pair<std::string, std::string>>& env,
    const std::filesystem::path& log_dir, std::chrono::milliseconds timeout);

// POSIX single-quote escaping.
std::string shell_quote(std::string_view s);

}  // namespace pseudoloop
