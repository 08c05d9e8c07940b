#include "pseudoloop/backend.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <string_view>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pseudoloop/io.hpp"

extern char** environ;

namespace pseudoloop {

namespace fs = std::filesystem;

std::string_view BackendKindName(BackendKind kind) {
  switch (kind) {
    case BackendKind::kCommand: return "command";
    case BackendKind::kFile: return "file";
    case BackendKind::kSimulator: return "simulator";
  }
  return "simulator";
}

std::optional<BackendKind> ParseBackendKind(std::string_view name) {
  if (name == "command") return BackendKind::kCommand;
  if (name == "file") return BackendKind::kFile;
  if (name == "simulator") return BackendKind::kSimulator;
  return std::nullopt;
}

std::string BackendDescriptor::check() const {
  switch (kind) {
    case BackendKind::kCommand:
      if (command.train_command.empty() || command.predict_command.empty()) {
        return "command backend needs train_command and predict_command";
      }
      if (command.workdir.empty()) return "command backend needs a workdir";
      if (command.timeout.count() <= 0) return "timeout must be positive";
      return {};
    case BackendKind::kFile:
      if (file.path_pattern.empty()) return "file backend needs a path pattern";
      return {};
    case BackendKind::kSimulator:
      return simulator.config.check();
  }
  return "unknown backend kind";
}

// DetectorBackend -----------------------------------------------------------

void DetectorBackend::train(const TrainRequest& request) {
  if (auto violations = validate(request.train_annotations); !violations.empty()) {
    throw DataError(violations.front().kind,
                    "training annotations invalid: " + violations.front().describe());
  }
  register_images(request.train_annotations.images);
  categories_ = request.train_annotations.categories;
  do_train(request);
  trained_ = true;
}

PredictionSet DetectorBackend::predict(const PredictRequest& request) {
  if (requires_training() && !trained_) {
    throw PreconditionError("predict called before the backend was trained");
  }
  for (ImageId id : request.image_ids) {
    if (!known_.contains(id)) {
      throw PreconditionError(
          fmt::format("predict request names unknown image {}", id));
    }
  }
  PredictionSet p = do_predict(request);
  p.round = request.round;
  return p;
}

void DetectorBackend::register_images(std::span<const ImageRecord> images) {
  for (const auto& img : images) {
    if (known_.insert(img.id).second) images_.push_back(img);
  }
}

const ImageRecord& DetectorBackend::image(ImageId id) const {
  auto it = std::find_if(images_.begin(), images_.end(),
                         [id](const ImageRecord& r) { return r.id == id; });
  if (it == images_.end()) {
    throw PreconditionError(fmt::format("unknown image {}", id));
  }
  return *it;
}

namespace {

PredictionSet restrict_to(PredictionSet p, const std::vector<ImageId>& ids) {
  std::unordered_set<ImageId> wanted(ids.begin(), ids.end());
  std::erase_if(p.detections,
                [&wanted](const Detection& d) { return !wanted.contains(d.image_id); });
  return p;
}

std::string replace_all(std::string text, std::string_view from,
                        std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

}  // namespace

// FileBackend ---------------------------------------------------------------

FileBackend::FileBackend(FileSettings settings) : settings_(std::move(settings)) {}

fs::path FileBackend::path_for_round(int round) const {
  return replace_all(settings_.path_pattern, "{round}", std::to_string(round));
}

PredictionSet FileBackend::do_predict(const PredictRequest& request) {
  const fs::path path = path_for_round(request.round);
  if (!fs::exists(path)) {
    throw MissingPredictionFile(request.round, path.string());
  }
  return restrict_to(parse_predictions(read_file(path)), request.image_ids);
}

// CommandBackend ------------------------------------------------------------

std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += "'";
  return out;
}

namespace {

using Bindings = std::vector<std::pair<std::string, std::string>>;

std::string substitute(const std::string& tmpl, const Bindings& bindings) {
  std::string out = tmpl;
  for (const auto& [key, value] : bindings) {
    out = replace_all(std::move(out), "{" + key + "}", shell_quote(value));
  }
  return out;
}

Bindings to_env(const Bindings& bindings) {
  Bindings env;
  for (const auto& [key, value] : bindings) {
    std::string name = "PSEUDOLOOP_" + key;
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return std::toupper(c); });
    env.emplace_back(std::move(name), value);
  }
  return env;
}

std::string tail(const fs::path& path, std::size_t max_bytes) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return {};
  std::string text = read_file(path);
  if (text.size() > max_bytes) text = text.substr(text.size() - max_bytes);
  return text;
}

}  // namespace

ProcessResult run_shell_command(const std::string& command, const Bindings& env,
                                const fs::path& log_dir,
                                std::chrono::milliseconds timeout) {
  fs::create_directories(log_dir);
  const fs::path out_log = log_dir / "stdout.log";
  const fs::path err_log = log_dir / "stderr.log";

  // Everything the child needs is prepared before fork; the child only makes
  // async-signal-safe calls.
  std::vector<std::string> env_strings;
  for (char** e = environ; *e != nullptr; ++e) {
    std::string_view entry(*e);
    const bool overridden = std::any_of(env.begin(), env.end(), [&](const auto& kv) {
      return entry.size() > kv.first.size() && entry.starts_with(kv.first) &&
             entry[kv.first.size()] == '=';
    });
    if (!overridden) env_strings.emplace_back(entry);
  }
  for (const auto& [key, value] : env) env_strings.push_back(key + "=" + value);
  std::vector<char*> envp;
  for (auto& e : env_strings) envp.push_back(e.data());
  envp.push_back(nullptr);
  std::string shell = "sh";
  std::string flag = "-c";
  std::string body = command;
  char* argv[] = {shell.data(), flag.data(), body.data(), nullptr};

  pid_t pid = fork();
  if (pid < 0) {
    throw BackendError(ErrorKind::kBackendFailure, -1,
                       fmt::format("fork failed: {}", std::strerror(errno)));
  }
  if (pid == 0) {
    setpgid(0, 0);
    int out_fd = open(out_log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    int err_fd = open(err_log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (out_fd >= 0) dup2(out_fd, STDOUT_FILENO);
    if (err_fd >= 0) dup2(err_fd, STDERR_FILENO);
    execve("/bin/sh", argv, envp.data());
    _exit(127);
  }
  setpgid(pid, pid);

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  while (true) {
    pid_t done = waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0 && errno != EINTR) {
      throw BackendError(ErrorKind::kBackendFailure, -1,
                         fmt::format("waitpid failed: {}", std::strerror(errno)));
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw BackendError(
          ErrorKind::kTimeout, -1,
          fmt::format("command timed out after {} ms: {}", timeout.count(), command),
          tail(err_log, 2048));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }

  ProcessResult result;
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  result.stderr_tail = tail(err_log, 2048);
  return result;
}

CommandBackend::CommandBackend(CommandSettings settings)
    : settings_(std::move(settings)) {}

void CommandBackend::do_train(const TrainRequest& request) {
  const fs::path dir = settings_.workdir / fmt::format("round_{}", request.round);
  fs::create_directories(dir);
  const fs::path train_json = dir / "train_input.json";
  save_dataset(request.train_annotations, train_json.string());
  epochs_ = request.epochs_hint;
  reset_ = request.reset_weights;

  Bindings bindings = {
      {"train_json", train_json.string()},
      {"pred_json", (dir / "predictions.json").string()},
      {"image_list", (dir / "images.json").string()},
      {"workdir", settings_.workdir.string()},
      {"round", std::to_string(request.round)},
      {"epochs", std::to_string(epochs_)},
      {"reset", reset_ ? "1" : "0"},
  };
  auto result = run_shell_command(substitute(settings_.train_command, bindings),
                                  to_env(bindings), dir / "train_logs",
                                  settings_.timeout);
  if (result.exit_code != 0) {
    throw BackendError(ErrorKind::kBackendFailure, result.exit_code,
                       fmt::format("train command exited with {}", result.exit_code),
                       result.stderr_tail);
  }
}

PredictionSet CommandBackend::do_predict(const PredictRequest& request) {
  const fs::path dir = settings_.workdir / fmt::format("round_{}", request.round);
  fs::create_directories(dir);
  const int call = predict_calls_++;
  const fs::path pred_json = dir / fmt::format("predictions_{}.json", call);
  const fs::path image_list = dir / fmt::format("images_{}.json", call);

  Dataset listing;
  for (ImageId id : request.image_ids) listing.images.push_back(image(id));
  listing.categories = categories();
  save_dataset(listing, image_list.string());
  std::error_code ec;
  fs::remove(pred_json, ec);

  Bindings bindings = {
      {"train_json", (dir / "train_input.json").string()},
      {"pred_json", pred_json.string()},
      {"image_list", image_list.string()},
      {"workdir", settings_.workdir.string()},
      {"round", std::to_string(request.round)},
      {"epochs", std::to_string(epochs_)},
      {"reset", reset_ ? "1" : "0"},
  };
  auto result = run_shell_command(substitute(settings_.predict_command, bindings),
                                  to_env(bindings),
                                  dir / fmt::format("predict_logs_{}", call),
                                  settings_.timeout);
  if (result.exit_code != 0) {
    throw BackendError(ErrorKind::kBackendFailure, result.exit_code,
                       fmt::format("predict command exited with {}", result.exit_code),
                       result.stderr_tail);
  }
  if (!fs::exists(pred_json)) {
    throw BackendError(ErrorKind::kBackendFailure, 0,
                       fmt::format("predict command did not write {}",
                                   pred_json.string()),
                       result.stderr_tail);
  }
  return restrict_to(parse_predictions(read_file(pred_json)), request.image_ids);
}

// SimulatorBackend ----------------------------------------------------------

SimulatorBackend::SimulatorBackend(std::shared_ptr<const World> world,
                                   SimulatorConfig config)
    : world_(std::move(world)), config_(config) {
  register_images(world_->hidden_gt.images);
  register_images(world_->query_gt.images);
}

void SimulatorBackend::do_train(const TrainRequest& request) {
  coverage_ = coverage(request.train_annotations, world_->hidden_gt,
                       config_.noise_exponent);
  for (auto& [category, value] : coverage_) {
    value = config_.zero_shot + (1.0 - config_.zero_shot) * value;
  }
}

PredictionSet SimulatorBackend::do_predict(const PredictRequest& request) {
  return simulate_predictions(*world_, coverage_, config_, request.image_ids,
                              request.round);
}

std::unique_ptr<DetectorBackend> make_backend(const BackendDescriptor& descriptor,
                                              std::shared_ptr<const World> world) {
  if (auto problem = descriptor.check(); !problem.empty()) {
    throw ConfigError(problem);
  }
  switch (descriptor.kind) {
    case BackendKind::kCommand:
      return std::make_unique<CommandBackend>(descriptor.command);
    case BackendKind::kFile:
      return std::make_unique<FileBackend>(descriptor.file);
    case BackendKind::kSimulator:
      if (!world) {
        if (descriptor.simulator.world_dir.empty()) {
          throw ConfigError("simulator backend needs a world");
        }
        world = std::make_shared<const World>(load_world(descriptor.simulator.world_dir));
      }
      return std::make_unique<SimulatorBackend>(std::move(world),
                                                descriptor.simulator.config);
  }
  throw ConfigError("unknown backend kind");
}

}  // namespace pseudoloop
