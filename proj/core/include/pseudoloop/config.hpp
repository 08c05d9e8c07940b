#pragma once

#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "pseudoloop/driver.hpp"

namespace pseudoloop {

// Everything `pseudoloop iterate` needs. Paths are resolved relative to the
// config file's directory.
struct RunSpec {
  PipelineConfig pipeline;
  std::filesystem::path train_path;
  std::optional<std::filesystem::path> query_path;
  // Empty: every image of the training set.
  std::vector<ImageId> images;
};

// Parses the TOML run configuration documented in docs/format.md.
// Throws ConfigError.
RunSpec parse_run_config(std::string_view toml_text,
                         const std::filesystem::path& base_dir);
RunSpec load_run_config(const std::filesystem::path& path);

}  // namespace pseudoloop
