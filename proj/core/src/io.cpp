#include "pseudoloop/io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "pseudoloop/error.hpp"

namespace pseudoloop {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(ErrorKind::kIo,
                    fmt::format("cannot open {}", path.string()));
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError(ErrorKind::kIo,
                      fmt::format("cannot write {}", tmp.string()));
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      throw DataError(ErrorKind::kIo,
                      fmt::format("short write to {}", tmp.string()));
    }
  }
  fs::rename(tmp, path);
}

}  // namespace pseudoloop
