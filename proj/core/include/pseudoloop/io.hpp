#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace pseudoloop {

// Throws DataError(kIo) when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

}  // namespace pseudoloop
