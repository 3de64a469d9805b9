#pragma once

#include <filesystem>
#include <string>

namespace vimts::io {

// Writes to `<path>.tmp` then renames over `path`; creates parent directories.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace vimts::io
