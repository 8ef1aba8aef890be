#pragma once

#include <filesystem>
#include <string>

namespace affdet {

// Whole-file helpers. Reading throws ValidationError for a missing file;
// writing creates parent directories.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace affdet
