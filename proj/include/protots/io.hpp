#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace protots {

std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace protots
