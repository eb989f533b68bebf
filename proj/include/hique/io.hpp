#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace hique {

// Whole-file read; throws Error naming the path.
std::string read_text_file(const std::filesystem::path& path);

// Writes to "<path>.tmp" and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace hique
