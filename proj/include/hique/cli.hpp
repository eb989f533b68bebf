#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace hique {

inline constexpr const char* kArtifactVersion = "hique 1.0.0";

// Runs one command line (without the program name). Returns the process
// exit code: 0 ok, 2 usage, 3 data validation, 4 runtime.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// <dir>/manifest.json for directory outputs, <file>.manifest.json otherwise.
std::filesystem::path manifest_path_for(const std::filesystem::path& output, bool is_directory);
// Sibling of a manifest holding wall-clock timings (kept out of the
// manifest so reruns are byte-identical).
std::filesystem::path timings_path_for(const std::filesystem::path& manifest);

// participant_id,label CSV. Also accepts DAIC-WOZ split sheets with
// Participant_ID and PHQ8_Binary (or PHQ_Binary) columns.
std::vector<std::pair<std::string, std::string>> read_label_csv(const std::filesystem::path& file);

}  // namespace hique
