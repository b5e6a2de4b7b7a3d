#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mobkit::io {

/// Whole-file read. I/O failures throw mobkit::Error with the OS message.
std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary file in the same directory and renames it into place.
void write_text(const std::filesystem::path& path, std::string_view content);

/// One JSON value per non-empty line. Throws ValidationError naming the offending line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<nlohmann::json>& rows);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

/// Splits one CSV line; handles double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws ValidationError if missing.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace mobkit::io
