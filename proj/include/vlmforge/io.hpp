#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace vlmforge {

std::string read_file(const std::filesystem::path& path);

// Writes to "<path>.tmp" and renames over `path`; the temporary is removed
// on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Sorted keys, no whitespace, strict UTF-8.
std::string canonical_dump(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

std::string utc_timestamp();

// Two-decimal rendering of a percentage held as integer hundredths.
std::string format_hundredths(long long hundredths);

// 100 * num / den rounded half-up to hundredths of a percent, computed in
// integers so the result is exact.
long long percent_hundredths(unsigned long long num, unsigned long long den);

}  // namespace vlmforge
