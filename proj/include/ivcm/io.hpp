#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ivcm::io {

/// Shortest-safe text form used for every numeric output: 17 significant digits.
std::string format_double(double value);

std::vector<std::string> split_csv_line(std::string_view line);

/// Parses a double; throws Error(kParse) on malformed text. NaN/Inf parse
/// successfully and are left to the caller to reject.
double parse_double(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// 64-bit FNV-1a, used for reproducible config hashes.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace ivcm::io
