#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cgseg {

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_binary(const std::filesystem::path& path);
void write_binary(const std::filesystem::path& path, const std::string& bytes);

std::vector<std::string_view> split_ws(std::string_view line);
std::string to_lower(std::string s);

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

}  // namespace cgseg
