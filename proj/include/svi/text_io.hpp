#pragma once

// Small helpers for the line-oriented text formats: shortest round-trip
// float formatting, tokenizing and key-value files.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace svi::text {

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);
void append_double(std::string& out, double v);

double parse_double(std::string_view token);
long long parse_int(std::string_view token);
std::uint64_t parse_u64(std::string_view token);

std::vector<std::string_view> split_ws(std::string_view line);
std::vector<std::string_view> split_lines(std::string_view text);
std::string_view trim(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// `key = value` (or `key value`) per line; '#' starts a comment.
using KeyValues = std::map<std::string, std::string, std::less<>>;
KeyValues parse_key_values(std::string_view text);

}  // namespace svi::text
