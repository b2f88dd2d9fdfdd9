#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace claimcast::io {

/// Formats a double so that parsing it back reproduces the exact bits.
std::string format_exact(double v);
double parse_double(const std::string& s, const std::string& context);
long parse_long(const std::string& s, const std::string& context);

/// Writes via a temp file in the same directory, then renames into place.
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

std::string read_text_file(const std::filesystem::path& path);

/// Line-oriented key=value payload; order preserved, '#' starts a comment.
using KvPairs = std::vector<std::pair<std::string, std::string>>;
KvPairs parse_kv(const std::string& text, const std::string& context);
std::string serialize_kv(const KvPairs& pairs);

} // namespace claimcast::io
