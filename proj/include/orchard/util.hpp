#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace orchard::util {

namespace fs = std::filesystem;

// --- filesystem helpers ------------------------------------------------

std::string read_file(const fs::path& path);
std::optional<std::string> read_file_if_exists(const fs::path& path);

// Write-then-rename so readers never observe a partial file.
void atomic_write_file(const fs::path& path, std::string_view content);

void append_line(const fs::path& path, std::string_view line);

// Relative paths of all regular files under root, sorted bytewise.
std::vector<std::string> list_files(const fs::path& root);

// Recursive copy; preserves the executable bit. Destination is created.
void copy_tree(const fs::path& from, const fs::path& to);

// --- strings ------------------------------------------------------------

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Shell-style match: '*' spans within a path segment, '?' one char,
// '/' only matches itself.
bool glob_match(std::string_view pattern, std::string_view path);

std::string to_base64(std::string_view data);
std::string from_base64(std::string_view data);

// Fixed-width decimal ids: make_id("d", 42) == "d00000042".
// Zero padding keeps lexicographic order equal to creation order.
std::string make_id(std::string_view prefix, std::uint64_t n);

bool is_subset(const std::vector<std::string>& needles,
               const std::vector<std::string>& haystack);
bool intersects(const std::vector<std::string>& a,
                const std::vector<std::string>& b);

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t stable_hash(std::string_view s);

}  // namespace orchard::util
