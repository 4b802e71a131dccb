#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace orchard::digest {

// SHA-256, lowercase hex.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// One "<hex>  <relpath>" line per regular file, sorted by path.
// Same layout sha256sum prints, so shell tooling can reproduce it.
std::vector<std::string> tree_digest_lines(const std::filesystem::path& root);

// Digest of the joined tree lines; identifies a file tree as a whole.
std::string tree_digest(const std::filesystem::path& root);

}  // namespace orchard::digest
