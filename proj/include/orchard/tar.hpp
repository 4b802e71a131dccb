#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace orchard::tar {

struct Entry {
  std::string path;   // archive-relative, no leading directory component
  std::string data;
  bool executable = false;
};

// Plain uncompressed ustar. Entries are written in sorted path order with
// fixed metadata (mtime 0, uid/gid 0) so identical trees produce identical
// archive bytes.
std::string write_archive(const std::vector<Entry>& entries);

// Archives every regular file under `root` at its root-relative path.
std::string archive_tree(const std::filesystem::path& root);

std::vector<Entry> read_archive(const std::string& bytes);

// Extract into `dest`, creating parent directories as needed.
void extract_archive(const std::string& bytes, const std::filesystem::path& dest);

}  // namespace orchard::tar
