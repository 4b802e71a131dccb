#include "orchard/tar.hpp"

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <fstream>

#include "orchard/errors.hpp"
#include "orchard/util.hpp"

namespace orchard::tar {

namespace {

constexpr std::size_t kBlock = 512;

void write_octal(char* field, std::size_t width, std::uint64_t value) {
  // zero-padded octal with trailing NUL, the conservative ustar form
  for (std::size_t i = 0; i < width - 1; ++i) {
    field[width - 2 - i] = static_cast<char>('0' + (value & 7));
    value >>= 3;
  }
  field[width - 1] = '\0';
}

std::uint64_t read_octal(const char* field, std::size_t width) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < width; ++i) {
    char c = field[i];
    if (c == '\0' || c == ' ') break;
    if (c < '0' || c > '7') fail(ErrorCode::integrity, "bad octal field in tar header");
    value = (value << 3) | static_cast<std::uint64_t>(c - '0');
  }
  return value;
}

struct Header {
  char name[100];
  char mode[8];
  char uid[8];
  char gid[8];
  char size[12];
  char mtime[12];
  char chksum[8];
  char typeflag;
  char linkname[100];
  char magic[6];
  char version[2];
  char uname[32];
  char gname[32];
  char devmajor[8];
  char devminor[8];
  char prefix[155];
  char pad[12];
};
static_assert(sizeof(Header) == kBlock);

std::string make_header(const Entry& e) {
  if (e.path.empty() || e.path.front() == '/')
    fail(ErrorCode::validation, "tar entry path must be relative: " + e.path);
  Header h;
  std::memset(&h, 0, sizeof(h));
  std::string name = e.path;
  if (name.size() <= sizeof(h.name)) {
    std::memcpy(h.name, name.data(), name.size());
  } else {
    // split into prefix/name at a '/' boundary
    std::size_t cut = name.rfind('/', sizeof(h.prefix));
    if (cut == std::string::npos || name.size() - cut - 1 > sizeof(h.name))
      fail(ErrorCode::validation, "tar entry path too long: " + e.path);
    std::memcpy(h.prefix, name.data(), cut);
    std::memcpy(h.name, name.data() + cut + 1, name.size() - cut - 1);
  }
  write_octal(h.mode, sizeof(h.mode), e.executable ? 0755 : 0644);
  write_octal(h.uid, sizeof(h.uid), 0);
  write_octal(h.gid, sizeof(h.gid), 0);
  write_octal(h.size, sizeof(h.size), e.data.size());
  write_octal(h.mtime, sizeof(h.mtime), 0);
  h.typeflag = '0';
  std::memcpy(h.magic, "ustar", 6);
  h.version[0] = '0';
  h.version[1] = '0';

  std::memset(h.chksum, ' ', sizeof(h.chksum));
  const auto* bytes = reinterpret_cast<const unsigned char*>(&h);
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i) sum += bytes[i];
  write_octal(h.chksum, 7, sum);
  h.chksum[7] = ' ';

  return std::string(reinterpret_cast<const char*>(&h), kBlock);
}

}  // namespace

std::string write_archive(const std::vector<Entry>& entries) {
  std::vector<const Entry*> sorted;
  sorted.reserve(entries.size());
  for (const auto& e : entries) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(),
            [](const Entry* a, const Entry* b) { return a->path < b->path; });

  std::string out;
  for (const Entry* e : sorted) {
    out += make_header(*e);
    out += e->data;
    std::size_t rem = e->data.size() % kBlock;
    if (rem != 0) out.append(kBlock - rem, '\0');
  }
  out.append(2 * kBlock, '\0');
  return out;
}

std::string archive_tree(const std::filesystem::path& root) {
  std::vector<Entry> entries;
  for (const auto& rel : util::list_files(root)) {
    auto full = root / rel;
    Entry e;
    e.path = rel;
    e.data = util::read_file(full);
    auto perms = std::filesystem::status(full).permissions();
    e.executable =
        (perms & std::filesystem::perms::owner_exec) != std::filesystem::perms::none;
    entries.push_back(std::move(e));
  }
  return write_archive(entries);
}

std::vector<Entry> read_archive(const std::string& bytes) {
  std::vector<Entry> out;
  std::size_t off = 0;
  bool terminated = false;
  while (off + kBlock <= bytes.size()) {
    const auto* h = reinterpret_cast<const Header*>(bytes.data() + off);
    bool all_zero = true;
    for (std::size_t i = 0; i < kBlock; ++i) {
      if (bytes[off + i] != '\0') {
        all_zero = false;
        break;
      }
    }
    if (all_zero) {  // end-of-archive marker is two full zero blocks
      if (off + 2 * kBlock > bytes.size())
        fail(ErrorCode::integrity, "truncated tar archive");
      for (std::size_t i = kBlock; i < 2 * kBlock; ++i)
        if (bytes[off + i] != '\0')
          fail(ErrorCode::integrity, "corrupt end-of-archive marker");
      terminated = true;
      break;
    }
    if (std::memcmp(h->magic, "ustar", 5) != 0)
      fail(ErrorCode::integrity, "not a ustar archive");
    std::uint64_t expected = read_octal(h->chksum, sizeof(h->chksum));
    std::uint64_t sum = 0;
    const auto* raw = reinterpret_cast<const unsigned char*>(h);
    for (std::size_t i = 0; i < kBlock; ++i) {
      bool in_chksum = i >= offsetof(Header, chksum) && i < offsetof(Header, chksum) + 8;
      sum += in_chksum ? ' ' : raw[i];
    }
    if (sum != expected) fail(ErrorCode::integrity, "tar header checksum mismatch");
    std::uint64_t size = read_octal(h->size, sizeof(h->size));
    std::string name(h->name, strnlen(h->name, sizeof(h->name)));
    if (h->prefix[0] != '\0') {
      std::string prefix(h->prefix, strnlen(h->prefix, sizeof(h->prefix)));
      name = prefix + "/" + name;
    }
    off += kBlock;
    if (off + size > bytes.size())
      fail(ErrorCode::integrity, "truncated tar archive");
    if (h->typeflag == '0' || h->typeflag == '\0') {
      Entry e;
      e.path = std::move(name);
      e.data = bytes.substr(off, size);
      e.executable = (read_octal(h->mode, sizeof(h->mode)) & 0100) != 0;
      out.push_back(std::move(e));
    }
    off += (size + kBlock - 1) / kBlock * kBlock;
  }
  if (!terminated) fail(ErrorCode::integrity, "truncated tar archive");
  return out;
}

void extract_archive(const std::string& bytes, const std::filesystem::path& dest) {
  for (const auto& e : read_archive(bytes)) {
    auto target = dest / e.path;
    std::filesystem::create_directories(target.parent_path());
    util::atomic_write_file(target, e.data);
    if (e.executable) {
      std::filesystem::permissions(target,
                                   std::filesystem::perms::owner_all |
                                       std::filesystem::perms::group_read |
                                       std::filesystem::perms::group_exec |
                                       std::filesystem::perms::others_read |
                                       std::filesystem::perms::others_exec,
                                   std::filesystem::perm_options::replace);
    }
  }
}

}  // namespace orchard::tar
