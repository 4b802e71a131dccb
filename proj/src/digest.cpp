#include "orchard/digest.hpp"

#include <openssl/evp.h>

#include <fstream>

#include "orchard/errors.hpp"
#include "orchard/util.hpp"

namespace orchard::digest {

namespace {

std::string to_hex(const unsigned char* data, std::size_t len) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (std::size_t i = 0; i < len; ++i) {
    out += hex[data[i] >> 4];
    out += hex[data[i] & 0xF];
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      fail(ErrorCode::io, "sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t len) {
    if (EVP_DigestUpdate(ctx_, data, len) != 1)
      fail(ErrorCode::io, "sha256 update failed");
  }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1)
      fail(ErrorCode::io, "sha256 final failed");
    return to_hex(md, len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open file: " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::vector<std::string> tree_digest_lines(const std::filesystem::path& root) {
  std::vector<std::string> lines;
  for (const auto& rel : util::list_files(root)) {
    lines.push_back(sha256_file(root / rel) + "  " + rel);
  }
  return lines;
}

std::string tree_digest(const std::filesystem::path& root) {
  Sha256 h;
  for (const auto& line : tree_digest_lines(root)) {
    h.update(line.data(), line.size());
    h.update("\n", 1);
  }
  return h.hex();
}

}  // namespace orchard::digest
