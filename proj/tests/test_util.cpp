#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <string>
#include <vector>

#include "orchard/digest.hpp"
#include "orchard/errors.hpp"
#include "orchard/tar.hpp"
#include "orchard/util.hpp"
#include "support/temp_dir.hpp"

using namespace orchard;
namespace fs = std::filesystem;

TEST_CASE("atomic_write_file round trips and replaces") {
  testsup::TempDir tmp;
  auto p = tmp / "a.txt";
  util::atomic_write_file(p, "one");
  CHECK(util::read_file(p) == "one");
  util::atomic_write_file(p, "two");
  CHECK(util::read_file(p) == "two");
}

TEST_CASE("read_file on a missing path throws io") {
  testsup::TempDir tmp;
  CHECK_THROWS_AS(util::read_file(tmp / "nope"), Error);
  CHECK(!util::read_file_if_exists(tmp / "nope").has_value());
}

TEST_CASE("list_files is relative, recursive and sorted") {
  testsup::TempDir tmp;
  util::atomic_write_file(tmp / "b.txt", "");
  fs::create_directories(tmp / "sub");
  util::atomic_write_file(tmp.path() / "sub" / "a.txt", "");
  util::atomic_write_file(tmp / "a.txt", "");
  auto files = util::list_files(tmp.path());
  CHECK(files == std::vector<std::string>{"a.txt", "b.txt", "sub/a.txt"});
}

TEST_CASE("copy_tree preserves the executable bit") {
  testsup::TempDir tmp;
  auto src = tmp / "src";
  fs::create_directories(src);
  util::atomic_write_file(src / "run", "#!/bin/sh\n");
  fs::permissions(src / "run", fs::perms::owner_all | fs::perms::group_read |
                                   fs::perms::others_read);
  util::atomic_write_file(src / "plain", "x");
  util::copy_tree(src, tmp / "dst");
  auto perms = fs::status(tmp.path() / "dst" / "run").permissions();
  CHECK((perms & fs::perms::owner_exec) != fs::perms::none);
  CHECK(util::read_file(tmp.path() / "dst" / "plain") == "x");
}

TEST_CASE("split and join") {
  CHECK(util::split("a,b,,c", ',') == std::vector<std::string>{"a", "b", "", "c"});
  CHECK(util::split("", ',') == std::vector<std::string>{""});
  CHECK(util::join({"a", "b"}, "/") == "a/b");
  CHECK(util::join({}, "/") == "");
}

TEST_CASE("glob semantics: star stays inside a segment") {
  CHECK(util::glob_match("*.txt", "a.txt"));
  CHECK(!util::glob_match("*.txt", "sub/a.txt"));
  CHECK(util::glob_match("sub/*.txt", "sub/a.txt"));
  CHECK(util::glob_match("a?c", "abc"));
  CHECK(!util::glob_match("a?c", "ac"));
  CHECK(util::glob_match("data.txt", "data.txt"));
  CHECK(!util::glob_match("data.txt", "data.txt.bak"));
  CHECK(util::glob_match("sub-*", "sub-0001"));
}

TEST_CASE("base64 round trip including binary") {
  std::string raw;
  for (int i = 0; i < 256; ++i) raw.push_back(static_cast<char>(i));
  CHECK(util::from_base64(util::to_base64(raw)) == raw);
  CHECK(util::to_base64("hi") == "aGk=");
}

TEST_CASE("make_id pads to eight digits") {
  CHECK(util::make_id("t", 7) == "t00000007");
  CHECK(util::make_id("d", 12345678) == "d12345678");
}

TEST_CASE("subset and intersection over tag vectors") {
  CHECK(util::is_subset({}, {"a"}));
  CHECK(util::is_subset({"a"}, {"b", "a"}));
  CHECK(!util::is_subset({"a", "c"}, {"a", "b"}));
  CHECK(util::intersects({"a", "x"}, {"x"}));
  CHECK(!util::intersects({"a"}, {"b"}));
}

TEST_CASE("stable_hash matches a direct FNV-1a evaluation") {
  auto reference = [](std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  };
  for (auto s : {"", "a", "sub-0001", "t00000001"})
    CHECK(util::stable_hash(s) == reference(s));
}

TEST_CASE("sha256 known answers") {
  CHECK(digest::sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(digest::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("sha256_file agrees with in-memory hashing") {
  testsup::TempDir tmp;
  std::string payload(100000, 'q');
  payload += "tail";
  util::atomic_write_file(tmp / "f", payload);
  CHECK(digest::sha256_file(tmp / "f") == digest::sha256_hex(payload));
}

TEST_CASE("tree digest is path-sorted and content sensitive") {
  testsup::TempDir tmp;
  auto root = tmp / "t";
  fs::create_directories(root / "sub");
  util::atomic_write_file(root / "b.txt", "B");
  util::atomic_write_file(root / "a.txt", "A");
  auto lines = digest::tree_digest_lines(root);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == digest::sha256_hex("A") + "  a.txt");
  CHECK(lines[1] == digest::sha256_hex("B") + "  b.txt");

  auto before = digest::tree_digest(root);
  util::atomic_write_file(root / "b.txt", "B2");
  CHECK(digest::tree_digest(root) != before);
}

TEST_CASE("tar archives are deterministic and round trip") {
  testsup::TempDir tmp;
  auto root = tmp / "tree";
  fs::create_directories(root / "nested");
  util::atomic_write_file(root / "z.bin", std::string(1500, '\x7f'));
  util::atomic_write_file(root / "nested/hook", "#!/bin/sh\nexit 0\n");
  fs::permissions(root / "nested/hook",
                  fs::perms::owner_all | fs::perms::group_read | fs::perms::others_read);

  auto bytes1 = tar::archive_tree(root);
  auto bytes2 = tar::archive_tree(root);
  CHECK(bytes1 == bytes2);
  CHECK(bytes1.size() % 512 == 0);

  auto entries = tar::read_archive(bytes1);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].path == "nested/hook");
  CHECK(entries[0].executable);
  CHECK(entries[1].path == "z.bin");
  CHECK(entries[1].data == std::string(1500, '\x7f'));

  tar::extract_archive(bytes1, tmp / "out");
  CHECK(util::read_file(tmp.path() / "out" / "z.bin") == std::string(1500, '\x7f'));
  auto perms = fs::status(tmp.path() / "out" / "nested" / "hook").permissions();
  CHECK((perms & fs::perms::owner_exec) != fs::perms::none);
}

TEST_CASE("tar rejects truncated and corrupt archives") {
  std::vector<tar::Entry> entries{{"f.txt", "hello", false}};
  auto bytes = tar::write_archive(entries);
  CHECK_THROWS_AS(tar::read_archive(bytes.substr(0, bytes.size() - 1)), Error);
  auto corrupt = bytes;
  corrupt[150] ^= 0x1;  // inside the header checksum region
  CHECK_THROWS_AS(tar::read_archive(corrupt), Error);
}
