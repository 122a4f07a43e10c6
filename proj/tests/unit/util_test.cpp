#include <gtest/gtest.h>

#include <random>

#include "pbtw/error.hpp"
#include "pbtw/util.hpp"
#include "support.hpp"

using namespace pbtw;
namespace ts = testsupport;

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Text, SplitTrimAndIdentifiers) {
  EXPECT_EQ(split_lines("a\nb\n"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(split_lines("a\n\nb"), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(trim("  x y \t"), "x y");
  EXPECT_TRUE(is_blank(" \t\n"));
  EXPECT_FALSE(is_blank(" x "));
  EXPECT_TRUE(starts_with_word("assert x", "assert"));
  EXPECT_FALSE(starts_with_word("asserted = 1", "assert"));
  EXPECT_TRUE(is_dotted_identifier("datetime.timedelta.total_seconds"));
  EXPECT_FALSE(is_dotted_identifier("numpy..cumsum"));
  EXPECT_FALSE(is_dotted_identifier("1abc"));
  EXPECT_TRUE(is_identifier("_x1"));
  EXPECT_FALSE(is_identifier("a.b"));
}

TEST(Files, AtomicWriteAndAppend) {
  ts::TempDir d;
  write_file_atomic(d / "x/y.txt", "one");
  write_file_atomic(d / "x/y.txt", "two");
  EXPECT_EQ(read_file(d / "x/y.txt"), "two");
  append_line(d / "log", "a");
  append_line(d / "log", "b");
  EXPECT_EQ(read_file(d / "log"), "a\nb\n");
  EXPECT_THROW(read_file(d / "missing"), Error);
}

TEST(RandomHex, LengthAndAlphabet) {
  auto h = random_hex(24);
  ASSERT_EQ(h.size(), 24u);
  EXPECT_EQ(h.find_first_not_of("0123456789abcdef"), std::string::npos);
  EXPECT_NE(random_hex(24), h);
}

namespace {

// Applies a unified diff to `from`; written against the diff format, not the
// producer's internals.
std::string patch(const std::string& from, const std::string& diff) {
  auto src = ts::lines_of(from);
  std::vector<std::string> out;
  std::size_t pos = 0;  // next unread source line, 0-based
  for (const auto& l : ts::lines_of(diff)) {
    if (l.rfind("---", 0) == 0 || l.rfind("+++", 0) == 0) continue;
    if (l.rfind("@@", 0) == 0) {
      // "@@ -start,len ..."; an empty range names the line it follows
      int start = std::stoi(l.substr(4));
      int len = std::stoi(l.substr(l.find(',') + 1));
      std::size_t at = len == 0 ? static_cast<std::size_t>(start) : static_cast<std::size_t>(start - 1);
      while (pos < at) out.push_back(src[pos++]);
      continue;
    }
    if (l.empty()) throw std::runtime_error("empty diff line");
    if (l[0] == ' ') {
      if (src.at(pos) != l.substr(1)) throw std::runtime_error("context mismatch");
      out.push_back(src[pos++]);
    } else if (l[0] == '-') {
      if (src.at(pos) != l.substr(1)) throw std::runtime_error("removal mismatch");
      ++pos;
    } else if (l[0] == '+') {
      out.push_back(l.substr(1));
    }
  }
  while (pos < src.size()) out.push_back(src[pos++]);
  std::string s;
  for (const auto& l : out) s += l + "\n";
  return s;
}

std::string random_text(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(0, 30), w(0, 5);
  std::string s;
  for (int i = n(rng); i > 0; --i) s += "line" + std::to_string(w(rng)) + "\n";
  return s;
}

std::string mutate(std::mt19937_64& rng, const std::string& text) {
  auto lines = ts::lines_of(text);
  std::uniform_int_distribution<int> op(0, 2), k(0, 6);
  for (int i = k(rng); i > 0; --i) {
    std::size_t at = std::uniform_int_distribution<std::size_t>(0, lines.size())(rng);
    switch (op(rng)) {
      case 0:
        lines.insert(lines.begin() + static_cast<long>(at), "new" + std::to_string(i));
        break;
      case 1:
        if (at < lines.size()) lines.erase(lines.begin() + static_cast<long>(at));
        break;
      default:
        if (at < lines.size()) lines[at] = "changed" + std::to_string(i);
    }
  }
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

}  // namespace

TEST(UnifiedDiff, EqualTextsGiveNothing) { EXPECT_EQ(unified_diff("a\nb\n", "a\nb\n", "v1", "v2"), ""); }

TEST(UnifiedDiff, SmallChangeLayout) {
  auto d = unified_diff("a\nb\nc\n", "a\nB\nc\n", "v1", "v2");
  EXPECT_EQ(d, "--- v1\n+++ v2\n@@ -1,3 +1,3 @@\n a\n-b\n+B\n c\n");
}

TEST(UnifiedDiff, PatchingReproducesTheTarget) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    auto a = random_text(rng);
    auto b = mutate(rng, a);
    auto d = unified_diff(a, b, "a", "b", static_cast<int>(rng() % 4));
    if (a == b) {
      EXPECT_EQ(d, "");
      continue;
    }
    ASSERT_EQ(patch(a, d), b) << "diff:\n" << d;
  }
}
