#include "pbtw/util.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

#include "pbtw/error.hpp"

namespace pbtw {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDocumentation: return "EmptyDocumentation";
    case ErrorCode::UnsupportedTask: return "UnsupportedTask";
    case ErrorCode::EmptyContext: return "EmptyContext";
    case ErrorCode::TemplateMissing: return "TemplateMissing";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::FixtureMissing: return "FixtureMissing";
    case ErrorCode::AuthMissing: return "AuthMissing";
    case ErrorCode::NoCodeFound: return "NoCodeFound";
    case ErrorCode::NoAssertionsFound: return "NoAssertionsFound";
    case ErrorCode::MalformedGenerator: return "MalformedGenerator";
    case ErrorCode::UnparseableFragment: return "UnparseableFragment";
    case ErrorCode::TargetCallNotFound: return "TargetCallNotFound";
    case ErrorCode::MultipleTestFunctions: return "MultipleTestFunctions";
    case ErrorCode::InvalidPhaseMap: return "InvalidPhaseMap";
    case ErrorCode::SpawnFailure: return "SpawnFailure";
    case ErrorCode::HandshakeTimeout: return "HandshakeTimeout";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::RunnerCrashed: return "RunnerCrashed";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::RequestTimeout: return "RequestTimeout";
    case ErrorCode::RunnerError: return "RunnerError";
    case ErrorCode::EmptyReport: return "EmptyReport";
    case ErrorCode::UnresolvedScope: return "UnresolvedScope";
    case ErrorCode::NoMutants: return "NoMutants";
    case ErrorCode::SynthesisFailed: return "SynthesisFailed";
    case ErrorCode::StaleIssue: return "StaleIssue";
    case ErrorCode::InvalidState: return "InvalidState";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::RunnerUnavailable: return "RunnerUnavailable";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void append_line(const std::filesystem::path& path, std::string_view line) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::Io, "cannot append to " + path.string());
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.put('\n');
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.emplace_back(text.substr(start));
      break;
    }
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = nl + 1;
  }
  return lines;
}

bool is_blank(std::string_view text) {
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

std::string_view trim(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  return text;
}

bool starts_with_word(std::string_view text, std::string_view word) {
  if (text.substr(0, word.size()) != word) return false;
  if (text.size() == word.size()) return true;
  char next = text[word.size()];
  return !(std::isalnum(static_cast<unsigned char>(next)) || next == '_');
}

bool is_identifier(std::string_view text) {
  if (text.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(text[0])) || text[0] == '_')) return false;
  for (char c : text) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

bool is_dotted_identifier(std::string_view text) {
  if (text.empty()) return false;
  std::size_t start = 0;
  while (true) {
    auto dot = text.find('.', start);
    if (!is_identifier(text.substr(start, dot == std::string_view::npos ? dot : dot - start))) return false;
    if (dot == std::string_view::npos) return true;
    start = dot + 1;
  }
}

std::string random_hex(std::size_t n) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::random_device rd;
  std::mt19937_64 rng(((std::uint64_t{rd()} << 32) ^ rd()));
  std::string out(n, '0');
  for (auto& c : out) c = kHex[rng() & 0xf];
  return out;
}

std::string unified_diff(std::string_view from, std::string_view to, const std::string& from_label,
                         const std::string& to_label, int context) {
  auto a = split_lines(from);
  auto b = split_lines(to);
  if (a == b) return {};
  const std::size_t n = a.size(), m = b.size();
  // LCS table, suffix form
  std::vector<std::vector<int>> lcs(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  struct Op {
    char tag;
    std::size_t ai, bi;  // positions before the op
  };
  std::vector<Op> ops;
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    if (i < n && j < m && a[i] == b[j]) {
      ops.push_back({' ', i++, j++});
    } else if (i < n && (j == m || lcs[i + 1][j] >= lcs[i][j + 1])) {
      ops.push_back({'-', i++, j});  // removals before additions, as diff(1) prints them
    } else {
      ops.push_back({'+', i, j++});
    }
  }
  std::string out = "--- " + from_label + "\n+++ " + to_label + "\n";
  std::size_t k = 0;
  const auto ctx = static_cast<std::size_t>(std::max(0, context));
  while (k < ops.size()) {
    while (k < ops.size() && ops[k].tag == ' ') ++k;
    if (k == ops.size()) break;
    std::size_t start = k >= ctx ? k - ctx : 0;
    std::size_t end = k;
    // extend the hunk while changes are separated by at most 2*context equal lines
    while (end < ops.size()) {
      if (ops[end].tag != ' ') {
        ++end;
        continue;
      }
      std::size_t run = end;
      while (run < ops.size() && ops[run].tag == ' ') ++run;
      if (run == ops.size() || run - end > 2 * ctx) {
        end = std::min(end + ctx, ops.size());
        break;
      }
      end = run;
    }
    std::size_t a_start = ops[start].ai, b_start = ops[start].bi, a_len = 0, b_len = 0;
    std::string body;
    for (std::size_t t = start; t < end; ++t) {
      const auto& op = ops[t];
      if (op.tag != '+') ++a_len;
      if (op.tag != '-') ++b_len;
      body += op.tag;
      body += op.tag == '+' ? b[op.bi] : a[op.ai];
      body += '\n';
    }
    auto range = [](std::size_t s, std::size_t len) {
      return std::to_string(len == 0 ? s : s + 1) + "," + std::to_string(len);
    };
    out += "@@ -" + range(a_start, a_len) + " +" + range(b_start, b_len) + " @@\n" + body;
    k = end;
  }
  return out;
}

}  // namespace pbtw
