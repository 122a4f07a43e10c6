#include "pbtw/pysource.hpp"

#include <algorithm>
#include <regex>
#include <variant>

#include "pbtw/error.hpp"
#include "pbtw/util.hpp"

namespace pbtw::py {

namespace {

[[noreturn]] void unparseable(int line, const std::string& what) {
  throw Error(ErrorCode::UnparseableFragment, "line " + std::to_string(line) + ": " + what);
}

struct CommentLine {
  int line;
  std::string text;
};

using Item = std::variant<LogicalLine, CommentLine>;

int item_line(const Item& item) {
  return std::visit(
      [](const auto& v) {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, LogicalLine>) {
          return v.first_line;
        } else {
          return v.line;
        }
      },
      item);
}

char closer_for(char open) {
  switch (open) {
    case '(': return ')';
    case '[': return ']';
    default: return '}';
  }
}

class Scanner {
 public:
  explicit Scanner(std::string_view text) : text_(text) {}

  void run(Fragment& frag, std::vector<Item>& items) {
    frag.lines = split_lines(text_);
    frag.starts_in_string.assign(frag.lines.size() + 1, false);
    in_string_lines_ = &frag.starts_in_string;
    while (pos_ < text_.size()) {
      scan_physical_start(items);
    }
    frag.starts_in_string.resize(frag.lines.size());
  }

 private:
  void scan_physical_start(std::vector<Item>& items) {
    int indent = 0;
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\f')) {
      indent = text_[pos_] == '\t' ? (indent / 8 + 1) * 8 : indent + 1;
      ++pos_;
    }
    if (pos_ >= text_.size()) return;
    char c = text_[pos_];
    if (c == '\n' || c == '\r') {
      skip_to_next_line();
      return;
    }
    if (c == '#') {
      auto nl = text_.find('\n', pos_);
      std::string_view body = text_.substr(pos_ + 1, (nl == std::string_view::npos ? text_.size() : nl) - pos_ - 1);
      items.emplace_back(CommentLine{line_, std::string(trim(body))});
      pos_ = nl == std::string_view::npos ? text_.size() : nl;
      skip_to_next_line();
      return;
    }
    items.emplace_back(scan_logical(indent));
  }

  void skip_to_next_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    if (pos_ < text_.size()) {
      ++pos_;
      ++line_;
    }
  }

  void newline_inside(bool inside_string) {
    ++line_;
    if (inside_string && static_cast<std::size_t>(line_) < in_string_lines_->size() + 1) {
      if (static_cast<std::size_t>(line_ - 1) < in_string_lines_->size()) (*in_string_lines_)[line_ - 1] = true;
    }
  }

  LogicalLine scan_logical(int indent) {
    LogicalLine ll;
    ll.first_line = line_;
    ll.indent = indent;
    std::vector<char> brackets;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == '\n') {
        if (brackets.empty()) {
          ++pos_;
          ll.last_line = line_;
          ++line_;
          finish(ll);
          return ll;
        }
        ll.raw.push_back('\n');
        ll.masked.push_back('\n');
        ++pos_;
        newline_inside(false);
        continue;
      }
      if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') {
          ll.raw.push_back(text_[pos_]);
          ll.masked.push_back(' ');
          ++pos_;
        }
        continue;
      }
      if (c == '\\' && pos_ + 1 < text_.size() && (text_[pos_ + 1] == '\n' || text_[pos_ + 1] == '\r')) {
        ll.raw.push_back('\\');
        ll.masked.push_back(' ');
        ++pos_;
        if (text_[pos_] == '\r') {
          ll.raw.push_back('\r');
          ll.masked.push_back(' ');
          ++pos_;
        }
        if (pos_ < text_.size() && text_[pos_] == '\n') {
          ll.raw.push_back('\n');
          ll.masked.push_back('\n');
          ++pos_;
          newline_inside(false);
        }
        continue;
      }
      if (c == '"' || c == '\'') {
        scan_string(ll);
        continue;
      }
      if (c == '(' || c == '[' || c == '{') {
        brackets.push_back(c);
      } else if (c == ')' || c == ']' || c == '}') {
        if (brackets.empty() || closer_for(brackets.back()) != c) {
          unparseable(line_, std::string("unmatched '") + c + "'");
        }
        brackets.pop_back();
      }
      ll.raw.push_back(c);
      ll.masked.push_back(c);
      ++pos_;
    }
    if (!brackets.empty()) unparseable(ll.first_line, std::string("'") + brackets.back() + "' is never closed");
    ll.last_line = line_;
    finish(ll);
    return ll;
  }

  void scan_string(LogicalLine& ll) {
    char q = text_[pos_];
    bool triple = text_.substr(pos_, 3) == std::string(3, q);
    int start_line = line_;
    std::size_t open_len = triple ? 3 : 1;
    ll.raw.append(text_.substr(pos_, open_len));
    ll.masked.append(text_.substr(pos_, open_len));
    pos_ += open_len;
    while (true) {
      if (pos_ >= text_.size()) unparseable(start_line, "unterminated string literal");
      char c = text_[pos_];
      if (c == '\\' && pos_ + 1 < text_.size()) {
        char next = text_[pos_ + 1];
        ll.raw.push_back(c);
        ll.raw.push_back(next);
        ll.masked.push_back(' ');
        ll.masked.push_back(next == '\n' ? '\n' : ' ');
        pos_ += 2;
        if (next == '\n') newline_inside(true);
        continue;
      }
      if (c == '\n') {
        if (!triple) unparseable(start_line, "unterminated string literal");
        ll.raw.push_back('\n');
        ll.masked.push_back('\n');
        ++pos_;
        newline_inside(true);
        continue;
      }
      if (c == q && (!triple || text_.substr(pos_, 3) == std::string(3, q))) {
        ll.raw.append(text_.substr(pos_, open_len));
        ll.masked.append(text_.substr(pos_, open_len));
        pos_ += open_len;
        return;
      }
      ll.raw.push_back(c);
      ll.masked.push_back(' ');
      ++pos_;
    }
  }

  static void finish(LogicalLine& ll) {
    while (!ll.raw.empty() && (ll.raw.back() == '\r' || ll.raw.back() == ' ' || ll.raw.back() == '\t')) {
      ll.raw.pop_back();
      ll.masked.pop_back();
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::vector<bool>* in_string_lines_ = nullptr;
};

std::string first_word(std::string_view masked) {
  std::size_t i = 0;
  while (i < masked.size() && (std::isalnum(static_cast<unsigned char>(masked[i])) || masked[i] == '_')) ++i;
  return std::string(masked.substr(0, i));
}

bool is_clause_keyword(const std::string& kw) {
  return kw == "elif" || kw == "else" || kw == "except" || kw == "finally";
}

bool is_compound_keyword(const std::string& kw) {
  static const char* const kKeywords[] = {"if", "elif", "else", "for", "while", "try", "except", "finally",
                                          "with", "def", "class", "async", "match", "case"};
  return std::find(std::begin(kKeywords), std::end(kKeywords), kw) != std::end(kKeywords);
}

bool opens_block(const LogicalLine& ll) {
  auto t = trim(ll.masked);
  return !t.empty() && t.back() == ':' && is_compound_keyword(first_word(t));
}

std::size_t top_level_colon(std::string_view masked) {
  int depth = 0;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    char c = masked[i];
    if (c == '(' || c == '[' || c == '{') ++depth;
    else if (c == ')' || c == ']' || c == '}') --depth;
    else if (c == ':' && depth == 0 && (i + 1 >= masked.size() || masked[i + 1] != '=')) return i;
  }
  return std::string_view::npos;
}

class BlockParser {
 public:
  explicit BlockParser(const std::vector<Item>& items) : items_(items) {}

  std::vector<Statement> parse_top() {
    auto first = next_logical(0);
    if (first == items_.size()) return {};
    int base = std::get<LogicalLine>(items_[first]).indent;
    std::vector<Statement> out = parse_block(base);
    if (idx_ < items_.size()) {
      unparseable(item_line(items_[idx_]), "unindent does not match the fragment's indentation");
    }
    return out;
  }

 private:
  std::size_t next_logical(std::size_t from) const {
    while (from < items_.size() && std::holds_alternative<CommentLine>(items_[from])) ++from;
    return from;
  }

  std::vector<Statement> parse_block(int indent) {
    std::vector<Statement> out;
    std::vector<std::string> comments;
    std::vector<LogicalLine> decorators;
    int last_comment_line = -1;
    while (idx_ < items_.size()) {
      if (const auto* c = std::get_if<CommentLine>(&items_[idx_])) {
        if (last_comment_line >= 0 && c->line != last_comment_line + 1) comments.clear();
        comments.push_back(c->text);
        last_comment_line = c->line;
        ++idx_;
        continue;
      }
      const auto& ll = std::get<LogicalLine>(items_[idx_]);
      if (ll.indent < indent) break;
      if (ll.indent > indent) unparseable(ll.first_line, "unexpected indent");
      if (last_comment_line >= 0 && last_comment_line != ll.first_line - 1) comments.clear();
      last_comment_line = -1;

      auto kw = first_word(trim(ll.masked));
      if (is_clause_keyword(kw) && decorators.empty()) {
        if (out.empty() || out.back().body.empty()) unparseable(ll.first_line, "'" + kw + "' without a block statement");
        auto& owner = out.back();
        owner.headers.push_back(ll);
        ++idx_;
        if (opens_block(ll)) append_body(owner, ll);
        owner.last_line = std::max(owner.last_line, ll.last_line);
        if (!owner.body.empty()) owner.last_line = std::max(owner.last_line, owner.body.back().last_line);
        comments.clear();
        continue;
      }
      if (!ll.masked.empty() && ll.masked[0] == '@') {
        decorators.push_back(ll);
        ++idx_;
        continue;
      }

      Statement s;
      s.indent = ll.indent;
      s.leading_comments = std::move(comments);
      comments.clear();
      s.headers = std::move(decorators);
      decorators.clear();
      s.headers.push_back(ll);
      s.keyword = kw;
      s.first_line = s.headers.front().first_line;
      s.last_line = ll.last_line;
      ++idx_;
      if (opens_block(ll)) append_body(s, ll);
      out.push_back(std::move(s));
    }
    if (!decorators.empty()) unparseable(decorators.back().first_line, "decorator without a definition");
    return out;
  }

  void append_body(Statement& owner, const LogicalLine& header) {
    auto next = next_logical(idx_);
    if (next == items_.size()) unparseable(header.first_line, "expected an indented block");
    const auto& first = std::get<LogicalLine>(items_[next]);
    if (first.indent <= header.indent) unparseable(first.first_line, "expected an indented block");
    auto body = parse_block(first.indent);
    for (auto& b : body) owner.body.push_back(std::move(b));
    owner.last_line = std::max(owner.last_line, owner.body.back().last_line);
  }

  const std::vector<Item>& items_;
  std::size_t idx_ = 0;
};

template <typename Fn>
bool any_line(const Statement& stmt, Fn&& fn) {
  for (const auto& h : stmt.headers) {
    if (fn(h)) return true;
  }
  for (const auto& b : stmt.body) {
    if (any_line(b, fn)) return true;
  }
  return false;
}

std::string regex_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::string_view(".^$|()[]{}*+?\\").find(c) != std::string_view::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

const LogicalLine& Statement::main_header() const {
  for (const auto& h : headers) {
    if (h.masked.empty() || h.masked[0] != '@') return h;
  }
  return headers.front();
}

bool Statement::is_compound() const { return !body.empty(); }

std::string Statement::def_name() const {
  const auto& h = main_header();
  std::string_view m = trim(h.masked);
  if (m.substr(0, 6) == "async ") m = trim(m.substr(6));
  if (!starts_with_word(m, "def")) return "";
  m = trim(m.substr(3));
  std::size_t i = 0;
  while (i < m.size() && (std::isalnum(static_cast<unsigned char>(m[i])) || m[i] == '_')) ++i;
  return std::string(m.substr(0, i));
}

std::vector<std::string> Statement::decorators() const {
  std::vector<std::string> out;
  for (const auto& h : headers) {
    if (!h.masked.empty() && h.masked[0] == '@') out.emplace_back(trim(std::string_view(h.raw).substr(1)));
  }
  return out;
}

Fragment parse(std::string_view source) {
  Fragment frag;
  std::vector<Item> items;
  Scanner(source).run(frag, items);
  frag.statements = BlockParser(items).parse_top();
  return frag;
}

bool contains_assertion(const Statement& stmt) {
  static const std::regex kAssert(R"((^|[^\w.])assert\b|\bassert\w*\s*\()");
  return any_line(stmt, [](const LogicalLine& ll) { return std::regex_search(ll.masked, kAssert); });
}

bool calls_any(const Statement& stmt, const std::vector<std::string>& spellings) {
  std::vector<std::regex> patterns;
  for (const auto& s : spellings) {
    if (s.empty()) continue;
    if (s[0] == '.') {
      patterns.emplace_back(regex_escape(s) + R"(\s*\()");
    } else {
      patterns.emplace_back(R"((^|[^\w.]))" + regex_escape(s) + R"(\s*\()");
    }
  }
  return any_line(stmt, [&](const LogicalLine& ll) {
    return std::any_of(patterns.begin(), patterns.end(), [&](const std::regex& re) { return std::regex_search(ll.masked, re); });
  });
}

std::string guard_of(const Statement& stmt) {
  const auto& h = stmt.main_header();
  auto colon = top_level_colon(h.masked);
  if (stmt.keyword == "if" && colon != std::string::npos) {
    return std::string(trim(std::string_view(h.raw).substr(2, colon - 2)));
  }
  if (!stmt.is_compound()) return "";
  if (colon == std::string::npos) return std::string(trim(h.raw));
  return std::string(trim(std::string_view(h.raw).substr(0, colon)));
}

std::string slice(const Fragment& frag, int first, int last) {
  std::string out;
  for (int i = first; i <= last && i >= 1 && static_cast<std::size_t>(i) <= frag.lines.size(); ++i) {
    if (!out.empty() || i > first) out.push_back('\n');
    out += frag.lines[i - 1];
  }
  return out;
}

std::vector<std::string> reindent(const Fragment& frag, int first, int last, int from_indent, int to_indent) {
  std::vector<std::string> out;
  for (int i = first; i <= last; ++i) {
    const std::string& line = frag.lines[i - 1];
    if (frag.starts_in_string[i - 1]) {
      out.push_back(line);
      continue;
    }
    if (is_blank(line)) {
      out.emplace_back();
      continue;
    }
    int col = 0;
    std::size_t j = 0;
    while (j < line.size() && (line[j] == ' ' || line[j] == '\t')) {
      col = line[j] == '\t' ? (col / 8 + 1) * 8 : col + 1;
      ++j;
    }
    int target = col >= from_indent ? to_indent + (col - from_indent) : to_indent;
    out.push_back(std::string(static_cast<std::size_t>(target), ' ') + line.substr(j));
  }
  return out;
}

namespace {

void collect_imports(const Statement& stmt, std::vector<std::pair<std::string, std::string>>& out) {
  const auto& h = stmt.main_header();
  std::string text;
  for (char c : h.masked) {
    if (c != '(' && c != ')' && c != '\n' && c != '\\') text.push_back(c);
  }
  auto split_names = [](std::string_view list) {
    std::vector<std::pair<std::string, std::string>> names;
    std::size_t start = 0;
    while (start <= list.size()) {
      auto comma = list.find(',', start);
      auto part = trim(list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (!part.empty()) {
        auto as = part.find(" as ");
        if (as == std::string_view::npos) {
          names.emplace_back(std::string(part), std::string(part));
        } else {
          names.emplace_back(std::string(trim(part.substr(0, as))), std::string(trim(part.substr(as + 4))));
        }
      }
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return names;
  };
  std::string_view t = trim(text);
  if (stmt.keyword == "import") {
    for (auto& [name, alias] : split_names(t.substr(6))) {
      if (alias != name) out.emplace_back(alias, name);
    }
  } else if (stmt.keyword == "from") {
    auto imp = t.find(" import ");
    if (imp == std::string_view::npos) return;
    std::string module(trim(t.substr(4, imp - 4)));
    for (auto& [name, alias] : split_names(t.substr(imp + 8))) {
      if (name != "*") out.emplace_back(alias, module + "." + name);
    }
  }
  for (const auto& b : stmt.body) collect_imports(b, out);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> import_aliases(const Fragment& frag) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : frag.statements) collect_imports(s, out);
  return out;
}

}  // namespace pbtw::py
