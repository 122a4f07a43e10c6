#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pbtw::py {

/// One logical Python line: physical lines joined by open brackets, triple
/// quoted strings or backslash continuations.
struct LogicalLine {
  int first_line = 0;  // 1-based physical line numbers, inclusive
  int last_line = 0;
  int indent = 0;      // column of the first token (tabs expand to multiples of 8)
  std::string raw;     // physical lines as written, joined with '\n', indentation stripped from the first
  std::string masked;  // same length as raw; string contents and comments blanked with spaces
};

/// A statement with its clauses (elif/else/except/finally) and nested body.
struct Statement {
  int first_line = 0;  // includes decorators, excludes leading comments
  int last_line = 0;   // end of the last clause body
  int indent = 0;
  std::vector<std::string> leading_comments;  // comment text of the lines directly above
  std::vector<LogicalLine> headers;           // decorators, header line, clause headers
  std::vector<Statement> body;                // nested statements of every clause, in order
  std::string keyword;                        // first word of the main header ("if", "def", "assert", ...), "" otherwise

  const LogicalLine& main_header() const;
  bool is_compound() const;
  /// Name of a function definition, "" if this is not a def.
  std::string def_name() const;
  /// Decorator texts (raw, without the '@').
  std::vector<std::string> decorators() const;
};

struct Fragment {
  std::vector<std::string> lines;      // physical lines, 0-based storage of 1-based numbering
  std::vector<bool> starts_in_string;  // per physical line: begins inside a multi-line string literal
  std::vector<Statement> statements;   // top-level statements
};

/// Parses a fragment whose statements share a common leading indentation.
/// Throws Error(UnparseableFragment) for unterminated strings, unbalanced
/// brackets, inconsistent indentation or a block header without a body.
Fragment parse(std::string_view source);

/// True if any logical line of the statement (recursively) holds an assert
/// statement or calls an assertion helper such as np.testing.assert_allclose.
bool contains_assertion(const Statement& stmt);

/// True if any logical line of the statement (recursively) calls one of the
/// given callee spellings, e.g. "np.cumsum" matches "np.cumsum(a)". A spelling
/// starting with '.' matches a method call on any receiver.
bool calls_any(const Statement& stmt, const std::vector<std::string>& spellings);

/// For `if <cond>:` returns <cond>; for other compound statements the header
/// without its trailing colon; "" for simple statements.
std::string guard_of(const Statement& stmt);

/// Physical source lines [first, last] of the fragment joined with '\n'.
std::string slice(const Fragment& frag, int first, int last);

/// Re-indents lines [first, last] so that a line at column `from_indent`
/// lands at column `to_indent`. Lines inside multi-line strings are untouched.
std::vector<std::string> reindent(const Fragment& frag, int first, int last, int from_indent, int to_indent);

/// Import aliases: "np" -> "numpy" for `import numpy as np`, "cumsum" ->
/// "numpy.cumsum" for `from numpy import cumsum`.
std::vector<std::pair<std::string, std::string>> import_aliases(const Fragment& frag);

}  // namespace pbtw::py
