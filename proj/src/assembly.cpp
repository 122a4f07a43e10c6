#include "pbtw/assembly.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "pbtw/error.hpp"
#include "pbtw/pysource.hpp"
#include "pbtw/util.hpp"

namespace pbtw {

using nlohmann::json;

std::string Phase::label() const {
  switch (kind) {
    case Kind::Generate: return "Generate";
    case Kind::Invoke: return "Invoke";
    case Kind::Check: return "Check(" + property_id + ")";
  }
  return "Generate";
}

Phase Phase::parse(std::string_view label) {
  if (label == "Generate") return generate();
  if (label == "Invoke") return invoke();
  if (label.size() > 7 && label.substr(0, 6) == "Check(" && label.back() == ')') {
    return check(std::string(label.substr(6, label.size() - 7)));
  }
  throw Error(ErrorCode::InvalidPhaseMap, "unknown phase label '" + std::string(label) + "'");
}

void to_json(json& j, const PropertyAssertion& p) {
  j = json{{"id", p.id}, {"source_text", p.source_text}};
  j["description"] = p.description ? json(*p.description) : json(nullptr);
  j["guard"] = p.guard ? json(*p.guard) : json(nullptr);
}

void from_json(const json& j, PropertyAssertion& p) {
  p.id = j.at("id").get<std::string>();
  p.source_text = j.at("source_text").get<std::string>();
  p.description.reset();
  p.guard.reset();
  if (j.contains("description") && !j["description"].is_null()) p.description = j["description"].get<std::string>();
  if (j.contains("guard") && !j["guard"].is_null()) p.guard = j["guard"].get<std::string>();
}

std::vector<std::string> AssembledTest::property_ids() const {
  std::vector<std::string> ids;
  for (const auto& p : properties) ids.push_back(p.id);
  return ids;
}

std::optional<Phase> AssembledTest::phase_at(int line) const {
  for (const auto& r : phase_map) {
    if (line >= r.first_line && line <= r.last_line) return r.phase;
  }
  return std::nullopt;
}

void to_json(json& j, const AssembledTest& t) {
  json ranges = json::array();
  for (const auto& r : t.phase_map) {
    ranges.push_back({{"first_line", r.first_line}, {"last_line", r.last_line}, {"phase", r.phase.label()}});
  }
  j = json{{"source_text", t.source_text},
           {"mode", t.mode == AssemblyMode::Separate ? "separate" : "combined"},
           {"target", t.target},
           {"properties", t.properties},
           {"phase_map", ranges},
           {"test_function", t.test_function},
           {"invocation", t.invocation}};
  j["generator_name"] = t.generator_name ? json(*t.generator_name) : json(nullptr);
}

void from_json(const json& j, AssembledTest& t) {
  t.source_text = j.at("source_text").get<std::string>();
  t.mode = j.at("mode").get<std::string>() == "combined" ? AssemblyMode::Combined : AssemblyMode::Separate;
  t.target = j.at("target").get<TargetApi>();
  t.properties = j.at("properties").get<std::vector<PropertyAssertion>>();
  t.phase_map.clear();
  for (const auto& r : j.at("phase_map")) {
    t.phase_map.push_back({r.at("first_line").get<int>(), r.at("last_line").get<int>(),
                           Phase::parse(r.at("phase").get<std::string>())});
  }
  t.test_function = j.value("test_function", std::string{});
  t.invocation = j.value("invocation", std::string{});
  t.generator_name.reset();
  if (j.contains("generator_name") && !j["generator_name"].is_null()) {
    t.generator_name = j["generator_name"].get<std::string>();
  }
}

namespace {

constexpr const char* kPrelude = R"PY(# --- instrumentation prelude ---
from hypothesis import given as _pbt_given, strategies as _pbt_st

_PBT_STRICT = {{STRICT}}
_pbt_record = {"phase": "Generate", "input": None, "failed": [], "errored": []}


class PropertyCheckFailed(AssertionError):
    pass


def _pbt_reset():
    _pbt_record.update(phase="Generate", input=None, failed=[], errored=[])


def _pbt_phase(label):
    if label == "Generate":
        _pbt_reset()
    else:
        _pbt_record["phase"] = label


def _pbt_generating(strategy):
    def _enter(_):
        _pbt_reset()
        return strategy
    return _pbt_st.just(None).flatmap(_enter)


def _pbt_note_input(**values):
    _pbt_record["input"] = values


def _pbt_note_locals(scope, exclude=()):
    _pbt_note_input(**{k: v for k, v in scope.items() if k not in exclude and not k.startswith("_pbt")})


def _pbt_fail(pid, exc):
    _pbt_record["failed"].append((pid, exc))
    if _PBT_STRICT:
        raise exc


def _pbt_error(pid, exc):
    _pbt_record["errored"].append((pid, exc))
    if _PBT_STRICT:
        raise exc


def _pbt_finish():
    problems = _pbt_record["failed"] + _pbt_record["errored"]
    if problems:
        ids = ", ".join(pid for pid, _ in problems)
        raise PropertyCheckFailed("property checks failed: " + ids) from problems[0][1]
# --- end of prelude ---)PY";

class Emitter {
 public:
  void add(std::string line, std::optional<Phase> phase = std::nullopt) {
    lines_.push_back(std::move(line));
    phases_.push_back(std::move(phase));
  }

  void add_all(const std::vector<std::string>& lines, const std::optional<Phase>& phase) {
    for (const auto& l : lines) add(l, phase);
  }

  void add_text(const std::string& text, const std::optional<Phase>& phase) {
    auto lines = split_lines(text);
    while (!lines.empty() && is_blank(lines.back())) lines.pop_back();
    add_all(lines, phase);
  }

  std::string source() const {
    std::string out;
    for (const auto& l : lines_) {
      out += l;
      out += '\n';
    }
    return out;
  }

  std::vector<PhaseRange> phase_map() const {
    std::vector<PhaseRange> out;
    for (std::size_t i = 0; i < phases_.size(); ++i) {
      if (!phases_[i]) continue;
      int line = static_cast<int>(i) + 1;
      if (!out.empty() && out.back().phase == *phases_[i] && out.back().last_line == line - 1) {
        out.back().last_line = line;
      } else {
        out.push_back({line, line, *phases_[i]});
      }
    }
    return out;
  }

 private:
  std::vector<std::string> lines_;
  std::vector<std::optional<Phase>> phases_;
};

std::string test_name_for(const TargetApi& target) {
  std::string name = "test_";
  for (char c : target.qualname) name.push_back(c == '.' ? '_' : c);
  return name;
}

bool is_import(const py::Statement& s) { return s.keyword == "import" || s.keyword == "from"; }

std::string py_str(const std::string& s) { return json(s).dump(); }

void emit_header(Emitter& out, const AssembledTest& test, const AssembleOptions& opts) {
  json meta{{"format", 1},
            {"mode", test.mode == AssemblyMode::Separate ? "separate" : "combined"},
            {"target", test.target.qualname},
            {"properties", test.property_ids()},
            {"test_function", test.test_function},
            {"invocation", test.invocation},
            {"strict", opts.strict},
            {"io", {{"input", opts.io.input_var}, {"output", opts.io.output_var}}}};
  meta["generator"] = test.generator_name ? json(*test.generator_name) : json(nullptr);
  out.add("# pbt-workbench assembled test (format 1)");
  out.add("# pbt-meta: " + meta.dump());
  std::string prelude = kPrelude;
  prelude.replace(prelude.find("{{STRICT}}"), 10, opts.strict ? "True" : "False");
  out.add_text(prelude, std::nullopt);
  out.add("");
}

/// Groups statements into property blocks: each asserting statement closes a
/// block together with the non-asserting statements before it; trailing
/// non-asserting statements join the last block.
std::vector<std::vector<const py::Statement*>> property_blocks(const std::vector<const py::Statement*>& stmts) {
  std::vector<std::vector<const py::Statement*>> blocks;
  std::vector<const py::Statement*> pending;
  for (const auto* s : stmts) {
    pending.push_back(s);
    if (py::contains_assertion(*s)) {
      blocks.push_back(std::move(pending));
      pending.clear();
    }
  }
  if (!pending.empty() && !blocks.empty()) {
    for (const auto* s : pending) blocks.back().push_back(s);
  }
  return blocks;
}

PropertyAssertion describe_property(const py::Fragment& frag, const py::Statement& stmt, std::string id) {
  PropertyAssertion p;
  p.id = std::move(id);
  auto lines = py::reindent(frag, stmt.first_line, stmt.last_line, stmt.indent, 0);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) p.source_text += '\n';
    p.source_text += lines[i];
  }
  if (!stmt.leading_comments.empty()) {
    std::string d;
    for (const auto& c : stmt.leading_comments) {
      if (!d.empty()) d += ' ';
      d += c;
    }
    p.description = d;
  }
  if (auto g = py::guard_of(stmt); !g.empty()) p.guard = g;
  return p;
}

/// Emits the soft-checked property blocks at body indentation 4. `cursor` is
/// the last fragment line already emitted; comment lines between statements
/// travel with the statement that follows them.
std::vector<PropertyAssertion> emit_checks(Emitter& out, const py::Fragment& frag,
                                           const std::vector<std::vector<const py::Statement*>>& blocks,
                                           int body_indent, int& cursor) {
  std::vector<PropertyAssertion> props;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::string id = "P" + std::to_string(b + 1);
    Phase phase = Phase::check(id);
    out.add("    _pbt_phase(" + py_str(phase.label()) + ")", phase);
    out.add("    try:", phase);
    for (const auto* s : blocks[b]) {
      int from = std::max(cursor + 1, s->first_line);
      // keep comments directly above the statement
      while (from > cursor + 1 && !is_blank(frag.lines[from - 2])) --from;
      out.add_all(py::reindent(frag, from, s->last_line, body_indent, 8), phase);
      cursor = s->last_line;
    }
    out.add("    except AssertionError as _pbt_exc:", phase);
    out.add("        _pbt_fail(" + py_str(id) + ", _pbt_exc)", phase);
    out.add("    except Exception as _pbt_exc:", phase);
    out.add("        _pbt_error(" + py_str(id) + ", _pbt_exc)", phase);
    props.push_back(describe_property(frag, *blocks[b].back(), id));
  }
  return props;
}

const py::Statement* find_test_function(const py::Fragment& frag) {
  static const std::regex kGiven(R"(\bgiven\s*\()");
  std::vector<const py::Statement*> tests;
  for (const auto& s : frag.statements) {
    auto name = s.def_name();
    if (name.empty()) continue;
    bool decorated = false;
    for (const auto& d : s.decorators()) decorated = decorated || std::regex_search(d, kGiven);
    if (decorated || name.rfind("test", 0) == 0) tests.push_back(&s);
  }
  if (tests.size() > 1) {
    throw Error(ErrorCode::MultipleTestFunctions, std::to_string(tests.size()) + " test functions found, expected one");
  }
  if (tests.empty()) throw Error(ErrorCode::UnparseableFragment, "no test function found");
  return tests.front();
}

std::vector<std::string> def_parameters(const py::Statement& fn) {
  const auto& h = fn.main_header();
  auto open = h.masked.find('(');
  if (open == std::string::npos) return {};
  int depth = 0;
  std::size_t close = open;
  for (std::size_t i = open; i < h.masked.size(); ++i) {
    if (h.masked[i] == '(' || h.masked[i] == '[' || h.masked[i] == '{') ++depth;
    if (h.masked[i] == ')' || h.masked[i] == ']' || h.masked[i] == '}') {
      if (--depth == 0) {
        close = i;
        break;
      }
    }
  }
  std::vector<std::string> params;
  std::string_view inner(h.masked.data() + open + 1, close - open - 1);
  std::size_t start = 0;
  depth = 0;
  for (std::size_t i = 0; i <= inner.size(); ++i) {
    char c = i < inner.size() ? inner[i] : ',';
    if (c == '(' || c == '[' || c == '{') ++depth;
    if (c == ')' || c == ']' || c == '}') --depth;
    if (c == ',' && depth == 0) {
      auto part = trim(inner.substr(start, i - start));
      while (!part.empty() && part.front() == '*') part.remove_prefix(1);
      std::size_t n = 0;
      while (n < part.size() && (std::isalnum(static_cast<unsigned char>(part[n])) || part[n] == '_')) ++n;
      if (n) params.emplace_back(part.substr(0, n));
      start = i + 1;
    }
  }
  return params;
}

/// Rewrites the body of a parametrized test: pre-call statements form the
/// Generate phase, the first call of the target is Invoke, and asserting
/// statements after it become soft-checked properties.
std::vector<PropertyAssertion> emit_instrumented_test(Emitter& out, const py::Fragment& frag,
                                                      const py::Statement& fn, const TargetApi& target,
                                                      const std::string& code) {
  auto spellings = target_call_spellings(target, code);
  std::size_t call = fn.body.size();
  for (std::size_t i = 0; i < fn.body.size(); ++i) {
    if (py::calls_any(fn.body[i], spellings)) {
      call = i;
      break;
    }
  }
  if (call == fn.body.size()) {
    throw Error(ErrorCode::TargetCallNotFound, "test function never calls " + target.qualname);
  }

  const Phase gen = Phase::generate();
  out.add_all(py::reindent(frag, fn.first_line, fn.main_header().last_line, fn.indent, 0), gen);
  int body_indent = fn.body.front().indent;
  int cursor = fn.main_header().last_line;

  out.add("    _pbt_phase(\"Generate\")", gen);
  for (std::size_t i = 0; i < call; ++i) {
    out.add_all(py::reindent(frag, cursor + 1, fn.body[i].last_line, body_indent, 4), gen);
    cursor = fn.body[i].last_line;
  }

  bool data_style = false;
  for (const auto& d : fn.decorators()) data_style = data_style || d.find("data()") != std::string::npos;
  std::string exclude = "(";
  if (data_style) {
    for (const auto& p : def_parameters(fn)) exclude += py_str(p) + ", ";
  }
  exclude += ")";

  const Phase inv = Phase::invoke();
  out.add("    _pbt_phase(\"Invoke\")", inv);
  out.add("    _pbt_note_locals(locals(), " + exclude + ")", inv);
  out.add_all(py::reindent(frag, cursor + 1, fn.body[call].last_line, body_indent, 4), inv);
  cursor = fn.body[call].last_line;

  std::vector<const py::Statement*> rest;
  for (std::size_t i = call + 1; i < fn.body.size(); ++i) rest.push_back(&fn.body[i]);
  auto blocks = property_blocks(rest);
  if (blocks.empty() && !rest.empty()) {
    // statements after the call without any assertion stay in Invoke
    out.add_all(py::reindent(frag, cursor + 1, rest.back()->last_line, body_indent, 4), inv);
    cursor = rest.back()->last_line;
  }
  auto props = emit_checks(out, frag, blocks, body_indent, cursor);
  out.add("    _pbt_finish()", props.empty() ? inv : Phase::check(props.back().id));
  return props;
}

void finalize(AssembledTest& test, const Emitter& out) {
  test.source_text = out.source();
  test.phase_map = out.phase_map();
  validate_phase_map(test);
}

}  // namespace

std::vector<std::string> target_call_spellings(const TargetApi& target, const std::string& code) {
  std::vector<std::string> out{target.qualname};
  auto add = [&](std::string s) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  };
  std::vector<std::pair<std::string, std::string>> aliases;
  try {
    aliases = py::import_aliases(py::parse(code));
  } catch (const Error&) {
  }
  for (const auto& [alias, full] : aliases) {
    if (target.qualname == full) add(alias);
    if (target.qualname.rfind(full + ".", 0) == 0) add(alias + target.qualname.substr(full.size()));
  }
  auto last_dot = target.qualname.rfind('.');
  if (target.module_path == "builtins" || target.qualname.rfind("builtins.", 0) == 0) {
    add(target.qualname.substr(last_dot + 1));
  }
  std::string module = target.module_path.empty() ? target.qualname.substr(0, target.qualname.find('.'))
                                                   : target.module_path;
  if (target.qualname.rfind(module + ".", 0) == 0) {
    std::string rest = target.qualname.substr(module.size() + 1);
    if (rest.find('.') != std::string::npos) add(target.qualname.substr(last_dot));  // method call: ".name"
  }
  return out;
}

GeneratorArtifact GeneratorArtifact::from_code(const std::string& code, const std::string& expected_name) {
  auto frag = py::parse(code);
  std::vector<std::string> composite;
  bool has_expected = false;
  for (const auto& s : frag.statements) {
    auto name = s.def_name();
    if (name.empty()) continue;
    if (name == expected_name) has_expected = true;
    for (const auto& d : s.decorators()) {
      if (d == "composite" || (d.size() > 10 && d.substr(d.size() - 10) == ".composite")) composite.push_back(name);
    }
  }
  GeneratorArtifact gen{code, ""};
  if (composite.size() == 1) {
    gen.generator_name = composite.front();
  } else if (has_expected) {
    gen.generator_name = expected_name;
  } else {
    throw Error(ErrorCode::MalformedGenerator,
                composite.empty() ? "no composite generator function defined"
                                  : std::to_string(composite.size()) + " composite generators defined and none is named " +
                                        expected_name);
  }
  return gen;
}

void GeneratorArtifact::validate() const {
  if (!is_identifier(generator_name)) throw Error(ErrorCode::MalformedGenerator, "generator name is not an identifier");
  auto frag = py::parse(source_text);
  int defs = 0;
  for (const auto& s : frag.statements) defs += s.def_name() == generator_name;
  if (defs == 0) throw Error(ErrorCode::MalformedGenerator, "generator '" + generator_name + "' is not defined");
}

std::vector<PropertyAssertion> enumerate_properties(const std::string& props) {
  auto frag = py::parse(props);
  std::vector<PropertyAssertion> out;
  for (const auto& s : frag.statements) {
    if (is_import(s) || !py::contains_assertion(s)) continue;
    out.push_back(describe_property(frag, s, "P" + std::to_string(out.size() + 1)));
  }
  return out;
}

AssembledTest assemble_separate(const GeneratorArtifact& gen, const std::string& props, const TargetApi& target,
                                const AssembleOptions& opts) {
  target.validate();
  gen.validate();
  auto frag = py::parse(props);
  std::vector<const py::Statement*> imports;
  std::vector<const py::Statement*> body;
  for (const auto& s : frag.statements) (is_import(s) ? imports : body).push_back(&s);
  auto blocks = property_blocks(body);
  if (blocks.empty()) throw Error(ErrorCode::NoAssertionsFound, "property block contains no assertion");

  AssembledTest test;
  test.mode = AssemblyMode::Separate;
  test.target = target;
  test.test_function = test_name_for(target);
  test.generator_name = gen.generator_name;
  test.invocation = "boilerplate";
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    test.properties.push_back(describe_property(frag, *blocks[b].back(), "P" + std::to_string(b + 1)));
  }

  Emitter out;
  emit_header(out, test, opts);
  std::string module = target.module_path.empty() ? target.qualname.substr(0, target.qualname.find('.'))
                                                  : target.module_path;
  out.add("import " + module);
  for (const auto* s : imports) out.add_all(py::reindent(frag, s->first_line, s->last_line, s->indent, 0), std::nullopt);
  out.add("");

  const Phase g = Phase::generate();
  out.add_text(gen.source_text, g);
  out.add("", g);
  out.add("", g);
  const auto& in = opts.io.input_var;
  out.add("@_pbt_given(" + in + "=_pbt_generating(" + gen.generator_name + "()))", g);
  out.add("def " + test.test_function + "(" + in + "):", g);
  const Phase inv = Phase::invoke();
  out.add("    _pbt_phase(\"Invoke\")", inv);
  out.add("    _pbt_note_input(" + in + "=" + in + ")", inv);
  out.add("    " + opts.io.output_var + " = " + target.qualname + "(" + in + ")", inv);

  int cursor = 0;
  int body_indent = body.empty() ? 0 : body.front()->indent;
  auto emitted = emit_checks(out, frag, blocks, body_indent, cursor);
  out.add("    _pbt_finish()", Phase::check(emitted.back().id));
  finalize(test, out);
  return test;
}

AssembledTest assemble_consecutive(const GeneratorArtifact& gen, const std::string& test_code,
                                   const TargetApi& target, const AssembleOptions& opts) {
  target.validate();
  gen.validate();
  auto frag = py::parse(test_code);
  const auto* fn = find_test_function(frag);
  bool uses_gen = false;
  for (const auto& d : fn->decorators()) uses_gen = uses_gen || d.find(gen.generator_name) != std::string::npos;
  if (!uses_gen) {
    throw Error(ErrorCode::MalformedGenerator, "test function does not use generator '" + gen.generator_name + "'");
  }

  AssembledTest test;
  test.mode = AssemblyMode::Separate;
  test.target = target;
  test.test_function = fn->def_name();
  test.generator_name = gen.generator_name;
  test.invocation = "first-call";

  // Dry run to learn the property list for the header.
  {
    Emitter dry;
    test.properties = emit_instrumented_test(dry, frag, *fn, target, gen.source_text + "\n" + test_code);
  }

  Emitter out;
  emit_header(out, test, opts);
  std::vector<const py::Statement*> others;
  for (const auto& s : frag.statements) {
    if (&s == fn) continue;
    if (is_import(s)) {
      out.add_all(py::reindent(frag, s.first_line, s.last_line, s.indent, 0), std::nullopt);
    } else {
      others.push_back(&s);
    }
  }
  out.add("");
  const Phase g = Phase::generate();
  out.add_text(gen.source_text, g);
  for (const auto* s : others) {
    out.add("", g);
    out.add_all(py::reindent(frag, s->first_line, s->last_line, s->indent, 0), g);
  }
  out.add("", g);
  out.add("", g);
  emit_instrumented_test(out, frag, *fn, target, gen.source_text + "\n" + test_code);
  finalize(test, out);
  return test;
}

AssembledTest instrument_combined(const std::string& combined, const TargetApi& target, const AssembleOptions& opts) {
  target.validate();
  auto frag = py::parse(combined);
  const auto* fn = find_test_function(frag);

  AssembledTest test;
  test.mode = AssemblyMode::Combined;
  test.target = target;
  test.test_function = fn->def_name();
  test.invocation = "first-call";
  {
    Emitter dry;
    test.properties = emit_instrumented_test(dry, frag, *fn, target, combined);
  }

  Emitter out;
  emit_header(out, test, opts);
  int before_end = fn->first_line - 1;
  for (int l = 1; l <= before_end; ++l) {
    out.add(frag.lines[l - 1]);
  }
  emit_instrumented_test(out, frag, *fn, target, combined);
  for (int l = fn->last_line + 1; l <= static_cast<int>(frag.lines.size()); ++l) out.add(frag.lines[l - 1]);
  finalize(test, out);
  return test;
}

void validate_phase_map(const AssembledTest& test) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidPhaseMap, why); };
  if (test.phase_map.empty()) fail("phase map is empty");
  int total_lines = static_cast<int>(split_lines(test.source_text).size());
  std::vector<std::string> seen_checks;
  int stage = 0;  // 0 Generate, 1 Invoke, 2 Check
  for (std::size_t i = 0; i < test.phase_map.size(); ++i) {
    const auto& r = test.phase_map[i];
    if (r.first_line < 1 || r.last_line < r.first_line || r.last_line > total_lines) fail("range out of bounds");
    if (i > 0 && r.first_line != test.phase_map[i - 1].last_line + 1) fail("phase ranges are not contiguous");
    int s = r.phase.kind == Phase::Kind::Generate ? 0 : r.phase.kind == Phase::Kind::Invoke ? 1 : 2;
    if (s < stage) fail("phase " + r.phase.label() + " out of order");
    if (s == stage && s != 2 && i > 0) fail("phase " + r.phase.label() + " split into several ranges");
    stage = s;
    if (s == 2) {
      if (std::find(seen_checks.begin(), seen_checks.end(), r.phase.property_id) != seen_checks.end()) {
        fail("property " + r.phase.property_id + " has several ranges");
      }
      seen_checks.push_back(r.phase.property_id);
    }
  }
  if (test.phase_map.front().phase.kind != Phase::Kind::Generate) fail("phase map must start with Generate");
  auto ids = test.property_ids();
  if (seen_checks != ids) fail("Check phases do not match the property list");
}

json read_test_header(const std::string& source_text) {
  for (const auto& line : split_lines(source_text)) {
    if (line.rfind("# pbt-meta: ", 0) == 0) return json::parse(line.substr(12));
  }
  throw Error(ErrorCode::InvalidArgument, "source has no pbt-meta header");
}

}  // namespace pbtw
