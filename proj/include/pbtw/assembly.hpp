#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbtw/prompts.hpp"

namespace pbtw {

/// Phase label of a line in an assembled test: Generate, Invoke or Check(Pi).
struct Phase {
  enum class Kind { Generate, Invoke, Check };
  Kind kind = Kind::Generate;
  std::string property_id;  // Check only

  static Phase generate() { return {Kind::Generate, {}}; }
  static Phase invoke() { return {Kind::Invoke, {}}; }
  static Phase check(std::string id) { return {Kind::Check, std::move(id)}; }

  std::string label() const;
  /// Parses "Generate", "Invoke" or "Check(P3)".
  static Phase parse(std::string_view label);

  bool operator==(const Phase&) const = default;
};

struct PhaseRange {
  int first_line = 0;  // 1-based, inclusive, in AssembledTest::source_text
  int last_line = 0;
  Phase phase;

  bool operator==(const PhaseRange&) const = default;
};

struct GeneratorArtifact {
  std::string source_text;
  std::string generator_name;

  /// Locates the generator in LLM-produced code: the single top-level
  /// st.composite function, or the function named `expected_name`.
  /// Throws MalformedGenerator / UnparseableFragment.
  static GeneratorArtifact from_code(const std::string& code, const std::string& expected_name);

  /// Throws MalformedGenerator when `generator_name` is not defined at top level.
  void validate() const;
};

struct PropertyAssertion {
  std::string id;           // "P1".."Pk" in source order
  std::string source_text;  // the assertion statement including its guarding block
  std::optional<std::string> description;  // adjacent comment text
  std::optional<std::string> guard;        // condition of a guarding if, or the compound header

  bool operator==(const PropertyAssertion&) const = default;
};

void to_json(nlohmann::json& j, const PropertyAssertion& p);
void from_json(const nlohmann::json& j, PropertyAssertion& p);

enum class AssemblyMode { Separate, Combined };

struct AssembledTest {
  std::string source_text;
  AssemblyMode mode = AssemblyMode::Separate;
  TargetApi target;
  std::vector<PropertyAssertion> properties;
  std::vector<PhaseRange> phase_map;
  std::string test_function;
  std::optional<std::string> generator_name;
  std::string invocation;  // "boilerplate" or "first-call"

  std::vector<std::string> property_ids() const;
  /// Phase of a 1-based source line, if the line lies inside the phase map.
  std::optional<Phase> phase_at(int line) const;
};

void to_json(nlohmann::json& j, const AssembledTest& t);
void from_json(const nlohmann::json& j, AssembledTest& t);

struct AssembleOptions {
  IoNames io;
  /// Re-raise the first failing check immediately (native assertion semantics)
  /// instead of recording every property.
  bool strict = false;
};

/// One PropertyAssertion per top-level statement that asserts something.
/// Import statements and non-asserting statements are not properties.
std::vector<PropertyAssertion> enumerate_properties(const std::string& props);

/// Independent strategy: generator + property block + inserted parametrized
/// test that invokes the target on the generated input.
AssembledTest assemble_separate(const GeneratorArtifact& gen, const std::string& props, const TargetApi& target,
                                const AssembleOptions& opts = {});

/// Consecutive strategy: generator + an LLM-written test function that uses it.
AssembledTest assemble_consecutive(const GeneratorArtifact& gen, const std::string& test_code,
                                   const TargetApi& target, const AssembleOptions& opts = {});

/// Together strategy: instruments a single st.data() test. The first statement
/// calling the target splits Generate from Invoke.
AssembledTest instrument_combined(const std::string& combined, const TargetApi& target,
                                  const AssembleOptions& opts = {});

/// Throws InvalidPhaseMap unless ranges are contiguous, ordered
/// Generate < Invoke < Check(P1) < ... and cover every property exactly once.
void validate_phase_map(const AssembledTest& test);

/// Spellings under which code may call the target, given the code's imports.
std::vector<std::string> target_call_spellings(const TargetApi& target, const std::string& code);

/// Reads the "# pbt-meta:" header of an assembled test.
nlohmann::json read_test_header(const std::string& source_text);

}  // namespace pbtw
