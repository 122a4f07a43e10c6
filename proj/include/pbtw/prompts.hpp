#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace pbtw {

/// The API method under test.
struct TargetApi {
  std::string library;
  std::string module_path;
  std::string qualname;  // dotted, e.g. "numpy.cumsum"
  std::string doc_text;
  std::optional<std::string> input_object;  // e.g. "networkx.Graph"

  /// Throws EmptyDocumentation / InvalidArgument.
  void validate() const;

  bool operator==(const TargetApi&) const = default;
};

void to_json(nlohmann::json& j, const TargetApi& t);
void from_json(const nlohmann::json& j, TargetApi& t);

/// Default generator function name for a target: "generate_" + the snake-cased
/// last component of the input object (or of the qualname plus "_input").
std::string default_generator_name(const TargetApi& target);

enum class TaskKind { Generator, Properties, Combined };
enum class OutputFormat { CompositeDecorator, AssertionBlock, DataDecorator };

struct IoNames {
  std::string input_var = "input_args";
  std::string output_var = "result";
  bool operator==(const IoNames&) const = default;
};

struct PromptTask {
  TaskKind kind = TaskKind::Generator;
  OutputFormat output_format = OutputFormat::CompositeDecorator;
  std::optional<IoNames> io_names;
  std::optional<std::string> generator_name;  // overrides default_generator_name

  static PromptTask generator();
  static PromptTask properties(IoNames names = {});
  static PromptTask combined();

  /// Throws UnsupportedTask when kind and output format disagree.
  void validate() const;
};

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

struct PromptMessage {
  Role role = Role::User;
  std::string text;

  bool operator==(const PromptMessage&) const = default;
};

void to_json(nlohmann::json& j, const PromptMessage& m);
void from_json(const nlohmann::json& j, PromptMessage& m);

enum class MitigationKind {
  FixGeneratorError,
  EnrichGenerator,
  FixPropertyError,
  FixUnsoundProperty,
  StrengthenProperty,
};

std::string_view to_string(MitigationKind kind);
MitigationKind mitigation_kind_from_string(std::string_view name);

/// Mitigation payloads. The alternative held must match the action kind.
struct ErrorMessage { std::string text; };
struct FeatureRequest { std::string text; };
struct Counterexample { std::string text; };
struct MutantDiff { std::string text; };

using MitigationContext = std::variant<ErrorMessage, FeatureRequest, Counterexample, MutantDiff>;

class MitigationAction {
 public:
  /// Throws InvalidArgument when `context` does not fit `kind`.
  MitigationAction(MitigationKind kind, MitigationContext context);

  static MitigationAction fix_generator_error(std::string error_text);
  static MitigationAction enrich_generator(std::string feature_request);
  static MitigationAction fix_property_error(std::string error_text);
  static MitigationAction fix_unsound_property(std::string counterexample);
  static MitigationAction strengthen_property(std::string mutant_diff);

  /// Same kind, different payload text.
  MitigationAction with_payload(std::string text) const;

  MitigationKind kind() const { return kind_; }
  const MitigationContext& context() const { return context_; }
  const std::string& payload() const;
  bool targets_generator() const {
    return kind_ == MitigationKind::FixGeneratorError || kind_ == MitigationKind::EnrichGenerator;
  }

 private:
  MitigationKind kind_;
  MitigationContext context_;
};

void to_json(nlohmann::json& j, const MitigationAction& a);
MitigationAction mitigation_action_from_json(const nlohmann::json& j);

/// Prompt wording lives in template files: UTF-8 text with {{placeholder}}
/// substitution. Leading lines beginning with "%%" are header comments and are
/// dropped, as is the file's final newline.
class TemplateSet {
 public:
  explicit TemplateSet(std::filesystem::path dir);

  /// PBTW_TEMPLATE_DIR if set, otherwise the directory shipped with the build.
  static const TemplateSet& shipped();

  /// Single-pass substitution: substituted values are never rescanned, so
  /// documentation text containing "{{" survives untouched.
  std::string render(const std::string& name, const std::map<std::string, std::string>& values) const;

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

std::vector<PromptMessage> build_synthesis_prompt(const TargetApi& target, const PromptTask& task,
                                                  const TemplateSet& templates = TemplateSet::shipped());

/// Consecutive strategy follow-up: asks for a parametrized test that uses the
/// generator already present in the conversation.
PromptMessage build_consecutive_followup(const TargetApi& target, const std::string& generator_name,
                                         const IoNames& io = {},
                                         const TemplateSet& templates = TemplateSet::shipped());

PromptMessage build_mitigation_prompt(const MitigationAction& action, const std::string& prior_artifact_name,
                                      const TemplateSet& templates = TemplateSet::shipped());

}  // namespace pbtw
