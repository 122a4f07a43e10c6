#include "pbtw/prompts.hpp"

#include <cctype>
#include <cstdlib>

#include "pbtw/error.hpp"
#include "pbtw/util.hpp"

#ifndef PBTW_DEFAULT_TEMPLATE_DIR
#define PBTW_DEFAULT_TEMPLATE_DIR "templates"
#endif

namespace pbtw {

using nlohmann::json;

void TargetApi::validate() const {
  if (is_blank(doc_text)) {
    throw Error(ErrorCode::EmptyDocumentation, "documentation for '" + qualname + "' is blank");
  }
  if (qualname.empty() || !is_dotted_identifier(qualname) || qualname.find('.') == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "qualname must be a dotted identifier, got '" + qualname + "'");
  }
  if (!module_path.empty() && !is_dotted_identifier(module_path)) {
    throw Error(ErrorCode::InvalidArgument, "module_path must be a dotted identifier, got '" + module_path + "'");
  }
  if (input_object && !is_dotted_identifier(*input_object)) {
    throw Error(ErrorCode::InvalidArgument, "input_object must be a dotted identifier");
  }
}

void to_json(json& j, const TargetApi& t) {
  j = json{{"library", t.library}, {"module_path", t.module_path}, {"qualname", t.qualname},
           {"doc_text", t.doc_text}};
  j["input_object"] = t.input_object ? json(*t.input_object) : json(nullptr);
}

void from_json(const json& j, TargetApi& t) {
  t.qualname = j.at("qualname").get<std::string>();
  t.doc_text = j.value("doc_text", std::string{});
  t.module_path = j.value("module_path", std::string{});
  if (t.module_path.empty()) {
    auto dot = t.qualname.find('.');
    t.module_path = t.qualname.substr(0, dot);
  }
  t.library = j.value("library", std::string{});
  if (t.library.empty()) t.library = t.module_path.substr(0, t.module_path.find('.'));
  if (j.contains("input_object") && !j["input_object"].is_null()) {
    t.input_object = j["input_object"].get<std::string>();
  } else {
    t.input_object.reset();
  }
}

namespace {

std::string snake_case(std::string_view name) {
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    char c = name[i];
    if (std::isupper(static_cast<unsigned char>(c))) {
      if (i > 0 && name[i - 1] != '_' && !std::isupper(static_cast<unsigned char>(name[i - 1]))) out.push_back('_');
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string last_component(std::string_view dotted) {
  auto dot = dotted.rfind('.');
  return std::string(dot == std::string_view::npos ? dotted : dotted.substr(dot + 1));
}

}  // namespace

std::string default_generator_name(const TargetApi& target) {
  if (target.input_object) return "generate_" + snake_case(last_component(*target.input_object));
  return "generate_" + snake_case(last_component(target.qualname)) + "_input";
}

PromptTask PromptTask::generator() { return {TaskKind::Generator, OutputFormat::CompositeDecorator, std::nullopt, std::nullopt}; }

PromptTask PromptTask::properties(IoNames names) {
  return {TaskKind::Properties, OutputFormat::AssertionBlock, std::move(names), std::nullopt};
}

PromptTask PromptTask::combined() { return {TaskKind::Combined, OutputFormat::DataDecorator, std::nullopt, std::nullopt}; }

void PromptTask::validate() const {
  switch (kind) {
    case TaskKind::Generator:
      if (output_format != OutputFormat::CompositeDecorator) {
        throw Error(ErrorCode::UnsupportedTask, "generator task requires the composite-decorator output format");
      }
      break;
    case TaskKind::Combined:
      if (output_format != OutputFormat::DataDecorator) {
        throw Error(ErrorCode::UnsupportedTask, "combined task requires the data-decorator output format");
      }
      break;
    case TaskKind::Properties:
      if (output_format != OutputFormat::AssertionBlock) {
        throw Error(ErrorCode::UnsupportedTask, "properties task requires the assertion-block output format");
      }
      if (!io_names) throw Error(ErrorCode::UnsupportedTask, "properties task requires input/output variable names");
      if (!is_identifier(io_names->input_var) || !is_identifier(io_names->output_var) ||
          io_names->input_var == io_names->output_var) {
        throw Error(ErrorCode::UnsupportedTask, "io_names must be two distinct identifiers");
      }
      break;
  }
  if (generator_name && !is_identifier(*generator_name)) {
    throw Error(ErrorCode::UnsupportedTask, "generator_name must be an identifier");
  }
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view name) {
  if (name == "system") return Role::System;
  if (name == "user") return Role::User;
  if (name == "assistant") return Role::Assistant;
  throw Error(ErrorCode::InvalidArgument, "unknown role '" + std::string(name) + "'");
}

void to_json(json& j, const PromptMessage& m) { j = json{{"role", to_string(m.role)}, {"text", m.text}}; }

void from_json(const json& j, PromptMessage& m) {
  m.role = role_from_string(j.at("role").get<std::string>());
  m.text = j.at("text").get<std::string>();
}

std::string_view to_string(MitigationKind kind) {
  switch (kind) {
    case MitigationKind::FixGeneratorError: return "FixGeneratorError";
    case MitigationKind::EnrichGenerator: return "EnrichGenerator";
    case MitigationKind::FixPropertyError: return "FixPropertyError";
    case MitigationKind::FixUnsoundProperty: return "FixUnsoundProperty";
    case MitigationKind::StrengthenProperty: return "StrengthenProperty";
  }
  return "FixGeneratorError";
}

MitigationKind mitigation_kind_from_string(std::string_view name) {
  for (auto k : {MitigationKind::FixGeneratorError, MitigationKind::EnrichGenerator, MitigationKind::FixPropertyError,
                 MitigationKind::FixUnsoundProperty, MitigationKind::StrengthenProperty}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown mitigation kind '" + std::string(name) + "'");
}

namespace {

bool context_fits(MitigationKind kind, const MitigationContext& ctx) {
  switch (kind) {
    case MitigationKind::FixGeneratorError:
    case MitigationKind::FixPropertyError:
      return std::holds_alternative<ErrorMessage>(ctx);
    case MitigationKind::EnrichGenerator: return std::holds_alternative<FeatureRequest>(ctx);
    case MitigationKind::FixUnsoundProperty: return std::holds_alternative<Counterexample>(ctx);
    case MitigationKind::StrengthenProperty: return std::holds_alternative<MutantDiff>(ctx);
  }
  return false;
}

MitigationContext context_for(MitigationKind kind, std::string text) {
  switch (kind) {
    case MitigationKind::FixGeneratorError:
    case MitigationKind::FixPropertyError:
      return ErrorMessage{std::move(text)};
    case MitigationKind::EnrichGenerator: return FeatureRequest{std::move(text)};
    case MitigationKind::FixUnsoundProperty: return Counterexample{std::move(text)};
    case MitigationKind::StrengthenProperty: return MutantDiff{std::move(text)};
  }
  return ErrorMessage{std::move(text)};
}

}  // namespace

MitigationAction::MitigationAction(MitigationKind kind, MitigationContext context)
    : kind_(kind), context_(std::move(context)) {
  if (!context_fits(kind_, context_)) {
    throw Error(ErrorCode::InvalidArgument,
                "payload type does not match mitigation kind " + std::string(to_string(kind_)));
  }
}

MitigationAction MitigationAction::fix_generator_error(std::string t) {
  return {MitigationKind::FixGeneratorError, ErrorMessage{std::move(t)}};
}
MitigationAction MitigationAction::enrich_generator(std::string t) {
  return {MitigationKind::EnrichGenerator, FeatureRequest{std::move(t)}};
}
MitigationAction MitigationAction::fix_property_error(std::string t) {
  return {MitigationKind::FixPropertyError, ErrorMessage{std::move(t)}};
}
MitigationAction MitigationAction::fix_unsound_property(std::string t) {
  return {MitigationKind::FixUnsoundProperty, Counterexample{std::move(t)}};
}
MitigationAction MitigationAction::strengthen_property(std::string t) {
  return {MitigationKind::StrengthenProperty, MutantDiff{std::move(t)}};
}

MitigationAction MitigationAction::with_payload(std::string text) const {
  return {kind_, context_for(kind_, std::move(text))};
}

const std::string& MitigationAction::payload() const {
  return std::visit([](const auto& p) -> const std::string& { return p.text; }, context_);
}

void to_json(json& j, const MitigationAction& a) {
  j = json{{"kind", to_string(a.kind())}, {"payload", a.payload()}};
}

MitigationAction mitigation_action_from_json(const json& j) {
  auto kind = mitigation_kind_from_string(j.at("kind").get<std::string>());
  return {kind, context_for(kind, j.at("payload").get<std::string>())};
}

TemplateSet::TemplateSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

const TemplateSet& TemplateSet::shipped() {
  static const TemplateSet set([] {
    if (const char* env = std::getenv("PBTW_TEMPLATE_DIR"); env && *env) return std::filesystem::path(env);
    return std::filesystem::path(PBTW_DEFAULT_TEMPLATE_DIR);
  }());
  return set;
}

std::string TemplateSet::render(const std::string& name, const std::map<std::string, std::string>& values) const {
  auto path = dir_ / (name + ".tmpl");
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::TemplateMissing, "template not found: " + path.string());
  std::string raw = read_file(path);

  std::size_t body_start = 0;
  while (raw.compare(body_start, 2, "%%") == 0) {
    auto nl = raw.find('\n', body_start);
    body_start = nl == std::string::npos ? raw.size() : nl + 1;
  }
  std::string_view body(raw);
  body.remove_prefix(body_start);
  if (!body.empty() && body.back() == '\n') body.remove_suffix(1);

  std::string out;
  out.reserve(body.size() + 256);
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto open = body.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(body.substr(pos));
      break;
    }
    auto close = body.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw Error(ErrorCode::TemplateMissing, "unterminated placeholder in template " + name);
    }
    out.append(body.substr(pos, open - pos));
    std::string key(body.substr(open + 2, close - open - 2));
    auto it = values.find(key);
    if (it == values.end()) {
      throw Error(ErrorCode::TemplateMissing, "template " + name + " uses unbound placeholder '" + key + "'");
    }
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

namespace {

std::map<std::string, std::string> target_values(const TargetApi& target, const std::string& generator_name) {
  return {
      {"doc_text", target.doc_text},
      {"qualname", target.qualname},
      {"input_object", target.input_object.value_or("input arguments of " + target.qualname)},
      {"generator_name", generator_name},
  };
}

}  // namespace

std::vector<PromptMessage> build_synthesis_prompt(const TargetApi& target, const PromptTask& task,
                                                  const TemplateSet& templates) {
  target.validate();
  task.validate();
  auto values = target_values(target, task.generator_name.value_or(default_generator_name(target)));
  std::string name;
  switch (task.kind) {
    case TaskKind::Generator: name = "generator"; break;
    case TaskKind::Properties:
      name = "properties";
      values["input_var"] = task.io_names->input_var;
      values["output_var"] = task.io_names->output_var;
      break;
    case TaskKind::Combined: name = "combined"; break;
  }
  return {
      PromptMessage{Role::System, templates.render("system", values)},
      PromptMessage{Role::User, templates.render(name, values)},
  };
}

PromptMessage build_consecutive_followup(const TargetApi& target, const std::string& generator_name,
                                         const IoNames& io, const TemplateSet& templates) {
  target.validate();
  auto values = target_values(target, generator_name);
  values["input_var"] = io.input_var;
  values["output_var"] = io.output_var;
  return {Role::User, templates.render("consecutive_test", values)};
}

PromptMessage build_mitigation_prompt(const MitigationAction& action, const std::string& prior_artifact_name,
                                      const TemplateSet& templates) {
  if (is_blank(action.payload())) {
    throw Error(ErrorCode::EmptyContext, std::string(to_string(action.kind())) + " needs a non-empty payload");
  }
  std::string name;
  switch (action.kind()) {
    case MitigationKind::FixGeneratorError: name = "fix_generator_error"; break;
    case MitigationKind::EnrichGenerator: name = "enrich_generator"; break;
    case MitigationKind::FixPropertyError: name = "fix_property_error"; break;
    case MitigationKind::FixUnsoundProperty: name = "fix_unsound_property"; break;
    case MitigationKind::StrengthenProperty: name = "strengthen_property"; break;
  }
  return {Role::User, templates.render(name, {{"artifact_name", prior_artifact_name}, {"payload", action.payload()}})};
}

}  // namespace pbtw
