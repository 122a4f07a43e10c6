#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbtw/metrics.hpp"
#include "pbtw/session.hpp"

namespace pbtw {

inline constexpr const char* kCampaignConfigFormat = "pbt-campaign-config/1";
inline constexpr const char* kCampaignSchema = "pbt-campaign/1";

struct CampaignConfig {
  std::vector<TargetApi> targets;  // library field doubles as the grouping label
  std::vector<Strategy> strategies;
  int promptings_per_target = 3;
  EvaluationPlanConfig plan;
  ProviderConfig provider;
  int parallelism = 1;
  std::filesystem::path output_dir;
  bool auto_mitigate = false;

  /// Throws ConfigInvalid.
  void validate() const;

  /// Reads a config document. Relative doc_file and fixture_dir entries are
  /// resolved against `base_dir`.
  static CampaignConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
  static CampaignConfig load(const std::filesystem::path& file);
};

/// Session ids used by campaigns: "<qualname>-<strategy>-<prompting>".
std::string campaign_session_id(const TargetApi& target, Strategy strategy, int prompting);

/// Evaluation seed of a prompting: plan seed plus prompting - 1.
std::uint64_t campaign_seed(std::uint64_t base, int prompting);

struct SessionSummary {
  std::string session_id;
  bool ok = false;
  std::string error_type;
  std::string error_message;
  std::optional<QualityScorecard> scorecard;       // first evaluation
  std::optional<QualityScorecard> post_scorecard;  // after auto-mitigation
  std::vector<std::string> mitigations;            // "<issue id>:<kind>" or "<issue id>:failed"
};

struct CampaignCell {
  std::string library;
  std::string target;
  Strategy strategy = Strategy::Together;
  bool ok = false;
  std::string failure;  // cause when no prompting produced a scorecard
  std::vector<SessionSummary> sessions;
  std::optional<AggregateMetrics> metrics;
  std::optional<AggregateMetrics> post_metrics;
  std::map<std::string, double> deltas;  // post mean - pre mean, per metric defined on both sides
};

struct CampaignReport {
  std::vector<CampaignCell> cells;
  nlohmann::json provenance;
  int total_runs = 0;  // scorecard runs summed over successful cells
};

nlohmann::json to_json(const CampaignReport& r);

/// Where runners and providers come from; the provider factory is optional.
struct CampaignContext {
  RunnerPool* runners = nullptr;
  const TemplateSet* templates = nullptr;
  std::function<std::unique_ptr<ChatProvider>(const ProviderConfig&)> provider_factory;
};

/// Runs every (target, strategy) cell over a bounded worker pool, then writes
/// campaign.json and campaign.md under the output directory. Cell failures are
/// recorded, never thrown.
CampaignReport run_campaign(const CampaignConfig& cfg, const CampaignContext& ctx);

enum class ReportFormat { JsonDoc, TextTable, Markdown };
ReportFormat report_format_from_string(std::string_view name);

std::string render_report(const CampaignReport& report, ReportFormat format);

/// Same rendering from a stored campaign.json document.
std::string render_report(const nlohmann::json& doc, ReportFormat format);

}  // namespace pbtw
