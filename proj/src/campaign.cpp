#include "pbtw/campaign.hpp"

#include <atomic>
#include <cstdio>
#include <sstream>
#include <thread>

#include "pbtw/error.hpp"
#include "pbtw/util.hpp"

namespace pbtw {

using nlohmann::json;
namespace fs = std::filesystem;

void CampaignConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (targets.empty()) bad("campaign needs at least one target");
  if (strategies.empty()) bad("campaign needs at least one strategy");
  if (promptings_per_target < 1) bad("promptings_per_target must be at least 1");
  if (parallelism < 1) bad("parallelism must be at least 1");
  if (output_dir.empty()) bad("output_dir is required");
  try {
    plan.validate();
    provider.validate();
    for (const auto& t : targets) t.validate();
  } catch (const Error& e) {
    bad(e.type() + ": " + e.what());
  }
  std::set<std::pair<std::string, Strategy>> seen;
  for (const auto& t : targets) {
    for (auto s : strategies) {
      if (!seen.insert({t.qualname, s}).second) bad("duplicate cell " + t.qualname + "/" + std::string(to_string(s)));
    }
  }
}

CampaignConfig CampaignConfig::from_json(const json& j, const fs::path& base_dir) {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (!j.is_object()) bad("campaign config must be a JSON object");
  if (j.value("format", std::string{}) != kCampaignConfigFormat) {
    bad(std::string("campaign config format must be \"") + kCampaignConfigFormat + "\"");
  }
  static const std::set<std::string> known{"format",   "targets",    "strategies",   "promptings_per_target", "plan",
                                           "provider", "parallelism", "output_dir", "auto_mitigate"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) bad("unknown config key '" + key + "'");
  }
  CampaignConfig c;
  try {
    for (const auto& tj : j.at("targets")) {
      json copy = tj;
      if (tj.contains("doc_file")) {
        fs::path p = tj["doc_file"].get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        copy["doc_text"] = read_file(p);
        copy.erase("doc_file");
      }
      c.targets.push_back(copy.get<TargetApi>());
    }
    for (const auto& s : j.at("strategies")) c.strategies.push_back(strategy_from_string(s.get<std::string>()));
    c.promptings_per_target = j.value("promptings_per_target", c.promptings_per_target);
    if (j.contains("plan")) c.plan = j["plan"].get<EvaluationPlanConfig>();
    if (!j.contains("provider")) bad("provider is required");
    c.provider = j["provider"].is_string() ? ProviderConfig::parse_shorthand(j["provider"].get<std::string>())
                                           : j["provider"].get<ProviderConfig>();
    if (c.provider.fixture_dir && c.provider.fixture_dir->is_relative()) {
      c.provider.fixture_dir = base_dir / *c.provider.fixture_dir;
    }
    c.parallelism = j.value("parallelism", c.parallelism);
    fs::path out = j.value("output_dir", std::string{});
    c.output_dir = out.is_relative() && !out.empty() ? base_dir / out : out;
    c.auto_mitigate = j.value("auto_mitigate", false);
  } catch (const json::exception& e) {
    bad(std::string("malformed campaign config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw;
    bad(e.type() + ": " + e.what());
  }
  c.validate();
  return c;
}

CampaignConfig CampaignConfig::load(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw Error(ErrorCode::ConfigInvalid, "no config file at " + file.string());
  json j = json::parse(read_file(file), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ConfigInvalid, file.string() + " is not valid JSON");
  return from_json(j, file.parent_path().empty() ? fs::path(".") : file.parent_path());
}

std::string campaign_session_id(const TargetApi& target, Strategy strategy, int prompting) {
  std::string s(to_string(strategy));
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return target.qualname + "-" + s + "-" + std::to_string(prompting);
}

std::uint64_t campaign_seed(std::uint64_t base, int prompting) { return base + static_cast<std::uint64_t>(prompting - 1); }

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "json" || name == "JsonDoc") return ReportFormat::JsonDoc;
  if (name == "text" || name == "TextTable") return ReportFormat::TextTable;
  if (name == "markdown" || name == "md" || name == "Markdown") return ReportFormat::Markdown;
  throw Error(ErrorCode::InvalidArgument, "unknown report format '" + std::string(name) + "'");
}

namespace {

json mean_or_null(const std::optional<AggregateMetrics>& a, const std::string& metric) {
  if (!a) return nullptr;
  auto it = a->metrics.find(metric);
  if (it == a->metrics.end() || it->second.count == 0) return nullptr;
  return it->second.mean;
}

SessionSummary run_one(SessionManager& mgr, const CampaignConfig& cfg, const TargetApi& target, Strategy strategy,
                       int prompting) {
  SessionSummary out;
  out.session_id = campaign_session_id(target, strategy, prompting);
  try {
    mgr.open(target, strategy, cfg.provider, out.session_id);
    EvaluationPlanConfig plan = cfg.plan;
    plan.seed = campaign_seed(cfg.plan.seed, prompting);
    out.scorecard = mgr.evaluate(out.session_id, plan);
    out.ok = true;
    if (cfg.auto_mitigate) {
      // one round per issue kind flagged by the first evaluation, in kind order
      QualityScorecard latest = *out.scorecard;
      for (auto kind : kAllIssueKinds) {
        if (!out.scorecard->has_issue(kind)) continue;
        const Issue* issue = nullptr;
        for (const auto& i : latest.issues) {
          if (i.kind == kind) {
            issue = &i;
            break;
          }
        }
        if (!issue) continue;
        const std::string issue_id = issue->id;
        mgr.choose_mitigation(out.session_id, issue_id);
        try {
          mgr.apply_mitigation(out.session_id);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::SynthesisFailed) throw;
          out.mitigations.push_back(issue_id + ":failed");
          continue;
        }
        out.mitigations.push_back(issue_id + ":" + std::string(to_string(mitigation_for(kind))));
        latest = mgr.evaluate(out.session_id, plan);
      }
      out.post_scorecard = latest;
    }
  } catch (const Error& e) {
    out.ok = false;
    out.error_type = e.type();
    out.error_message = e.what();
  } catch (const std::exception& e) {
    out.ok = false;
    out.error_type = "InternalError";
    out.error_message = e.what();
  }
  return out;
}

json session_json(const SessionSummary& s) {
  json j{{"session_id", s.session_id}, {"status", s.ok ? "ok" : "failed"}, {"mitigations", s.mitigations}};
  j["error"] = s.error_type.empty() ? json(nullptr) : json{{"type", s.error_type}, {"message", s.error_message}};
  j["scorecard"] = s.scorecard ? json(*s.scorecard) : json(nullptr);
  j["post_scorecard"] = s.post_scorecard ? json(*s.post_scorecard) : json(nullptr);
  return j;
}

std::string fmt(const json& v) {
  if (v.is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
  return buf;
}

std::string fmt_delta(const json& v) {
  if (v.is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.4f", v.get<double>());
  return buf;
}

std::string cell_label(const json& c) { return c["library"].get<std::string>() + " " + c["target"].get<std::string>() + " " + c["strategy"].get<std::string>(); }

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

std::string render_text(const json& doc) {
  const auto& names = metric_names();
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"cell", "n"};
  for (const auto& n : names) head.push_back(n);
  rows.push_back(head);
  for (const auto& c : doc["cells"]) {
    std::vector<std::string> row{cell_label(c)};
    if (c["status"] != "ok") {
      row.push_back("0");
      row.push_back("FAILED: " + c["failure"].get<std::string>());
      rows.push_back(row);
      continue;
    }
    row.push_back(std::to_string(c["metrics"]["n_scorecards"].get<int>()));
    for (const auto& n : names) {
      const auto& m = c["metrics"]["metrics"][n];
      row.push_back(m["count"].get<int>() ? fmt(m["mean"]) : "-");
    }
    rows.push_back(row);
  }
  std::vector<std::size_t> w(head.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i + 1 < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) line += (i ? "  " : "") + (i + 1 < r.size() ? pad(r[i], w[i]) : r[i]);
    out += line + "\n";
  }
  out += "total runs: " + std::to_string(doc["total_runs"].get<int>()) + "\n";
  return out;
}

std::string md_row(const std::vector<std::string>& cols) {
  std::string s = "|";
  for (const auto& c : cols) s += " " + c + " |";
  return s + "\n";
}

std::string md_rule(std::size_t n) {
  std::string s = "|";
  for (std::size_t i = 0; i < n; ++i) s += " --- |";
  return s + "\n";
}

std::string render_markdown(const json& doc) {
  const auto& scale = doc["provenance"]["scale"];
  std::ostringstream md;
  md << "# Campaign report\n\n";
  md << "Scale: " << scale["targets"].get<int>() << " targets, " << scale["strategies"].size() << " strategies, "
     << scale["promptings_per_target"].get<int>() << " promptings per target, " << scale["n_runs"].get<int>()
     << " runs per test. Total runs: " << doc["total_runs"].get<int>() << ".\n\n";

  md << "## Generator quality\n\n";
  md << md_row({"Library", "Target", "Strategy", "Tests", "Validity", "Statements", "Branches", "No invalid generator"});
  md << md_rule(8);
  for (const auto& r : doc["tables"]["generator"]) {
    md << md_row({r["library"], r["target"], r["strategy"], std::to_string(r["tests"].get<int>()),
                  fmt(r["generator_validity"]), fmt(r["statement_coverage"]), fmt(r["branch_coverage"]),
                  std::to_string(r["issue_free_generator"].get<int>())});
  }
  md << "\n## Property quality\n\n";
  md << md_row({"Library", "Target", "Strategy", "Tests", "Validity", "Soundness", "Strength", "No unsound property"});
  md << md_rule(8);
  for (const auto& r : doc["tables"]["property"]) {
    md << md_row({r["library"], r["target"], r["strategy"], std::to_string(r["tests"].get<int>()),
                  fmt(r["property_validity"]), fmt(r["property_soundness"]), fmt(r["property_strength"]),
                  std::to_string(r["issue_free_unsound"].get<int>())});
  }
  if (!doc["tables"]["mitigation"].empty()) {
    md << "\n## Mitigation deltas\n\n";
    std::vector<std::string> head{"Library", "Target", "Strategy"};
    for (const auto& n : metric_names()) head.push_back(n);
    md << md_row(head) << md_rule(head.size());
    for (const auto& r : doc["tables"]["mitigation"]) {
      std::vector<std::string> row{r["library"], r["target"], r["strategy"]};
      for (const auto& n : metric_names()) row.push_back(fmt_delta(r["deltas"].value(n, json(nullptr))));
      md << md_row(row);
    }
  }
  bool any_failed = false;
  for (const auto& c : doc["cells"]) any_failed |= c["status"] != "ok";
  if (any_failed) {
    md << "\n## Failed cells\n\n";
    for (const auto& c : doc["cells"]) {
      if (c["status"] != "ok") md << "- " << cell_label(c) << ": " << c["failure"].get<std::string>() << "\n";
    }
  }
  return md.str();
}

}  // namespace

json to_json(const CampaignReport& r) {
  json cells = json::array();
  json gen_table = json::array(), prop_table = json::array(), mit_table = json::array();
  for (const auto& c : r.cells) {
    json sessions = json::array();
    for (const auto& s : c.sessions) sessions.push_back(session_json(s));
    json cj{{"library", c.library},
            {"target", c.target},
            {"strategy", to_string(c.strategy)},
            {"status", c.ok ? "ok" : "failed"},
            {"failure", c.failure},
            {"sessions", sessions},
            {"deltas", c.deltas}};
    cj["metrics"] = c.metrics ? json(*c.metrics) : json(nullptr);
    cj["post_metrics"] = c.post_metrics ? json(*c.post_metrics) : json(nullptr);
    cells.push_back(cj);
    if (!c.ok) continue;
    json key{{"library", c.library}, {"target", c.target}, {"strategy", to_string(c.strategy)},
             {"tests", c.metrics->n_scorecards}};
    json g = key, p = key;
    for (const auto& n : {"generator_validity", "statement_coverage", "branch_coverage"}) g[n] = mean_or_null(c.metrics, n);
    g["issue_free_generator"] = c.metrics->issue_free.at(std::string(to_string(IssueKind::InvalidGenerator)));
    for (const auto& n : {"property_validity", "property_soundness", "property_strength"}) p[n] = mean_or_null(c.metrics, n);
    p["issue_free_unsound"] = c.metrics->issue_free.at(std::string(to_string(IssueKind::UnsoundProperty)));
    gen_table.push_back(g);
    prop_table.push_back(p);
    if (c.post_metrics) {
      json m = key;
      m["deltas"] = c.deltas;
      mit_table.push_back(m);
    }
  }
  return json{{"schema", kCampaignSchema},
              {"provenance", r.provenance},
              {"cells", cells},
              {"tables", {{"generator", gen_table}, {"property", prop_table}, {"mitigation", mit_table}}},
              {"total_runs", r.total_runs}};
}

std::string render_report(const json& doc, ReportFormat format) {
  if (doc.value("schema", std::string{}) != kCampaignSchema) {
    throw Error(ErrorCode::InvalidArgument, "not a campaign report document");
  }
  switch (format) {
    case ReportFormat::JsonDoc: return doc.dump(2) + "\n";
    case ReportFormat::TextTable: return render_text(doc);
    case ReportFormat::Markdown: return render_markdown(doc);
  }
  return {};
}

std::string render_report(const CampaignReport& report, ReportFormat format) {
  return render_report(to_json(report), format);
}

CampaignReport run_campaign(const CampaignConfig& cfg, const CampaignContext& ctx) {
  cfg.validate();
  if (!ctx.runners) throw Error(ErrorCode::ConfigInvalid, "campaign needs a runner");
  if (fs::exists(cfg.output_dir / "campaign.json") || fs::exists(cfg.output_dir / "sessions")) {
    throw Error(ErrorCode::ConfigInvalid, "output directory " + cfg.output_dir.string() + " already holds a campaign");
  }
  fs::create_directories(cfg.output_dir);
  SessionContext sctx{cfg.output_dir, ctx.templates, ctx.provider_factory, ctx.runners};
  SessionManager mgr(sctx);

  CampaignReport report;
  for (const auto& t : cfg.targets) {
    for (auto s : cfg.strategies) {
      CampaignCell cell;
      cell.library = t.library;
      cell.target = t.qualname;
      cell.strategy = s;
      report.cells.push_back(std::move(cell));
    }
  }
  std::vector<const TargetApi*> cell_target;
  for (const auto& t : cfg.targets) {
    for (std::size_t i = 0; i < cfg.strategies.size(); ++i) cell_target.push_back(&t);
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < report.cells.size(); i = next++) {
      auto& cell = report.cells[i];
      for (int p = 1; p <= cfg.promptings_per_target; ++p) {
        cell.sessions.push_back(run_one(mgr, cfg, *cell_target[i], cell.strategy, p));
      }
    }
  };
  std::vector<std::thread> pool;
  const auto n_workers = std::min<std::size_t>(cfg.parallelism, report.cells.size());
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // single-threaded assembly after the join
  for (auto& cell : report.cells) {
    std::vector<QualityScorecard> pre, post;
    for (const auto& s : cell.sessions) {
      if (s.scorecard) pre.push_back(*s.scorecard);
      if (s.post_scorecard) post.push_back(*s.post_scorecard);
    }
    if (pre.empty()) {
      cell.ok = false;
      const auto& first = cell.sessions.front();
      cell.failure = first.error_type + ": " + first.error_message;
      continue;
    }
    cell.ok = true;
    cell.metrics = aggregate(pre);
    report.total_runs += cell.metrics->total_runs;
    if (!post.empty()) {
      cell.post_metrics = aggregate(post);
      for (const auto& n : metric_names()) {
        const auto& a = cell.metrics->metrics.at(n);
        const auto& b = cell.post_metrics->metrics.at(n);
        if (a.count && b.count) cell.deltas[n] = b.mean - a.mean;
      }
    }
  }

  json seeds = json::array();
  for (int p = 1; p <= cfg.promptings_per_target; ++p) seeds.push_back(campaign_seed(cfg.plan.seed, p));
  json strategies = json::array();
  for (auto s : cfg.strategies) strategies.push_back(to_string(s));
  json provider{{"kind", cfg.provider.kind == ProviderKind::Replay ? "replay" : "http"}};
  provider["model_name"] = cfg.provider.model_name ? json(*cfg.provider.model_name) : json(nullptr);
  if (cfg.provider.kind == ProviderKind::Replay) {
    provider["replay_mode"] = cfg.provider.replay_mode == ReplayKeyMode::SessionOrdinal ? "ordinal" : "hash";
  }
  std::set<std::string> libraries;
  for (const auto& t : cfg.targets) libraries.insert(t.library);
  report.provenance = {{"provider", provider},
                       {"seeds", seeds},
                       {"plan", cfg.plan},
                       {"libraries", libraries},
                       {"scale",
                        {{"targets", cfg.targets.size()},
                         {"strategies", strategies},
                         {"promptings_per_target", cfg.promptings_per_target},
                         {"n_runs", cfg.plan.n_runs},
                         {"auto_mitigate", cfg.auto_mitigate}}}};

  json doc = to_json(report);
  write_file_atomic(cfg.output_dir / "campaign.json", doc.dump(2) + "\n");
  write_file_atomic(cfg.output_dir / "campaign.md", render_report(doc, ReportFormat::Markdown));
  return report;
}

}  // namespace pbtw
